"""
EIT slow-light propagation in the retarded frame τ = t − z/c.

    ∂A/∂z = i·n(z)·g_P/(2c)·P
    ∂P/∂t = −(Γ/2 − iΔ)·P + i(g_P/2)·A + i(Ω_C/2)·S
    ∂S/∂t = i(Ω_C/2)·P + (i·δ(z, t) − γ_s)·S

with P = g_P·ρ_ge and S = g_P·ρ_gh. The field equation has no homogeneous
term, so the spatial march reduces to Simpson quadrature of the polarization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from app.core.exceptions import BlowUpError, ScheduleError, SolverError, StepControlError
from app.core.grid import simpson_weights
from app.domain.models import (
    ComplexTrace,
    DensityProfile,
    EitState,
    FieldRecord,
    PhysicalParams,
    Segment,
    SegmentMode,
    SegmentRecord,
    SimGrid,
)
from app.solvers.integrator import LinearMarch, source_midpoints
from app.solvers.timeline import check_tiling, input_samples

logger = logging.getLogger(__name__)

ACCURACY_LIMIT = 0.1
STABILITY_LIMIT = 2.5
COHERENCE_LIMIT = 10.0


@dataclass
class EitRun:
    exit_trace: ComplexTrace
    final_state: EitState
    segments: list[SegmentRecord]
    field_record: Optional[FieldRecord] = None
    snapshots: dict = field(default_factory=dict)


def group_velocity(params: PhysicalParams, omega_c: float) -> float:
    """v_g = c·Ω_C² / (Ω_C² + g_P²); zero for stopped light, c in vacuum."""
    if omega_c < 0:
        raise ValueError("omega_c must be non-negative")
    g2 = params.g_p ** 2
    if g2 == 0.0:
        return params.c_light
    return params.c_light * omega_c ** 2 / (omega_c ** 2 + g2)


def slow_light_delay(params: PhysicalParams, omega_c: float) -> float:
    """Extra transit time L/v_g − L/c through the medium."""
    v = group_velocity(params, omega_c)
    if v == 0.0:
        return math.inf
    return params.length / v - params.transit_time


def excitation_number(state: EitState, density: DensityProfile, params: PhysicalParams) -> float:
    """(1/c)·∫(|A|² + n(z)·(|P|² + |S|²)) dz; non-increasing without input."""
    nz = len(state.s)
    w = simpson_weights(nz, params.length / (nz - 1))
    matter = density.samples * (np.abs(state.p) ** 2 + np.abs(state.s) ** 2)
    return float(np.sum(w * (np.abs(state.a) ** 2 + matter)) / params.c_light)


def step_margins(segment: Segment, params: PhysicalParams, density: DensityProfile,
                 dt: float) -> tuple[float, float]:
    """(accuracy, stability) margins of one EIT segment."""
    detuning = abs(segment.gradient_sign * segment.beta) * 0.5 * params.length + abs(params.omega0)
    accuracy = dt * max(0.5 * params.gamma + abs(segment.delta), 0.5 * segment.ramp.maximum, detuning)
    stability = dt * (0.5 * params.gamma + params.gamma * params.od * density.peak / 4.0)
    return accuracy, stability


def _check_step(segment: Segment, params: PhysicalParams, density: DensityProfile, dt: float) -> None:
    accuracy, stability = step_margins(segment, params, density, dt)
    logger.debug("Segment %r margins: accuracy %.4f, stability %.4f", segment.label, accuracy, stability)
    if accuracy > ACCURACY_LIMIT:
        raise StepControlError(
            f"segment {segment.label!r}: dt·rate = {accuracy:.3g} exceeds {ACCURACY_LIMIT}; "
            f"use dt ≤ {dt * ACCURACY_LIMIT / accuracy:.3g} s"
        )
    if stability > STABILITY_LIMIT:
        raise StepControlError(
            f"segment {segment.label!r}: collective absorption rate × dt = {stability:.3g} "
            f"exceeds {STABILITY_LIMIT}; use dt ≤ {dt * STABILITY_LIMIT / stability:.3g} s"
        )


def _check_state(p: np.ndarray, s: np.ndarray, g_p: float, t: float) -> None:
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(s))):
        raise BlowUpError(f"EIT fields became non-finite at t = {t * 1e6:.4f} µs")
    if g_p > 0:
        peak = float(np.max(np.abs(s))) / g_p
        if peak > COHERENCE_LIMIT:
            raise BlowUpError(
                f"|S|/g_P reached {peak:.3g} at t = {t * 1e6:.4f} µs; the time step is unstable"
            )


def eit_run(initial: EitState, input_trace: Optional[ComplexTrace], segments: Sequence[Segment],
            grid: SimGrid, density: DensityProfile, params: PhysicalParams, *,
            previous_sign: float = 0.0,
            record_every: Optional[int] = None) -> EitRun:
    """Advance (P, S) through EIT segments, marching A at every RK4 stage.

    The exit trace holds A(τ, z=L) shifted by L/c. A ``stopped`` snapshot of S
    is kept at the first node where the coupling reaches zero after being on.
    """
    if len(initial.s) != grid.nz:
        raise ScheduleError(f"state has {len(initial.s)} points, grid has {grid.nz}")
    for seg in segments:
        if seg.mode != SegmentMode.EIT:
            raise ScheduleError(f"segment {seg.label!r}: only EIT segments run in the EIT solver")
    steps = check_tiling(segments, grid)
    for seg in segments:
        _check_step(seg, params, density, grid.dt)

    g_p = params.g_p
    dt = grid.dt
    z = grid.z
    kf = 1j * g_p / (2.0 * params.c_light)
    src_nodes = kf * density.samples
    src_mid = kf * density.mid_samples
    march = LinearMarch.free(grid.nz, grid.dz)
    u_nodes, u_mid = input_samples(input_trace, grid)

    p = np.array(initial.p, dtype=complex)
    s = np.array(initial.s, dtype=complex)
    a_peak, p_peak = initial.a_peak, initial.p_peak
    exit_values = np.zeros(grid.nt, dtype=complex)
    record = FieldRecord() if record_every else None
    records: list[SegmentRecord] = []
    snapshots: dict = {}
    was_on = False
    sign = previous_sign
    index = 0

    def signal(pp: np.ndarray, u: complex) -> np.ndarray:
        return march.solve(u, src_nodes * pp, source_midpoints(src_mid, pp))

    for seg, n in zip(segments, steps):
        t_start = grid.t_at(index)
        logger.info("EIT segment %r: %.3f µs, %d steps", seg.label, seg.duration * 1e6, n)
        gate = 1.0 if seg.input_open else 0.0
        decay = 0.5 * params.gamma - 1j * seg.delta

        def rhs(pp: np.ndarray, ss: np.ndarray, t_local: float, u: complex):
            omega = seg.ramp.value(t_local)
            detuning = seg.sign_at(t_local, sign) * seg.beta * (z - 0.5 * params.length) + params.omega0
            a_field = signal(pp, u * gate)
            dp = -decay * pp + 0.5j * g_p * a_field + 0.5j * omega * ss
            ds = 0.5j * omega * pp + (1j * detuning - params.gamma_s) * ss
            return dp, ds, a_field

        for k in range(n):
            t_loc = k * dt
            if seg.ramp.value(t_loc) > 0:
                was_on = True
            elif was_on and "stopped" not in snapshots:
                snapshots["stopped"] = np.abs(s)
                snapshots["stopped_t"] = grid.t_at(index)
            p1, s1, a_field = rhs(p, s, t_loc, u_nodes[index])
            exit_values[index] = a_field[-1]
            a_peak = max(a_peak, float(np.max(np.abs(a_field))))
            p_peak = max(p_peak, float(np.max(np.abs(p))))
            if record is not None and index % record_every == 0:
                record.append(grid.t_at(index), a_field, s / g_p if g_p else s)
            p2, s2, _ = rhs(p + 0.5 * dt * p1, s + 0.5 * dt * s1, t_loc + 0.5 * dt, u_mid[index])
            p3, s3, _ = rhs(p + 0.5 * dt * p2, s + 0.5 * dt * s2, t_loc + 0.5 * dt, u_mid[index])
            p4, s4, _ = rhs(p + dt * p3, s + dt * s3, t_loc + dt, u_nodes[index + 1])
            p = p + dt / 6 * (p1 + 2 * p2 + 2 * p3 + p4)
            s = s + dt / 6 * (s1 + 2 * s2 + 2 * s3 + s4)
            index += 1
            _check_state(p, s, g_p, grid.t_at(index))
        sign = seg.gradient_sign
        records.append(SegmentRecord(seg.label, seg.mode.value, t_start, grid.t_at(index), n))

    last = segments[-1]
    if was_on and last.ramp.value(last.duration) == 0 and "stopped" not in snapshots:
        snapshots["stopped"] = np.abs(s)
        snapshots["stopped_t"] = grid.t_at(index)
    a_field = signal(p, u_nodes[-1] if last.input_open else 0j)
    exit_values[-1] = a_field[-1]
    a_peak = max(a_peak, float(np.max(np.abs(a_field))))
    p_peak = max(p_peak, float(np.max(np.abs(p))))
    if record is not None and index % record_every == 0:
        record.append(grid.t_at(index), a_field, s / g_p if g_p else s)

    return EitRun(
        exit_trace=ComplexTrace(exit_values, dt, grid.t0 + params.transit_time),
        final_state=EitState(a_field, p, s, grid.t_at(index), a_peak, p_peak),
        segments=records,
        field_record=record,
        snapshots=snapshots,
    )


def stopped_spinwave_profile(run: EitRun) -> np.ndarray:
    """|S(z)| at the instant the coupling first reached zero."""
    if "stopped" not in run.snapshots:
        raise SolverError("the coupling never reached zero during the run")
    return run.snapshots["stopped"]
