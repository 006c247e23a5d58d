"""
GEM propagation: the signal marches in z at every instant while the ground-state
coherence evolves in t at every position (cross-propagation).

    ∂A/∂z = −i·n(z)·OD·Γ / (L·(4Δ + 2iΓ)) · (A + Ω_C·ρ)
    ∂ρ/∂t = −i·Ω_C·(A + Ω_C·ρ) / (4Δ + 2iΓ) + (i·δ(z, t) − γ_s)·ρ

Time stepping is RK4 with the spatial march re-evaluated at every stage, so
the coupled (t, z) system is advanced as one linear ODE in time. Segments with
the coupling off are advanced with the exact phase factor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.core.exceptions import BlowUpError, ScheduleError, StepControlError
from app.domain.models import (
    ComplexTrace,
    DensityProfile,
    FieldRecord,
    GemDrive,
    GemState,
    PhysicalParams,
    Segment,
    SegmentMode,
    SegmentRecord,
    SimGrid,
)
from app.solvers.integrator import LinearMarch, source_midpoints
from app.solvers.timeline import check_tiling, input_samples

logger = logging.getLogger(__name__)

STEP_LIMIT = 0.1
COHERENCE_LIMIT = 10.0
FIELD_GROWTH_LIMIT = 1e6


@dataclass
class GemRun:
    exit_trace: ComplexTrace
    final_state: GemState
    segments: list[SegmentRecord]
    final_field: np.ndarray
    field_record: Optional[FieldRecord] = None


def spatial_coefficient(drive: GemDrive, density: DensityProfile,
                        params: PhysicalParams) -> tuple[np.ndarray, np.ndarray]:
    """a(z) of the field equation at grid nodes and cell midpoints."""
    k = -1j * params.od * params.gamma / (params.length * drive.raman_denominator(params.gamma))
    return k * density.samples, k * density.mid_samples


def _check_field(field: np.ndarray, scale: float) -> None:
    if not np.all(np.isfinite(field)):
        raise BlowUpError("signal field became non-finite during the spatial march")
    if scale > 0 and np.max(np.abs(field)) > FIELD_GROWTH_LIMIT * scale:
        raise BlowUpError(
            f"signal field grew to {np.max(np.abs(field)):.3g}, more than "
            f"{FIELD_GROWTH_LIMIT:g}× its sources ({scale:.3g}); reduce dz"
        )


def _check_coherence(rho: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(rho)):
        raise BlowUpError(f"coherence became non-finite at t = {t * 1e6:.4f} µs")
    peak = float(np.max(np.abs(rho))) if rho.size else 0.0
    if peak > COHERENCE_LIMIT:
        raise BlowUpError(
            f"|ρ_gh| reached {peak:.3g} at t = {t * 1e6:.4f} µs; the time step is unstable"
        )


def spatial_march(rho_row: np.ndarray, drive: GemDrive, density: DensityProfile,
                  params: PhysicalParams, march: Optional[LinearMarch] = None) -> np.ndarray:
    """Signal A(z) over the grid for a frozen coherence row.

    ``march`` may carry precomputed cell factors for ``drive``'s detuning.
    """
    rho_row = np.asarray(rho_row, dtype=complex)
    a_nodes, a_mid = spatial_coefficient(drive, density, params)
    if march is None:
        march = LinearMarch.build(a_nodes, a_mid, params.length / (len(rho_row) - 1))
    omega = drive.omega_c
    field = march.solve(drive.input, a_nodes * omega * rho_row,
                        source_midpoints(a_mid * omega, rho_row))
    scale = max(abs(drive.input), omega * float(np.max(np.abs(rho_row), initial=0.0)))
    _check_field(field, scale)
    return field


def coherence_advance(state: GemState, field: np.ndarray, drive: GemDrive,
                      params: PhysicalParams, dt: float, z: np.ndarray) -> GemState:
    """Advance ρ_gh by dt with the signal held fixed.

    With the coupling off the update is the exact factor exp((iδ(z) − γ_s)·dt);
    otherwise one classical RK4 step of the local linear equation.
    """
    rho = state.rho_gh
    if len(z) != len(rho):
        raise ScheduleError(f"coherence has {len(rho)} points, z has {len(z)}")
    detuning = drive.detuning_profile(z, params.length, params.gamma)
    local = 1j * detuning - params.gamma_s
    if drive.omega_c == 0.0:
        new = rho * np.exp(local * dt)
    else:
        d = drive.raman_denominator(params.gamma)
        rate = local - 1j * drive.omega_c ** 2 / d
        source = -1j * drive.omega_c * np.asarray(field, dtype=complex) / d

        def rhs(r: np.ndarray) -> np.ndarray:
            return rate * r + source

        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        new = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    _check_coherence(new, state.t_now + dt)
    return GemState(new, state.t_now + dt)


def step_margin(segment: Segment, params: PhysicalParams, dt: float,
                input_peak: float = 0.0) -> float:
    """dt·(fastest local rate) for one GEM or dark segment."""
    omega = segment.ramp.maximum
    d = abs(4.0 * segment.delta + 2j * params.gamma)
    shift = omega ** 2 * 4.0 * abs(segment.delta) / d ** 2 if segment.light_shift_compensation else 0.0
    detuning = abs(segment.beta) * 0.5 * params.length + abs(params.omega0) + shift
    return dt * max(detuning, omega ** 2 / d, omega * input_peak / d)


def _check_step(segment: Segment, params: PhysicalParams, dt: float, input_peak: float) -> None:
    if segment.mode == SegmentMode.DARK:
        return
    margin = step_margin(segment, params, dt, input_peak)
    logger.debug("Segment %r step margin %.4f", segment.label, margin)
    if margin > STEP_LIMIT:
        raise StepControlError(
            f"segment {segment.label!r}: dt·rate = {margin:.3g} exceeds {STEP_LIMIT}; "
            f"use dt ≤ {dt * STEP_LIMIT / margin:.3g} s"
        )


def gem_run(initial: GemState, segments: Sequence[Segment], grid: SimGrid,
            density: DensityProfile, params: PhysicalParams,
            input_trace: Optional[ComplexTrace] = None, *,
            previous_sign: float = 0.0,
            record_every: Optional[int] = None) -> GemRun:
    """Run GEM and dark segments back to back on ``grid``.

    Light segments take RK4 steps whose every stage re-runs the spatial march;
    dark segments advance ρ alone with ``coherence_advance``. The exit trace
    holds A(t, z=L) at every time node, shifted by the vacuum transit L/c. ``previous_sign`` is the gradient sign before the first
    segment, used when that segment ramps the gradient.
    """
    if len(initial.rho_gh) != grid.nz:
        raise ScheduleError(f"state has {len(initial.rho_gh)} points, grid has {grid.nz}")
    for seg in segments:
        if seg.mode == SegmentMode.EIT:
            raise ScheduleError(f"segment {seg.label!r}: EIT segments need the EIT solver")
    steps = check_tiling(segments, grid)
    u_nodes, u_mid = input_samples(input_trace, grid)
    input_peak = float(np.max(np.abs(u_nodes), initial=0.0))
    for seg in segments:
        _check_step(seg, params, grid.dt, input_peak if seg.input_open else 0.0)

    dt = grid.dt
    z = grid.z
    rho = np.array(initial.rho_gh, dtype=complex)
    exit_values = np.zeros(grid.nt, dtype=complex)
    record = FieldRecord() if record_every else None
    records: list[SegmentRecord] = []
    sign = previous_sign
    index = 0
    field = np.zeros(grid.nz, dtype=complex)

    for seg, n in zip(segments, steps):
        t_start = grid.t_at(index)
        logger.info("GEM segment %r (%s): %.3f µs, %d steps", seg.label, seg.mode.value,
                    seg.duration * 1e6, n)
        d = seg.delta
        frozen = seg.gem_drive_at(0.0, sign, params.omega0)
        a_nodes, a_mid = spatial_coefficient(frozen, density, params)
        march = LinearMarch.build(a_nodes, a_mid, grid.dz)
        gate = 1.0 if seg.input_open else 0.0

        def drive(t_local: float, u: complex) -> GemDrive:
            return seg.gem_drive_at(t_local, sign, params.omega0, u * gate)

        if seg.mode == SegmentMode.DARK:
            index = _dark_segment(seg, n, index, rho, sign, grid, params, density, march,
                                  u_nodes, gate, exit_values, record, record_every)
            sign = seg.gradient_sign
            records.append(SegmentRecord(seg.label, seg.mode.value, t_start, grid.t_at(index), n))
            continue

        denom = 4.0 * d + 2j * params.gamma

        def rhs(r: np.ndarray, drv: GemDrive) -> tuple[np.ndarray, np.ndarray]:
            a_field = spatial_march(r, drv, density, params, march)
            detuning = drv.detuning_profile(z, params.length, params.gamma)
            dr = -1j * drv.omega_c * (a_field + drv.omega_c * r) / denom \
                + (1j * detuning - params.gamma_s) * r
            return dr, a_field

        for k in range(n):
            t_loc = k * dt
            d0 = drive(t_loc, u_nodes[index])
            dm = drive(t_loc + 0.5 * dt, u_mid[index])
            d1 = drive(t_loc + dt, u_nodes[index + 1])
            k1, field = rhs(rho, d0)
            exit_values[index] = field[-1]
            if record is not None and index % record_every == 0:
                record.append(grid.t_at(index), field, rho)
            k2, _ = rhs(rho + 0.5 * dt * k1, dm)
            k3, _ = rhs(rho + 0.5 * dt * k2, dm)
            k4, _ = rhs(rho + dt * k3, d1)
            rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            index += 1
            _check_coherence(rho, grid.t_at(index))
        sign = seg.gradient_sign
        records.append(SegmentRecord(seg.label, seg.mode.value, t_start, grid.t_at(index), n))

    last = segments[-1]
    final_drive = last.gem_drive_at(last.duration, sign, params.omega0,
                                    u_nodes[-1] if last.input_open else 0j)
    field = spatial_march(rho, final_drive, density, params)
    exit_values[-1] = field[-1]
    if record is not None and index % record_every == 0:
        record.append(grid.t_at(index), field, rho)

    return GemRun(
        exit_trace=ComplexTrace(exit_values, dt, grid.t0 + params.transit_time),
        final_state=GemState(rho, grid.t_at(index)),
        segments=records,
        final_field=field,
        field_record=record,
    )


def _dark_segment(seg: Segment, n: int, index: int, rho: np.ndarray, previous_sign: float,
                  grid: SimGrid, params: PhysicalParams, density: DensityProfile,
                  march: LinearMarch, u_nodes: np.ndarray, gate: float,
                  exit_values: np.ndarray, record: Optional[FieldRecord],
                  record_every: Optional[int]) -> int:
    """Coupling-off storage; updates ``rho`` and ``exit_values`` in place."""
    dt = grid.dt
    zero = np.zeros(grid.nz, dtype=complex)
    state = GemState(rho.copy(), grid.t_at(index))
    single_step = record is None and seg.gradient_ramp == 0 and gate == 0.0
    if single_step:
        drv = seg.gem_drive_at(0.0, previous_sign, params.omega0)
        state = coherence_advance(state, zero, drv, params, n * dt, grid.z)
        exit_values[index:index + n] = 0.0
        rho[:] = state.rho_gh
        return index + n
    for k in range(n):
        field = zero
        if gate:
            field = march.solve(u_nodes[index] * gate, zero, zero[:-1])
        exit_values[index] = field[-1]
        if record is not None and index % record_every == 0:
            record.append(grid.t_at(index), field, state.rho_gh)
        drv = seg.gem_drive_at((k + 0.5) * dt, previous_sign, params.omega0)
        state = coherence_advance(state, zero, drv, params, dt, grid.z)
        index += 1
    rho[:] = state.rho_gh
    return index
