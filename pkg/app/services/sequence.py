"""
Protocol composition: schedule builders, coherence hand-offs and the segment
runner that chains the GEM and EIT solvers.

Timing reference: ``t_ref`` is the input's energy centroid. The gradient flips
at ``t_flip = t_ref + T1``; a component that arrived at ``t_a`` rephases at
``2·t_flip − t_a``. The EIT stop ramp is anchored to the write window, not to
the pulse, so a later arrival is stored closer to the entrance.

Storage runs at ``store_sign·β`` and every read at the opposite sign.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from app.core.exceptions import HandoffError, ScheduleError
from app.core.grid import flat_density, make_grid, sample_density
from app.domain.models import (
    ComplexTrace,
    CouplingRamp,
    DensityProfile,
    EitState,
    FieldRecord,
    GemState,
    PhysicalParams,
    ProtocolSchedule,
    RampShape,
    RunResult,
    Segment,
    SegmentMode,
    SegmentRecord,
    SimGrid,
)
from app.services import analysis
from app.solvers.eit_solver import eit_run, slow_light_delay
from app.solvers.gem_solver import gem_run

logger = logging.getLogger(__name__)

PROTOCOLS = ("gem_eit", "eit_gem", "gem_only", "eit_only")

HANDOFF_RESIDUAL = 1e-6
UNWIND_TOLERANCE = 0.01


@dataclass(frozen=True)
class ProtocolConfig:
    """Resolved (SI) inputs of one protocol run."""
    params: PhysicalParams
    input_trace: ComplexTrace
    nz: int = 201
    density_order: int = 4
    density_width_fraction: Optional[float] = 0.8   # None → flat cloud
    t1: float = 10e-6
    t2: float = 10e-6
    delta_eit: float = 0.0
    eit_read_ramp: float = 0.5e-6
    eit_read_duration: float = 10e-6
    eit_write_omega_c: Optional[float] = None        # None → omega_c_max
    eit_stop_ramp: float = 1.0e-6
    eit_stop_delay: Optional[float] = None           # None → window centre mid-cloud
    eit_settle: float = 1.0e-6
    eit_hold: float = 5.0e-6
    gem_read_lead: float = 4.0e-6
    gem_read_margin: float = 2.0e-6
    gradient_ramp: float = 0.0
    light_shift_compensation: bool = True
    store_sign: float = 1.0
    record_every: Optional[int] = None

    def __post_init__(self) -> None:
        if self.store_sign not in (1.0, -1.0):
            raise ScheduleError(f"store_sign must be +1 or -1, got {self.store_sign}")

    @property
    def dt(self) -> float:
        return self.input_trace.dt

    @property
    def write_end(self) -> float:
        return self.input_trace.t0 + (len(self.input_trace) - 1) * self.dt

    @property
    def window_center(self) -> float:
        return 0.5 * (self.input_trace.t0 + self.write_end)

    @property
    def write_omega_c(self) -> float:
        if self.eit_write_omega_c is None:
            return self.params.omega_c_max
        return self.eit_write_omega_c


# ── Hand-offs ────────────────────────────────────────────────────────────

def handoff_gem_to_eit(gem: GemState, params: PhysicalParams) -> EitState:
    """S = g_P·ρ_gh with no light and no polarization."""
    zero = np.zeros_like(gem.rho_gh)
    return EitState(zero, zero.copy(), params.g_p * gem.rho_gh, gem.t_now)


def handoff_eit_to_gem(eit: EitState, params: PhysicalParams) -> GemState:
    """ρ_gh = S/g_P; refuses while light or polarization is still present."""
    a_max = float(np.max(np.abs(eit.a), initial=0.0))
    p_max = float(np.max(np.abs(eit.p), initial=0.0))
    if a_max > HANDOFF_RESIDUAL * eit.a_peak or p_max > HANDOFF_RESIDUAL * eit.p_peak:
        raise HandoffError(
            f"hand-off at t = {eit.t_now * 1e6:.4f} µs would discard live excitation: "
            f"|A| = {a_max:.3g} (peak {eit.a_peak:.3g}), |P| = {p_max:.3g} (peak {eit.p_peak:.3g})"
        )
    if params.g_p == 0.0:
        raise HandoffError("no spin wave can be stored at zero optical depth")
    return GemState(eit.s / params.g_p, eit.t_now)


# ── Schedule builders ────────────────────────────────────────────────────

def _on_lattice(value: float, dt: float) -> float:
    return round(value / dt) * dt


def _segments(dt: float, *parts: tuple[float, dict]) -> tuple[Segment, ...]:
    """Segments with durations snapped to dt; zero-length parts are dropped."""
    out = []
    for duration, kwargs in parts:
        duration = _on_lattice(duration, dt)
        if duration > 0:
            out.append(Segment(duration=duration, **kwargs))
    return tuple(out)


def reference_time(trace: ComplexTrace) -> float:
    """Energy centroid of the input envelope."""
    weight = np.abs(trace.values) ** 2
    total = float(np.sum(weight))
    if total == 0.0:
        return trace.t0
    return float(np.sum(trace.t * weight) / total)


def _flip_time(cfg: ProtocolConfig, t_ref: float) -> float:
    t1 = max(cfg.t1, cfg.write_end - t_ref)
    if t1 > cfg.t1:
        logger.info("Storage time extended to %.3f µs to cover the write window", t1 * 1e6)
    return _on_lattice(t_ref + t1, cfg.dt)


def _gem_write(cfg: ProtocolConfig) -> tuple[float, dict]:
    p = cfg.params
    return (cfg.write_end, dict(
        mode=SegmentMode.GEM, gradient_sign=cfg.store_sign, beta=p.beta,
        ramp=CouplingRamp.constant(p.omega_c_max), delta=p.delta, input_open=True,
        label="gem_write", light_shift_compensation=cfg.light_shift_compensation,
    ))


def _dark(duration: float, sign: float, cfg: ProtocolConfig, label: str) -> tuple[float, dict]:
    return (duration, dict(
        mode=SegmentMode.DARK, gradient_sign=sign, beta=cfg.params.beta,
        delta=cfg.params.delta, label=label, gradient_ramp=cfg.gradient_ramp,
    ))


def _gem_read(duration: float, cfg: ProtocolConfig) -> tuple[float, dict]:
    p = cfg.params
    return (duration, dict(
        mode=SegmentMode.GEM, gradient_sign=-cfg.store_sign, beta=p.beta,
        ramp=CouplingRamp.constant(p.omega_c_max), delta=p.delta, label="gem_read",
        gradient_ramp=cfg.gradient_ramp, light_shift_compensation=cfg.light_shift_compensation,
    ))


def _eit_write(cfg: ProtocolConfig) -> tuple[float, dict]:
    """Constant write coupling, then the stop ramp.

    By default the ramp is centred on the moment light entering at the window
    centre reaches mid-cloud; the input itself does not move it.
    """
    omega = cfg.write_omega_c
    delay = cfg.eit_stop_delay
    if delay is None:
        delay = cfg.window_center + 0.5 * slow_light_delay(cfg.params, omega) - 0.5 * cfg.eit_stop_ramp
    delay = max(_on_lattice(delay, cfg.dt), 0.0)
    duration = max(cfg.write_end, delay + cfg.eit_stop_ramp)
    ramp = CouplingRamp(RampShape.TANH, omega, 0.0, cfg.eit_stop_ramp, delay)
    return (duration, dict(
        mode=SegmentMode.EIT, ramp=ramp, delta=cfg.delta_eit, input_open=True, label="eit_write",
    ))


def _eit_idle(duration: float, cfg: ProtocolConfig, label: str) -> tuple[float, dict]:
    return (duration, dict(mode=SegmentMode.EIT, delta=cfg.delta_eit, label=label))


def _eit_read(cfg: ProtocolConfig, omega: float, ramp_time: float) -> tuple[float, dict]:
    ramp = CouplingRamp(RampShape.TANH, 0.0, omega, ramp_time)
    return (cfg.eit_read_duration, dict(
        mode=SegmentMode.EIT, ramp=ramp, delta=cfg.delta_eit, label="eit_read",
    ))


def _check_unwind(stored: float, unwound: float, what: str) -> float:
    mismatch = abs(unwound - stored) / stored if stored > 0 else 0.0
    if mismatch > UNWIND_TOLERANCE:
        logger.warning("Gradient areas differ by %.1f%% (%s); the stored phase is not fully unwound",
                       100 * mismatch, what)
    return mismatch


def schedule_gem_only(cfg: ProtocolConfig) -> ProtocolSchedule:
    """GEM write, dark storage, gradient flip, mirror-timed read."""
    t_ref = reference_time(cfg.input_trace)
    t_flip = _flip_time(cfg, t_ref)
    w = cfg.write_end
    read_start = 2 * t_flip - w
    segments = _segments(
        cfg.dt,
        _gem_write(cfg),
        _dark(t_flip - w, cfg.store_sign, cfg, "store"),
        _dark(read_start - t_flip, -cfg.store_sign, cfg, "unwind"),
        _gem_read(w + cfg.gem_read_margin, cfg),
    )
    return ProtocolSchedule(segments, t_ref)


def schedule_gem_eit(cfg: ProtocolConfig) -> ProtocolSchedule:
    """GEM write, dark storage until the flip, reversed gradient for T2, EIT read at Δ = 0."""
    t_ref = reference_time(cfg.input_trace)
    t_flip = _flip_time(cfg, t_ref)
    w = cfg.write_end
    _check_unwind(t_flip - t_ref, cfg.t2, "GEM write / EIT read")
    segments = _segments(
        cfg.dt,
        _gem_write(cfg),
        _dark(t_flip - w, cfg.store_sign, cfg, "store"),
        _dark(cfg.t2, -cfg.store_sign, cfg, "unwind"),
        _eit_read(cfg, cfg.params.omega_c_max, cfg.eit_read_ramp),
    )
    return ProtocolSchedule(segments, t_ref)


def schedule_eit_gem(cfg: ProtocolConfig) -> ProtocolSchedule:
    """EIT write with stop ramp, settle, dark storage for T1, reversed gradient, GEM read around the rephasing."""
    t_ref = reference_time(cfg.input_trace)
    lead = min(cfg.gem_read_lead, cfg.t2)
    _check_unwind(cfg.t1, cfg.t2, "EIT write / GEM read")
    segments = _segments(
        cfg.dt,
        _eit_write(cfg),
        _eit_idle(cfg.eit_settle, cfg, "settle"),
        _dark(cfg.t1, cfg.store_sign, cfg, "store"),
        _dark(cfg.t2 - lead, -cfg.store_sign, cfg, "unwind"),
        _gem_read(2 * lead, cfg),
    )
    return ProtocolSchedule(segments, t_ref)


def schedule_eit_only(cfg: ProtocolConfig) -> ProtocolSchedule:
    """EIT store-and-release: stop ramp, hold, ramp back up."""
    t_ref = reference_time(cfg.input_trace)
    segments = _segments(
        cfg.dt,
        _eit_write(cfg),
        _eit_idle(cfg.eit_hold, cfg, "hold"),
        _eit_read(cfg, cfg.write_omega_c, cfg.eit_stop_ramp),
    )
    return ProtocolSchedule(segments, t_ref)


SCHEDULE_BUILDERS = {
    "gem_only": schedule_gem_only,
    "gem_eit": schedule_gem_eit,
    "eit_gem": schedule_eit_gem,
    "eit_only": schedule_eit_only,
}


def build_schedule(protocol: str, cfg: ProtocolConfig) -> ProtocolSchedule:
    try:
        builder = SCHEDULE_BUILDERS[protocol]
    except KeyError:
        raise ScheduleError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}") from None
    return builder(cfg)


# ── Runner ───────────────────────────────────────────────────────────────

def build_density(cfg: ProtocolConfig, grid: SimGrid) -> DensityProfile:
    if cfg.density_width_fraction is None:
        return flat_density(grid)
    return sample_density(cfg.density_order, cfg.density_width_fraction * cfg.params.length, grid)


@dataclass
class _Cursor:
    gem: Optional[GemState] = None
    eit: Optional[EitState] = None
    sign: float = 0.0
    t: float = 0.0
    exit_chunks: list[np.ndarray] = field(default_factory=list)
    records: list[SegmentRecord] = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    field_record: Optional[FieldRecord] = None


def _merge_record(total: FieldRecord, part: FieldRecord, dt: float) -> None:
    """Append a segment's rows; the shared boundary node is kept once."""
    skip = 1 if total.t and part.t and part.t[0] < total.t[-1] + 0.5 * dt else 0
    total.t.extend(part.t[skip:])
    total.field_rows.extend(part.field_rows[skip:])
    total.coherence_rows.extend(part.coherence_rows[skip:])


def run_schedule(protocol: str, schedule: ProtocolSchedule, cfg: ProtocolConfig) -> RunResult:
    """Execute every segment in order, switching solver and state at mode changes."""
    p = cfg.params
    dt = cfg.dt
    nz = cfg.nz
    cursor = _Cursor(gem=GemState.zeros(nz), t=0.0)
    if cfg.record_every:
        cursor.field_record = FieldRecord()
    density: Optional[DensityProfile] = None
    last = np.zeros(1, dtype=complex)

    for seg in schedule.segments:
        grid = make_grid(p, nz, seg.duration, dt, t0=cursor.t) if seg.duration > dt else \
            SimGrid(nz=nz, nt=2, dz=p.length / (nz - 1), dt=dt, t0=cursor.t)
        if density is None:
            density = build_density(cfg, grid)
        if seg.mode == SegmentMode.EIT:
            if cursor.eit is None:
                cursor.eit = handoff_gem_to_eit(cursor.gem, p)
                cursor.gem = None
            run = eit_run(cursor.eit, cfg.input_trace, (seg,), grid, density, p,
                          previous_sign=cursor.sign, record_every=cfg.record_every)
            cursor.eit = run.final_state
            snapshot = run.final_state.s / p.g_p if p.g_p else run.final_state.s
            for key, value in run.snapshots.items():
                cursor.snapshots.setdefault(key, value)
        else:
            if cursor.gem is None:
                cursor.gem = handoff_eit_to_gem(cursor.eit, p)
                cursor.eit = None
            run = gem_run(cursor.gem, (seg,), grid, density, p, cfg.input_trace,
                          previous_sign=cursor.sign, record_every=cfg.record_every)
            cursor.gem = run.final_state
            snapshot = run.final_state.rho_gh
        cursor.snapshots[seg.label] = np.array(snapshot)
        cursor.exit_chunks.append(run.exit_trace.values[:-1])
        last = run.exit_trace.values[-1:]
        cursor.records.extend(run.segments)
        if cursor.field_record is not None and run.field_record is not None:
            _merge_record(cursor.field_record, run.field_record, dt)
        cursor.sign = seg.gradient_sign
        cursor.t = grid.t_at(grid.nt - 1)

    exit_trace = ComplexTrace(np.concatenate(cursor.exit_chunks + [last]), dt, p.transit_time)
    final_state = cursor.gem if cursor.gem is not None else cursor.eit
    write = [r for r, s in zip(cursor.records, schedule.segments) if s.input_open]
    read = cursor.records[-1]
    result = RunResult(
        protocol=protocol,
        exit_trace=exit_trace,
        input_trace=cfg.input_trace,
        final_state=final_state,
        segments=cursor.records,
        write_window=(write[0].t_start, write[-1].t_end) if write else (0.0, 0.0),
        read_window=(read.t_start + p.transit_time, read.t_end + p.transit_time),
        field_record=cursor.field_record,
        snapshots=cursor.snapshots,
    )
    result.metadata = run_metadata(schedule, cfg, density)
    result.metrics = analysis.run_metrics(result)
    return result


def run_metadata(schedule: ProtocolSchedule, cfg: ProtocolConfig,
                 density: Optional[DensityProfile]) -> dict:
    p = cfg.params
    return {
        "t_reference_us": schedule.t_reference * 1e6,
        "memory_bandwidth_mhz": p.memory_bandwidth / (2 * np.pi * 1e6),
        "transit_time_s": p.transit_time,
        "g_p": p.g_p,
        "density_peak": density.peak if density is not None else 1.0,
        "segments": [
            {"label": s.label, "mode": s.mode.value, "duration_us": s.duration * 1e6,
             "gradient_sign": s.gradient_sign}
            for s in schedule.segments
        ],
    }


def run_protocol(protocol: str, cfg: ProtocolConfig) -> RunResult:
    schedule = build_schedule(protocol, cfg)
    logger.info("Running %s: %d segments, %.3f µs", protocol, len(schedule.segments),
                schedule.duration * 1e6)
    return run_schedule(protocol, schedule, cfg)


def run_gem_write_eit_read(cfg: ProtocolConfig) -> RunResult:
    """Frequency-to-time conversion: GEM storage, EIT slow-light read-out."""
    return run_protocol("gem_eit", cfg)


def run_eit_write_gem_read(cfg: ProtocolConfig) -> RunResult:
    """Time-to-frequency conversion: stopped light, GEM read-out."""
    return run_protocol("eit_gem", cfg)


def run_gem_only(cfg: ProtocolConfig) -> RunResult:
    return run_protocol("gem_only", cfg)


def run_eit_only(cfg: ProtocolConfig) -> RunResult:
    return run_protocol("eit_only", cfg)


def with_input(cfg: ProtocolConfig, trace: ComplexTrace) -> ProtocolConfig:
    """Same protocol settings for a different input envelope."""
    return replace(cfg, input_trace=trace)
