"""
Shared domain types for the memory simulator.

All quantities are SI with angular frequencies (rad/s); config documents use
MHz / µs / mm and are converted once in ``app.core.units``.
Arrays are complex128 unless stated otherwise. Types are frozen: solvers
return new instances instead of mutating their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

C_LIGHT = 299_792_458.0


# ── Physical parameters ──────────────────────────────────────────────────

@dataclass(frozen=True)
class PhysicalParams:
    """Atomic and optical constants of one Λ-type ensemble."""
    od: float
    gamma: float                    # excited-state decay, rad/s
    length: float                   # m
    beta: float                     # two-photon detuning per metre, rad/(s·m)
    delta: float                    # single-photon detuning, rad/s
    omega_c_max: float              # rad/s
    c_light: float = C_LIGHT
    omega0: float = 0.0             # two-photon resonance offset, rad/s
    gamma_s: float = 0.0            # ground-state dephasing, 1/s

    def __post_init__(self) -> None:
        values = (self.od, self.gamma, self.length, self.beta, self.delta,
                  self.omega_c_max, self.c_light, self.omega0, self.gamma_s)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("physical parameters must be finite")
        if self.od < 0:
            raise ValueError("od must be non-negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.length <= 0:
            raise ValueError("length must be positive")
        if self.omega_c_max < 0:
            raise ValueError("omega_c_max must be non-negative")
        if self.c_light <= 0:
            raise ValueError("c_light must be positive")
        if self.gamma_s < 0:
            raise ValueError("gamma_s must be non-negative")

    @property
    def g_p(self) -> float:
        """Collective coupling sqrt(c·Γ·OD/L), rad/s."""
        return math.sqrt(self.c_light * self.gamma * self.od / self.length)

    @property
    def memory_bandwidth(self) -> float:
        """Spectral span of the gradient, |β|·L, rad/s."""
        return abs(self.beta) * self.length

    @property
    def transit_time(self) -> float:
        """Vacuum transit L/c, the retarded-frame offset of exit traces."""
        return self.length / self.c_light


# ── Discretisation ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class SimGrid:
    """Uniform (t, z) grid; z spans [0, length]."""
    nz: int
    nt: int
    dz: float
    dt: float
    t0: float = 0.0

    @property
    def length(self) -> float:
        return self.dz * (self.nz - 1)

    @property
    def duration(self) -> float:
        return self.dt * (self.nt - 1)

    @property
    def z(self) -> np.ndarray:
        return np.arange(self.nz) * self.dz

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(self.nt) * self.dt

    def z_at(self, index: int) -> float:
        return index * self.dz

    def z_index(self, z: float) -> int:
        return int(round(z / self.dz))

    def t_at(self, index: int) -> float:
        return self.t0 + index * self.dt

    def t_index(self, t: float) -> int:
        return int(round((t - self.t0) / self.dt))


@dataclass(frozen=True)
class DensityProfile:
    """Normalised atomic density n(z) with (1/L)∫n dz = 1.

    ``mid_samples`` holds n at cell midpoints for the 4th-order spatial march.
    """
    order: int
    width: float
    samples: np.ndarray
    mid_samples: np.ndarray

    @property
    def peak(self) -> float:
        return float(np.max(self.samples))


@dataclass(frozen=True)
class ComplexTrace:
    """Complex amplitude sampled at t0 + k·dt."""
    values: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=complex)
        if not np.all(np.isfinite(values)):
            raise ValueError("trace contains NaN or Inf")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.values)) * self.dt

    @property
    def energy(self) -> float:
        """∫|A|² dt (rectangle rule)."""
        return float(np.sum(np.abs(self.values) ** 2) * self.dt)

    def window(self, t_start: float, t_end: float) -> ComplexTrace:
        """Samples with t_start ≤ t < t_end (half-sample tolerance)."""
        t = self.t
        mask = (t >= t_start - 0.5 * self.dt) & (t < t_end - 0.5 * self.dt)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return ComplexTrace(np.zeros(0, dtype=complex), self.dt, t_start)
        return ComplexTrace(self.values[idx], self.dt, float(t[idx[0]]))

    def scaled(self, factor: complex) -> ComplexTrace:
        return ComplexTrace(self.values * factor, self.dt, self.t0)


@dataclass(frozen=True)
class RealTrace:
    """Detector voltage sampled at t0 + k·dt."""
    values: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.values)) * self.dt


# ── Solver states ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GemState:
    """Ground-state coherence ρ_gh over z at time ``t_now``."""
    rho_gh: np.ndarray
    t_now: float = 0.0

    @classmethod
    def zeros(cls, nz: int, t_now: float = 0.0) -> GemState:
        return cls(np.zeros(nz, dtype=complex), t_now)


@dataclass(frozen=True)
class EitState:
    """Retarded-frame EIT fields over z: signal A, polarization P = g_P·ρ_ge,
    spin wave S = g_P·ρ_gh.

    ``a_peak`` / ``p_peak`` are running maxima of |A| and |P| over the run so
    far; hand-off to GEM compares the residual fields against them.
    """
    a: np.ndarray
    p: np.ndarray
    s: np.ndarray
    t_now: float = 0.0
    a_peak: float = 0.0
    p_peak: float = 0.0

    @classmethod
    def zeros(cls, nz: int, t_now: float = 0.0) -> EitState:
        zero = np.zeros(nz, dtype=complex)
        return cls(zero, zero.copy(), zero.copy(), t_now)


class RampShape(str, Enum):
    CONSTANT = "constant"
    LINEAR = "linear"
    TANH = "tanh"


_TANH_STEEPNESS = 3.0


@dataclass(frozen=True)
class CouplingRamp:
    """Coupling Rabi frequency envelope within one segment.

    Holds ``start`` for ``delay``, moves to ``end`` over ``duration`` with the
    given shape, then holds ``end``.
    """
    shape: RampShape = RampShape.CONSTANT
    start: float = 0.0
    end: float = 0.0
    duration: float = 0.0
    delay: float = 0.0

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < 0:
            raise ValueError("coupling values must be non-negative")
        if self.duration < 0 or self.delay < 0:
            raise ValueError("ramp duration and delay must be non-negative")

    @classmethod
    def constant(cls, value: float) -> CouplingRamp:
        return cls(RampShape.CONSTANT, value, value, 0.0)

    def value(self, t: float) -> float:
        """Rabi frequency at local time t (seconds from segment start)."""
        if self.shape == RampShape.CONSTANT:
            return self.start
        if t <= self.delay:
            return self.start
        if self.duration == 0.0 or t >= self.delay + self.duration:
            return self.end
        x = (t - self.delay) / self.duration
        if self.shape == RampShape.LINEAR:
            frac = x
        else:
            k = _TANH_STEEPNESS
            frac = (math.tanh(k * (2.0 * x - 1.0)) + math.tanh(k)) / (2.0 * math.tanh(k))
        return self.start + (self.end - self.start) * frac

    @property
    def maximum(self) -> float:
        return max(self.start, self.end)


@dataclass(frozen=True)
class GemDrive:
    """Instantaneous GEM controls."""
    omega_c: float
    delta: float
    gradient_sign: float
    beta: float
    input: complex = 0j
    omega0: float = 0.0
    light_shift_compensation: bool = True

    def __post_init__(self) -> None:
        if not -1.0 <= self.gradient_sign <= 1.0:
            raise ValueError("gradient_sign must lie in [-1, 1]")

    def raman_denominator(self, gamma: float) -> complex:
        """4Δ + 2iΓ."""
        return 4.0 * self.delta + 2j * gamma

    def light_shift(self, gamma: float) -> float:
        """AC-Stark shift of the two-photon resonance, rad/s."""
        d = self.raman_denominator(gamma)
        return self.omega_c ** 2 * 4.0 * self.delta / abs(d) ** 2

    def detuning_profile(self, z: np.ndarray, length: float, gamma: float) -> np.ndarray:
        """Effective two-photon detuning δ(z) seen by ρ_gh."""
        detuning = self.gradient_sign * self.beta * (z - 0.5 * length) + self.omega0
        if self.light_shift_compensation:
            detuning = detuning + self.light_shift(gamma)
        return detuning


# ── Protocol timeline ────────────────────────────────────────────────────

class SegmentMode(str, Enum):
    GEM = "gem"
    EIT = "eit"
    DARK = "dark"


@dataclass(frozen=True)
class Segment:
    """One piece of a protocol timeline.

    ``dark`` segments hold the coupling off and advance the GEM coherence
    analytically; ``gradient_ramp`` is the time over which the gradient sign
    moves linearly from the previous segment's sign.
    """
    duration: float
    mode: SegmentMode
    gradient_sign: float = 0.0
    beta: float = 0.0
    ramp: CouplingRamp = field(default_factory=CouplingRamp)
    delta: float = 0.0
    input_open: bool = False
    label: str = ""
    gradient_ramp: float = 0.0
    light_shift_compensation: bool = True

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError(f"segment {self.label!r}: duration must be positive")
        if self.gradient_sign not in (-1.0, 0.0, 1.0):
            raise ValueError(f"segment {self.label!r}: gradient_sign must be -1, 0 or +1")
        if self.mode == SegmentMode.DARK and self.ramp.maximum > 0:
            raise ValueError(f"segment {self.label!r}: dark segments keep the coupling off")

    def sign_at(self, t_local: float, previous_sign: float) -> float:
        if self.gradient_ramp > 0 and t_local < self.gradient_ramp:
            x = t_local / self.gradient_ramp
            return previous_sign + (self.gradient_sign - previous_sign) * x
        return self.gradient_sign

    def gem_drive_at(self, t_local: float, previous_sign: float, omega0: float,
                     input_value: complex = 0j) -> GemDrive:
        return GemDrive(
            omega_c=self.ramp.value(t_local),
            delta=self.delta,
            gradient_sign=self.sign_at(t_local, previous_sign),
            beta=self.beta,
            input=input_value if self.input_open else 0j,
            omega0=omega0,
            light_shift_compensation=self.light_shift_compensation,
        )


@dataclass(frozen=True)
class ProtocolSchedule:
    """Ordered segments plus the reference arrival time of the input."""
    segments: tuple[Segment, ...]
    t_reference: float = 0.0

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)


@dataclass(frozen=True)
class SegmentRecord:
    """Timing metadata of an executed segment."""
    label: str
    mode: str
    t_start: float
    t_end: float
    steps: int


@dataclass
class FieldRecord:
    """Decimated space-time record of A(t, z) and |ρ_gh(t, z)|."""
    t: list[float] = field(default_factory=list)
    field_rows: list[np.ndarray] = field(default_factory=list)
    coherence_rows: list[np.ndarray] = field(default_factory=list)

    def append(self, t: float, a: np.ndarray, rho: np.ndarray) -> None:
        self.t.append(t)
        self.field_rows.append(np.array(a, dtype=complex))
        self.coherence_rows.append(np.abs(rho))


@dataclass
class RunResult:
    """Outcome of one protocol run."""
    protocol: str
    exit_trace: ComplexTrace
    input_trace: ComplexTrace
    final_state: GemState | EitState
    segments: list[SegmentRecord]
    write_window: tuple[float, float]
    read_window: tuple[float, float]
    metrics: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    field_record: Optional[FieldRecord] = None
    snapshots: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return sum(s.t_end - s.t_start for s in self.segments)
