"""
Input pulse synthesis and the heterodyne detection chain.

The detector records v(t) = 2·Re[A(t)·e^{−iω_LO·t}] plus white noise; repeated
sequences are averaged coherently and demodulated back to a complex envelope
with a windowed-sinc low-pass filter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve, firwin

from app.core.exceptions import DetectionError
from app.domain.models import ComplexTrace, RealTrace, SimGrid

logger = logging.getLogger(__name__)

CLIP_TOLERANCE = 1e-3


class PulseKind(str, Enum):
    GAUSSIAN = "gaussian"
    TWO_TONE = "two_tone"
    DOUBLE_PULSE = "double_pulse"


@dataclass(frozen=True)
class PulseSpec:
    """Input envelope: Gaussian lobes, each exp(−(t−t_k)²/(2σ_k²))·exp(iω_k t + iφ_k).

    ``two_tone`` shares one envelope across the listed detunings; ``double_pulse``
    places two lobes ``separation`` apart, centred on ``center_t``. ``sigmas``
    overrides ``sigma_t`` per lobe.
    """
    kind: PulseKind = PulseKind.GAUSSIAN
    sigma_t: float = 2.5e-6
    center_t: float = 10e-6
    detunings: tuple[float, ...] = (0.0,)
    amplitudes: tuple[float, ...] = (1.0,)
    phases: tuple[float, ...] = (0.0,)
    separation: float = 0.0
    sigmas: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.sigma_t > 0 or any(s <= 0 for s in self.sigmas):
            raise ValueError("pulse widths must be positive")
        if any(a < 0 for a in self.amplitudes):
            raise ValueError("pulse amplitudes must be non-negative")
        if self.kind == PulseKind.TWO_TONE and len(self.detunings) != 2:
            raise ValueError("two_tone pulses need exactly two detunings")
        if self.kind == PulseKind.DOUBLE_PULSE and not self.separation > 0:
            raise ValueError("double_pulse needs a positive separation")

    def _pick(self, values: tuple, k: int, default):
        if not values:
            return default
        return values[k] if k < len(values) else values[-1]

    def lobes(self) -> list[tuple[float, float, float, float, float]]:
        """(center, sigma, detuning, amplitude, phase) of each component."""
        if self.kind == PulseKind.DOUBLE_PULSE:
            centers = [self.center_t - 0.5 * self.separation, self.center_t + 0.5 * self.separation]
        elif self.kind == PulseKind.TWO_TONE:
            centers = [self.center_t, self.center_t]
        else:
            centers = [self.center_t]
        return [
            (
                c,
                self._pick(self.sigmas, k, self.sigma_t),
                self._pick(self.detunings, k, 0.0),
                self._pick(self.amplitudes, k, 1.0),
                self._pick(self.phases, k, 0.0),
            )
            for k, c in enumerate(centers)
        ]

    @property
    def sigma_min(self) -> float:
        return min(s for _, s, _, _, _ in self.lobes())

    def envelope(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros(len(t), dtype=complex)
        for center, sigma, detuning, amplitude, phase in self.lobes():
            out += amplitude * np.exp(-0.5 * ((t - center) / sigma) ** 2) \
                * np.exp(1j * (detuning * t + phase))
        return out


@dataclass(frozen=True)
class DetectionSpec:
    lo_offset: float = 2 * math.pi * 5e6
    noise_sigma: float = 0.0
    n_sequences: int = 200
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.n_sequences < 1:
            raise ValueError("n_sequences must be at least 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def synthesize_input(spec: PulseSpec, grid: SimGrid) -> ComplexTrace:
    """Envelope sampled on ``grid``'s time axis; warns when lobes are clipped."""
    t = grid.t
    values = spec.envelope(t)
    reach = 8 * max(s for _, s, _, _, _ in spec.lobes())
    n_pre = int(math.ceil(reach / grid.dt))
    wide_t = grid.t0 + np.arange(-n_pre, grid.nt + n_pre) * grid.dt
    total = float(np.sum(np.abs(spec.envelope(wide_t)) ** 2))
    inside = float(np.sum(np.abs(values) ** 2))
    if total > 0 and (total - inside) / total > CLIP_TOLERANCE:
        logger.warning("Input pulse clipped by the write window: %.2f%% of its energy is outside",
                       100 * (total - inside) / total)
    return ComplexTrace(values, grid.dt, grid.t0)


def _check_lo(det: DetectionSpec, dt: float) -> None:
    if abs(det.lo_offset) * dt >= math.pi:
        raise DetectionError(
            f"LO offset {det.lo_offset / (2 * math.pi * 1e6):.3g} MHz aliases at dt = {dt:.3g} s"
        )


def heterodyne_trace(field: ComplexTrace, det: DetectionSpec,
                     rng: Optional[np.random.Generator] = None) -> RealTrace:
    """Balanced beat note 2·Re[A·e^{−iω_LO t}] with additive Gaussian noise."""
    _check_lo(det, field.dt)
    v = 2.0 * np.real(field.values * np.exp(-1j * det.lo_offset * field.t))
    if det.noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(det.seed)
        v = v + rng.normal(0.0, det.noise_sigma, size=len(v))
    return RealTrace(v, field.dt, field.t0)


def coherent_average(traces: Sequence[RealTrace]) -> RealTrace:
    """Samplewise mean of phase-locked traces."""
    if not traces:
        raise DetectionError("no traces to average")
    n = len(traces[0])
    if any(len(tr) != n for tr in traces):
        raise DetectionError("traces to average have different lengths")
    stacked = np.stack([tr.values for tr in traces])
    return RealTrace(stacked.mean(axis=0), traces[0].dt, traces[0].t0)


def acquire_sequences(field: ComplexTrace, det: DetectionSpec) -> RealTrace:
    """``n_sequences`` noisy recordings of the same field, coherently averaged."""
    if det.noise_sigma == 0:
        return heterodyne_trace(field, det)
    rng = np.random.default_rng(det.seed)
    traces = [heterodyne_trace(field, det, rng) for _ in range(det.n_sequences)]
    return coherent_average(traces)


def lowpass_design(det: DetectionSpec, dt: float) -> dict:
    """Blackman windowed-sinc: cutoff |f_LO|/2, transition width |f_LO|/4."""
    fs = 1.0 / dt
    f_lo = abs(det.lo_offset) / (2 * math.pi)
    if f_lo == 0.0:
        raise DetectionError("demodulation needs a non-zero LO offset")
    cutoff = 0.5 * f_lo
    transition = 0.25 * f_lo
    numtaps = int(math.ceil(5.5 * fs / transition)) | 1
    return {"window": "blackman", "cutoff_hz": cutoff, "transition_hz": transition,
            "numtaps": numtaps, "sample_rate_hz": fs}


def demodulate(trace: RealTrace, det: DetectionSpec,
               sigma_min: Optional[float] = None) -> ComplexTrace:
    """Shift the beat note back to baseband and low-pass it.

    ``sigma_min`` is the shortest temporal width in the signal; the filter
    cutoff must clear three spectral widths (1/σ) of it.
    """
    _check_lo(det, trace.dt)
    if sigma_min is not None and 0.5 * abs(det.lo_offset) < 3.0 / sigma_min:
        raise DetectionError(
            f"LO offset too small for a {sigma_min * 1e6:.3g} µs pulse: the sidebands overlap"
        )
    design = lowpass_design(det, trace.dt)
    taps = firwin(design["numtaps"], design["cutoff_hz"], window="blackman", fs=design["sample_rate_hz"])
    shifted = trace.values * np.exp(1j * det.lo_offset * trace.t)
    baseband = fftconvolve(shifted, taps, mode="same")
    return ComplexTrace(baseband, trace.dt, trace.t0)
