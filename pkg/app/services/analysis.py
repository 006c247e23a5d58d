"""
Observables extracted from protocol runs: spectra, Gaussian envelope fits,
peak lists, efficiency and overlaps.

Frequencies are rad/s and times are s; a component exp(+iωt) shows up at +ω.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import correlate, fftconvolve, find_peaks

from app.core.exceptions import AnalysisError, FitError, MultiLobeError
from app.domain.models import ComplexTrace, RunResult

logger = logging.getLogger(__name__)

# Zero-padding factor for spectral peak localisation.
SPECTRAL_PADDING = 8
# Peaks below this fraction of the maximum are ignored in run metrics.
PEAK_PROMINENCE = 0.1
FIT_GTOL = 1e-10
FIT_MAX_ITERATIONS = 200


# ── Spectra ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Spectrum:
    """DFT on a uniform angular-frequency axis (ascending)."""
    frequency: np.ndarray
    amplitude: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.amplitude)

    @property
    def resolution(self) -> float:
        return float(self.frequency[1] - self.frequency[0])


def spectrum(trace: ComplexTrace, window: Literal["none", "hann"] = "none",
             zero_pad: int = 1) -> Spectrum:
    """Forward DFT with Σ|x|² = (1/N)·Σ|X|², N being the padded length."""
    values = np.asarray(trace.values, dtype=complex)
    if len(values) < 8:
        raise AnalysisError(f"spectrum needs at least 8 samples, got {len(values)}")
    if not np.all(np.isfinite(values)):
        raise AnalysisError("trace contains NaN or Inf")
    if window == "hann":
        values = values * np.hanning(len(values))
    elif window != "none":
        raise AnalysisError(f"unknown window {window!r}")
    n = len(values) * max(int(zero_pad), 1)
    amplitude = np.fft.fftshift(np.fft.fft(values, n=n))
    frequency = 2 * np.pi * np.fft.fftshift(np.fft.fftfreq(n, trace.dt))
    return Spectrum(frequency, amplitude)


# ── Gaussian fits ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GaussianFit:
    amplitude: float
    center: float
    sigma: float
    baseline: float
    residual_l2: float


def gaussian(x: np.ndarray, amplitude: float, center: float, sigma: float,
             baseline: float) -> np.ndarray:
    return amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2) + baseline


def _gaussian_jacobian(u: np.ndarray, amplitude: float, center: float, sigma: float,
                       baseline: float) -> np.ndarray:
    r = (u - center) / sigma
    e = np.exp(-0.5 * r ** 2)
    return np.stack([e, amplitude * e * r / sigma, amplitude * e * r ** 2 / sigma,
                     np.ones_like(u)], axis=-1)


def _check_single_lobe(y: np.ndarray) -> None:
    peak = float(np.max(y))
    if not peak > 3.0 * float(np.median(y)) or peak <= 0.0:
        raise MultiLobeError("data has no dominant lobe (peak below 3× median)")
    lobes, _ = find_peaks(y, prominence=0.25 * (peak - float(np.min(y))))
    if len(lobes) > 1:
        raise MultiLobeError(f"data has {len(lobes)} lobes; use peak_find instead")


def fit_gaussian_envelope(x: np.ndarray, y: np.ndarray) -> GaussianFit:
    """Least-squares fit of a·exp(−(x−x₀)²/(2σ²)) + b to a single lobe.

    Starts from moments and refines with Levenberg–Marquardt. The abscissa is
    rescaled to the initial width internally, so the fit is shift-equivariant.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or len(x) < 5:
        raise AnalysisError("fit needs matching x and y with at least 5 samples")
    _check_single_lobe(y)

    b0 = float(np.min(y))
    weight = y - b0
    total = float(np.sum(weight))
    i_peak = int(np.argmax(y))
    x0 = float(x[i_peak])
    c0 = float(np.sum(x * weight) / total)
    s0 = math.sqrt(max(float(np.sum((x - c0) ** 2 * weight) / total), 0.0))
    step = float(np.median(np.diff(x)))
    s0 = max(s0, step)

    u = (x - x0) / s0
    p0 = (float(y[i_peak]) - b0, (c0 - x0) / s0, 1.0, b0)
    try:
        popt, _ = curve_fit(gaussian, u, y, p0=p0, jac=_gaussian_jacobian, method="lm",
                            gtol=FIT_GTOL, ftol=1e-12, xtol=1e-12,
                            maxfev=FIT_MAX_ITERATIONS * (len(p0) + 1))
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"Gaussian fit did not converge: {exc}") from exc
    amplitude, center_u, sigma_u, baseline = (float(v) for v in popt)
    sigma_u = abs(sigma_u)
    if not (np.all(np.isfinite(popt)) and sigma_u > 0):
        raise FitError("Gaussian fit returned a degenerate width")
    model = gaussian(u, amplitude, center_u, sigma_u, baseline)
    norm = float(np.linalg.norm(y))
    residual = float(np.linalg.norm(y - model)) / norm if norm > 0 else 0.0
    return GaussianFit(amplitude, x0 + center_u * s0, sigma_u * s0, baseline, residual)


def fit_trace_envelope(trace: ComplexTrace) -> GaussianFit:
    """Gaussian fit of |A(t)|."""
    return fit_gaussian_envelope(trace.t, np.abs(trace.values))


def fit_spectrum(spec: Spectrum) -> GaussianFit:
    return fit_gaussian_envelope(spec.frequency, spec.magnitude)


# ── Peaks ────────────────────────────────────────────────────────────────

def peak_find(x: np.ndarray, y: np.ndarray, min_separation: float,
              min_prominence: float) -> list[tuple[float, float]]:
    """Local maxima with at least ``min_prominence``, ``min_separation`` apart.

    Locations are refined by a parabola through the three top samples.
    """
    if not min_separation > 0:
        raise AnalysisError("min_separation must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        return []
    step = abs(float(x[1] - x[0]))
    distance = max(1, int(math.ceil(min_separation / step)))
    idx, _ = find_peaks(y, prominence=max(min_prominence, np.finfo(float).tiny), distance=distance)
    peaks = []
    for i in idx:
        left, mid, right = y[i - 1], y[i], y[i + 1]
        curvature = left - 2 * mid + right
        offset = 0.5 * (left - right) / curvature if curvature != 0 else 0.0
        peaks.append((float(x[i] + offset * step), float(mid - 0.25 * (left - right) * offset)))
    return sorted(peaks)


def trace_peaks(trace: ComplexTrace, min_separation: float,
                prominence: float = PEAK_PROMINENCE) -> list[tuple[float, float]]:
    mag = np.abs(trace.values)
    return peak_find(trace.t, mag, min_separation, prominence * float(np.max(mag, initial=0.0)))


def spectral_peaks(spec: Spectrum, min_separation: float,
                   prominence: float = PEAK_PROMINENCE) -> list[tuple[float, float]]:
    mag = spec.magnitude
    return peak_find(spec.frequency, mag, min_separation, prominence * float(np.max(mag, initial=0.0)))


# ── Delays ───────────────────────────────────────────────────────────────

def delay_from_fit(inp: ComplexTrace, out: ComplexTrace) -> float:
    """Centre of the fitted output envelope minus centre of the fitted input, s."""
    return fit_trace_envelope(out).center - fit_trace_envelope(inp).center


def peak_delays(inp: ComplexTrace, out: ComplexTrace, min_separation: float) -> list[float]:
    """Lag of each output lobe behind the input lobe of the same rank in time order.

    Empty when the two traces resolve different numbers of lobes.
    """
    t_in = [t for t, _ in trace_peaks(inp, min_separation)]
    t_out = [t for t, _ in trace_peaks(out, min_separation)]
    if len(t_in) != len(t_out):
        return []
    return [b - a for a, b in zip(t_in, t_out)]


# ── Efficiency and overlaps ──────────────────────────────────────────────

def energy_ratio(inp: ComplexTrace, out: ComplexTrace) -> float:
    """∫|out|²dt / ∫|in|²dt."""
    if len(inp) == 0 or len(out) == 0:
        raise AnalysisError("efficiency needs non-empty windows")
    e_in = inp.energy
    if e_in == 0.0:
        raise AnalysisError("input energy is zero")
    return out.energy / e_in


def efficiency(result: RunResult) -> float:
    """Read-window output energy over write-window input energy."""
    inp = result.input_trace.window(*result.write_window)
    out = result.exit_trace.window(*result.read_window)
    return energy_ratio(inp, out)


def _norms(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise AnalysisError("overlap needs non-zero energies")
    return float(na * nb)


def time_mirror_overlap(inp: ComplexTrace, out: ComplexTrace) -> float:
    """max_τ |Σ_t out(t)·conj(in(τ − t))| / (‖out‖·‖in‖)."""
    norm = _norms(inp.values, out.values)
    return float(np.max(np.abs(fftconvolve(out.values, np.conj(inp.values))))) / norm


def shifted_overlap(inp: ComplexTrace, out: ComplexTrace) -> float:
    """max_τ |Σ_t out(t + τ)·conj(in(t))| / (‖out‖·‖in‖), no time reversal."""
    norm = _norms(inp.values, out.values)
    return float(np.max(np.abs(correlate(out.values, inp.values, method="fft")))) / norm


def spatial_wavevector_centroid(rho: np.ndarray, dz: float) -> float:
    """Power-weighted mean k_z (rad/m) of a coherence profile; ρ ∝ e^{+ikz} gives +k."""
    rho = np.asarray(rho, dtype=complex)
    n = len(rho) * SPECTRAL_PADDING
    power = np.abs(np.fft.fft(rho, n=n)) ** 2
    k = 2 * np.pi * np.fft.fftfreq(n, dz)
    total = float(np.sum(power))
    if total == 0.0:
        raise AnalysisError("coherence profile is zero")
    return float(np.sum(k * power) / total)


# ── Run metrics ──────────────────────────────────────────────────────────

def _safe_fit(trace: ComplexTrace, what: str) -> Optional[GaussianFit]:
    try:
        return fit_trace_envelope(trace)
    except AnalysisError as exc:
        logger.warning("Gaussian fit of %s failed: %s", what, exc)
        return None


def _spectral_fit(spec: Spectrum) -> dict[str, float]:
    try:
        fit = fit_spectrum(spec)
    except AnalysisError as exc:
        logger.warning("Gaussian fit of the read-out spectrum failed: %s", exc)
        return {"spectral_center_mhz": math.nan, "spectral_sigma_mhz": math.nan}
    to_mhz = 1.0 / (2 * np.pi * 1e6)
    return {"spectral_center_mhz": fit.center * to_mhz, "spectral_sigma_mhz": fit.sigma * to_mhz}


def run_metrics(result: RunResult, min_peak_separation: Optional[float] = None) -> dict:
    """Efficiency, fitted delay and width, temporal and spectral peak lists."""
    metrics: dict[str, Union[float, int, list]] = {}
    try:
        metrics["efficiency"] = efficiency(result)
    except AnalysisError as exc:
        logger.warning("Efficiency unavailable: %s", exc)
        metrics["efficiency"] = math.nan

    inp = result.input_trace.window(*result.write_window)
    out = result.exit_trace.window(*result.read_window)
    fit_in = _safe_fit(inp, "input") if len(inp) >= 5 else None
    fit_out = _safe_fit(out, "read-out") if len(out) >= 5 else None
    nan = math.nan
    metrics["input_center_us"] = fit_in.center * 1e6 if fit_in else nan
    metrics["input_sigma_us"] = fit_in.sigma * 1e6 if fit_in else nan
    metrics["sigma_us"] = fit_out.sigma * 1e6 if fit_out else nan
    metrics["delay_us"] = delay_from_fit(inp, out) * 1e6 if fit_in and fit_out else nan
    metrics["readout_delay_us"] = (fit_out.center - out.t0) * 1e6 if fit_out and len(out) else nan

    if len(out) >= 8 and np.any(out.values != 0):
        separation = min_peak_separation or 10 * out.dt
        metrics["peak_times_us"] = [t * 1e6 for t, _ in trace_peaks(out, separation)]
        metrics["peak_delays_us"] = [d * 1e6 for d in peak_delays(inp, out, separation)]
        spec = spectrum(out, zero_pad=SPECTRAL_PADDING)
        spectral_step = 2 * np.pi / (len(out) * out.dt)
        peaks = spectral_peaks(spec, 2 * spectral_step)
        metrics["peak_freqs_mhz"] = [f / (2 * np.pi * 1e6) for f, _ in peaks]
        metrics["spectral_peak_mhz"] = float(spec.frequency[np.argmax(spec.magnitude)]) / (2 * np.pi * 1e6)
        metrics.update(_spectral_fit(spec))
    else:
        metrics["peak_times_us"] = []
        metrics["peak_delays_us"] = []
        metrics["peak_freqs_mhz"] = []
        metrics["spectral_peak_mhz"] = nan
        metrics["spectral_center_mhz"] = nan
        metrics["spectral_sigma_mhz"] = nan
    metrics["n_peaks"] = len(metrics["peak_freqs_mhz"])
    return metrics
