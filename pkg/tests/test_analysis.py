import numpy as np
import pytest

from app.core.exceptions import AnalysisError, MultiLobeError
from app.domain.models import ComplexTrace, GemState, RunResult
from app.services.analysis import (
    delay_from_fit,
    efficiency,
    fit_gaussian_envelope,
    fit_spectrum,
    gaussian,
    peak_delays,
    peak_find,
    run_metrics,
    shifted_overlap,
    spatial_wavevector_centroid,
    spectrum,
    time_mirror_overlap,
)
from tests.conftest import TWO_PI


def gaussian_trace(n, dt, center, sigma, amplitude=1.0, t0=0.0):
    t = t0 + np.arange(n) * dt
    return ComplexTrace(amplitude * np.exp(-0.5 * ((t - center) / sigma) ** 2) + 0j, dt, t0)


def synthetic_result(inp, out, write_window, read_window):
    return RunResult(protocol="gem_only", exit_trace=out, input_trace=inp,
                     final_state=GemState.zeros(3), segments=[],
                     write_window=write_window, read_window=read_window)


def test_parseval_with_padding():
    rng = np.random.default_rng(0)
    x = rng.normal(size=100) + 1j * rng.normal(size=100)
    spec = spectrum(ComplexTrace(x, 1e-8), zero_pad=4)
    assert len(spec.amplitude) == 400
    assert np.sum(np.abs(x) ** 2) == pytest.approx(np.sum(spec.magnitude ** 2) / 400, rel=1e-12)


def test_tone_appears_at_its_frequency():
    dt = 1e-8
    t = np.arange(1000) * dt
    spec = spectrum(ComplexTrace(np.exp(1j * TWO_PI * 1e6 * t), dt))
    assert spec.frequency[np.argmax(spec.magnitude)] == pytest.approx(TWO_PI * 1e6)
    assert spec.resolution == pytest.approx(TWO_PI * 1e5)


def test_spectrum_rejects_short_or_unknown_window():
    with pytest.raises(AnalysisError):
        spectrum(ComplexTrace(np.ones(4), 1e-8))
    with pytest.raises(AnalysisError):
        spectrum(ComplexTrace(np.ones(16), 1e-8), window="kaiser")


def test_gaussian_pulse_spectral_width():
    trace = gaussian_trace(2000, 1e-8, 10e-6, 1e-6)
    fit = fit_spectrum(spectrum(trace, zero_pad=4))
    assert fit.sigma == pytest.approx(1e6, rel=1e-3)
    assert fit.center == pytest.approx(0.0, abs=1e3)


def test_fit_recovers_parameters():
    x = np.linspace(0.0, 10.0, 201)
    y = gaussian(x, 2.0, 4.3, 0.7, 0.1)
    fit = fit_gaussian_envelope(x, y)
    assert fit.amplitude == pytest.approx(2.0, rel=1e-6)
    assert fit.center == pytest.approx(4.3, rel=1e-6)
    assert fit.sigma == pytest.approx(0.7, rel=1e-6)
    assert fit.baseline == pytest.approx(0.1, abs=1e-6)
    assert fit.residual_l2 < 1e-6


def test_fit_is_shift_equivariant():
    x = np.linspace(0.0, 10.0, 201)
    y = gaussian(x, 1.0, 5.2, 1.1, 0.0)
    a = fit_gaussian_envelope(x, y)
    b = fit_gaussian_envelope(x + 1e3, y)
    assert b.center - a.center == pytest.approx(1e3, rel=1e-9)
    assert b.sigma == pytest.approx(a.sigma, rel=1e-6)


def test_fit_rejects_flat_and_split_data():
    x = np.linspace(0.0, 10.0, 201)
    with pytest.raises(MultiLobeError):
        fit_gaussian_envelope(x, np.ones_like(x))
    two = gaussian(x, 1.0, 3.0, 0.4, 0.0) + gaussian(x, 0.8, 7.0, 0.4, 0.0)
    with pytest.raises(MultiLobeError):
        fit_gaussian_envelope(x, two)


def test_peak_find():
    x = np.linspace(0.0, 10.0, 1001)
    y = gaussian(x, 1.0, 2.0, 0.3, 0.0) + gaussian(x, 0.6, 6.0, 0.3, 0.0)
    peaks = peak_find(x, y, min_separation=0.5, min_prominence=0.1)
    assert [p for p, _ in peaks] == pytest.approx([2.0, 6.0], abs=1e-3)
    assert [h for _, h in peaks] == pytest.approx([1.0, 0.6], rel=1e-3)
    assert len(peak_find(x, y, min_separation=5.0, min_prominence=0.1)) == 1
    assert peak_find(x, y, min_separation=0.5, min_prominence=2.0) == []
    with pytest.raises(AnalysisError):
        peak_find(x, y, min_separation=0.0, min_prominence=0.1)


def test_efficiency_is_windowed_energy_ratio():
    dt = 1e-8
    inp = ComplexTrace(np.ones(100), dt)
    out = ComplexTrace(np.concatenate([np.zeros(100), 0.5 * np.ones(100)]), dt)
    result = synthetic_result(inp, out, (0.0, 1e-6), (1e-6, 2e-6))
    assert efficiency(result) == pytest.approx(0.25)


def test_efficiency_needs_input_energy():
    dt = 1e-8
    result = synthetic_result(ComplexTrace(np.zeros(100), dt), ComplexTrace(np.ones(100), dt),
                              (0.0, 1e-6), (0.0, 1e-6))
    with pytest.raises(AnalysisError):
        efficiency(result)


def test_overlaps_of_exact_copies():
    rng = np.random.default_rng(1)
    x = rng.normal(size=64) + 1j * rng.normal(size=64)
    inp = ComplexTrace(x, 1e-8)
    mirrored = ComplexTrace(x[::-1], 1e-8)
    shifted = ComplexTrace(np.concatenate([np.zeros(20), x]), 1e-8)
    assert time_mirror_overlap(inp, mirrored) == pytest.approx(1.0, rel=1e-9)
    assert shifted_overlap(inp, shifted) == pytest.approx(1.0, rel=1e-9)
    assert shifted_overlap(inp, mirrored) < 1.0
    with pytest.raises(AnalysisError):
        shifted_overlap(inp, ComplexTrace(np.zeros(64), 1e-8))


def test_wavevector_centroid():
    dz = 5e-5
    z = np.arange(201) * dz
    envelope = np.exp(-0.5 * ((z - 5e-3) / 1e-3) ** 2)
    assert spatial_wavevector_centroid(envelope * np.exp(5000j * z), dz) == pytest.approx(5000, rel=1e-3)
    assert spatial_wavevector_centroid(envelope * np.exp(-5000j * z), dz) == pytest.approx(-5000, rel=1e-3)
    with pytest.raises(AnalysisError):
        spatial_wavevector_centroid(np.zeros(10), dz)


def test_run_metrics_of_a_delayed_echo():
    dt = 1e-8
    inp = gaussian_trace(200, dt, 1e-6, 0.2e-6)
    out = ComplexTrace(np.concatenate([np.zeros(200), 0.5 * inp.values]), dt)
    metrics = run_metrics(synthetic_result(inp, out, (0.0, 2e-6), (2e-6, 4e-6)))
    assert metrics["efficiency"] == pytest.approx(0.25, rel=1e-9)
    assert metrics["delay_us"] == pytest.approx(2.0, abs=1e-6)
    assert metrics["sigma_us"] == pytest.approx(0.2, rel=1e-6)
    assert metrics["readout_delay_us"] == pytest.approx(1.0, abs=1e-6)
    assert metrics["peak_times_us"] == pytest.approx([3.0], abs=1e-3)
    assert metrics["peak_delays_us"] == pytest.approx([2.0], abs=1e-3)
    assert metrics["n_peaks"] == 1
    assert metrics["spectral_peak_mhz"] == pytest.approx(0.0, abs=1e-9)
    assert metrics["spectral_center_mhz"] == pytest.approx(0.0, abs=1e-4)
    # |FT| of a Gaussian of width σ_t has width 1/(2π·σ_t) in frequency
    assert metrics["spectral_sigma_mhz"] == pytest.approx(1 / (2 * np.pi * 0.2), rel=0.02)


def test_run_metrics_of_an_empty_read():
    dt = 1e-8
    inp = gaussian_trace(200, dt, 1e-6, 0.2e-6)
    out = ComplexTrace(np.zeros(400), dt)
    metrics = run_metrics(synthetic_result(inp, out, (0.0, 2e-6), (2e-6, 4e-6)))
    assert metrics["efficiency"] == 0.0
    assert metrics["n_peaks"] == 0
    assert np.isnan(metrics["delay_us"])
    assert np.isnan(metrics["spectral_sigma_mhz"])


def test_delays_of_a_shifted_double_pulse():
    dt = 1e-8
    t = np.arange(600) * dt
    pair = np.exp(-0.5 * ((t - 1e-6) / 0.1e-6) ** 2) + 0.5 * np.exp(-0.5 * ((t - 2e-6) / 0.1e-6) ** 2)
    inp = ComplexTrace(pair, dt)
    out = ComplexTrace(np.roll(pair, 150), dt)
    assert peak_delays(inp, out, 0.3e-6) == pytest.approx([1.5e-6, 1.5e-6], abs=1e-9)
    assert peak_delays(inp, ComplexTrace(np.roll(pair, 150)[:250], dt), 0.3e-6) == []

    single = gaussian_trace(400, dt, 1e-6, 0.2e-6)
    moved = gaussian_trace(400, dt, 2.3e-6, 0.2e-6)
    assert delay_from_fit(single, moved) == pytest.approx(1.3e-6, rel=1e-6)
