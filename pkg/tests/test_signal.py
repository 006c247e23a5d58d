import logging
import math

import numpy as np
import pytest

from app.core.exceptions import DetectionError
from app.core.grid import make_grid
from app.domain.models import ComplexTrace, RealTrace
from app.services.signal import (
    DetectionSpec,
    PulseKind,
    PulseSpec,
    acquire_sequences,
    coherent_average,
    demodulate,
    heterodyne_trace,
    lowpass_design,
    synthesize_input,
)
from tests.conftest import TWO_PI

LO = TWO_PI * 5e6


def gaussian_trace(sigma=1e-6, center=6e-6, n=1201, dt=1e-8, detuning=0.0):
    t = np.arange(n) * dt
    values = np.exp(-0.5 * ((t - center) / sigma) ** 2) * np.exp(1j * detuning * t)
    return ComplexTrace(values, dt)


def test_heterodyne_of_constant_field_is_a_cosine():
    trace = ComplexTrace(np.ones(500, dtype=complex), 1e-8)
    v = heterodyne_trace(trace, DetectionSpec(lo_offset=LO))
    np.testing.assert_allclose(v.values, 2 * np.cos(LO * trace.t), atol=1e-12)


def test_demodulation_recovers_envelope():
    trace = gaussian_trace(detuning=TWO_PI * 0.3e6)
    det = DetectionSpec(lo_offset=LO)
    recovered = demodulate(heterodyne_trace(trace, det), det, sigma_min=1e-6)
    interior = (trace.t > 2.5e-6) & (trace.t < 9.5e-6)
    err = np.max(np.abs(recovered.values[interior] - trace.values[interior]))
    assert err < 1e-3


def test_lowpass_design_follows_lo():
    design = lowpass_design(DetectionSpec(lo_offset=LO), 1e-8)
    assert design["cutoff_hz"] == pytest.approx(2.5e6)
    assert design["transition_hz"] == pytest.approx(1.25e6)
    assert design["numtaps"] % 2 == 1
    assert design["numtaps"] >= 5.5 * 1e8 / 1.25e6


def test_coherent_averaging_reduces_noise():
    trace = ComplexTrace(np.zeros(2000, dtype=complex), 1e-8)
    det = DetectionSpec(lo_offset=LO, noise_sigma=1.0, n_sequences=200, seed=11)
    averaged = acquire_sequences(trace, det)
    assert np.std(averaged.values) == pytest.approx(1 / math.sqrt(200), rel=0.1)


def test_acquisition_is_seeded():
    trace = gaussian_trace()
    det = DetectionSpec(lo_offset=LO, noise_sigma=0.1, n_sequences=5, seed=4)
    a = acquire_sequences(trace, det)
    b = acquire_sequences(trace, det)
    np.testing.assert_array_equal(a.values, b.values)


def test_noise_free_acquisition_is_single_trace():
    trace = gaussian_trace()
    det = DetectionSpec(lo_offset=LO)
    np.testing.assert_array_equal(acquire_sequences(trace, det).values,
                                  heterodyne_trace(trace, det).values)


def test_alternating_sequences_cancel():
    v = RealTrace(np.sin(np.linspace(0, 10, 100)), 1e-8)
    avg = coherent_average([v, RealTrace(-v.values, v.dt)])
    assert np.all(avg.values == 0)


def test_average_rejects_mismatched_lengths():
    with pytest.raises(DetectionError):
        coherent_average([RealTrace(np.zeros(3), 1.0), RealTrace(np.zeros(4), 1.0)])
    with pytest.raises(DetectionError):
        coherent_average([])


def test_aliased_lo_rejected():
    trace = ComplexTrace(np.ones(100, dtype=complex), 1e-7)
    with pytest.raises(DetectionError, match="aliases"):
        heterodyne_trace(trace, DetectionSpec(lo_offset=TWO_PI * 6e6))


def test_sidebands_must_separate():
    trace = gaussian_trace(sigma=0.1e-6)
    det = DetectionSpec(lo_offset=LO)
    with pytest.raises(DetectionError, match="sidebands"):
        demodulate(heterodyne_trace(trace, det), det, sigma_min=0.1e-6)


def test_double_pulse_lobes():
    spec = PulseSpec(kind=PulseKind.DOUBLE_PULSE, sigma_t=0.2e-6, center_t=2e-6, separation=1e-6,
                     amplitudes=(1.0, 0.5), sigmas=(0.2e-6, 0.4e-6))
    lobes = spec.lobes()
    assert [c for c, *_ in lobes] == pytest.approx([1.5e-6, 2.5e-6])
    assert [s for _, s, *_ in lobes] == pytest.approx([0.2e-6, 0.4e-6])
    assert spec.sigma_min == pytest.approx(0.2e-6)


def test_two_tone_needs_two_detunings():
    with pytest.raises(ValueError):
        PulseSpec(kind=PulseKind.TWO_TONE, detunings=(0.0,))


def test_clipped_pulse_warns(params, caplog):
    grid = make_grid(params, 11, 4e-6, 1e-8)
    with caplog.at_level(logging.WARNING):
        trace = synthesize_input(PulseSpec(sigma_t=1e-6, center_t=1e-6), grid)
    assert "clipped" in caplog.text
    assert len(trace) == grid.nt
