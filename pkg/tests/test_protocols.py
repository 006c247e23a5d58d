"""Whole-protocol scenarios run from the shipped configs."""

import math
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad

from app.cli.config_models import RunConfig, apply_overrides, parse_config
from app.core.units import mhz_to_rad
from app.domain.models import ComplexTrace, CouplingRamp, RampShape
from app.services.analysis import run_metrics
from app.services.runner import execute_run, run_sweep
from app.services.sequence import ProtocolConfig, reference_time, run_eit_write_gem_read
from app.solvers.eit_solver import group_velocity

CONFIGS = Path(__file__).parent.parent / "configs"

pytestmark = pytest.mark.slow


def load(name: str, overrides: dict | None = None) -> RunConfig:
    config = parse_config((CONFIGS / name).read_text(encoding="utf-8"))
    return apply_overrides(config, overrides) if overrides else config


def metrics_of(name: str, overrides: dict | None = None) -> dict:
    return execute_run(load(name, overrides), 0).result.metrics


def monotonic(values) -> bool:
    steps = np.diff(np.asarray(values, dtype=float))
    return bool(np.all(steps > 0) or np.all(steps < 0))


def to_mhz(omega: float) -> float:
    return omega / (2 * math.pi * 1e6)


# ── GEM write, EIT read ──────────────────────────────────────────────────

def test_long_pulses_resolve_detuning_in_delay(tmp_path):
    table, rows = run_sweep(load("detuning_sweep.toml"), 0, tmp_path, workers=1)
    assert all(r.success for r in rows)
    spans = {}
    for sigma, group in table.groupby("pulse_sigma_us"):
        delays = group.sort_values("pulse_detuning_mhz")["delay_us"].to_numpy()
        assert np.all(np.isfinite(delays))
        assert monotonic(delays)
        spans[sigma] = abs(delays[-1] - delays[0])
    assert spans[2.5] >= 3 * spans[0.5]


def test_wideband_detunings_are_read_out_in_order():
    config = load("gem_eit_wideband.toml")
    params = config.physical_params()
    delays = [metrics_of("gem_eit_wideband.toml", {"pulse.detuning_mhz": d})["delay_us"]
              for d in (-0.4, 0.0, 0.4)]
    assert monotonic(delays)
    # 0.8 MHz of detuning moves the stored wave by 0.8/β along the cloud
    shift = mhz_to_rad(0.8) / params.beta
    expected_us = shift / group_velocity(params, params.omega_c_max) * 1e6
    assert abs(delays[-1] - delays[0]) == pytest.approx(expected_us, rel=0.3)


def test_two_tones_are_read_out_at_two_times():
    config = load("gem_eit_two_tone.toml")
    params = config.physical_params()
    result = execute_run(config, 0).result
    peaks = run_metrics(result, min_peak_separation=0.3e-6)["peak_times_us"]
    assert len(peaks) == 2
    expected_us = mhz_to_rad(1.0) / params.beta / group_velocity(params, params.omega_c_max) * 1e6
    assert peaks[1] - peaks[0] == pytest.approx(expected_us, rel=0.3)


# ── EIT write, GEM read ──────────────────────────────────────────────────

def spectral_spacing_mhz(config: RunConfig, separation_us: float) -> float:
    """β·v_g·δt for the write coupling of ``config``."""
    params = config.physical_params()
    v_g = group_velocity(params, mhz_to_rad(config.schedule.eit_write_omega_c_mhz))
    return to_mhz(params.beta * v_g * separation_us * 1e-6)


def test_double_pulse_becomes_two_lines():
    config = load("eit_gem_double_pulse.toml")
    metrics = execute_run(config, 0).result.metrics
    assert metrics["n_peaks"] == 2
    low, high = metrics["peak_freqs_mhz"]
    assert high - low == pytest.approx(spectral_spacing_mhz(config, 1.0), rel=0.25)


def test_shifted_pair_moves_both_lines_together():
    lines = [metrics_of("eit_gem_double_pulse.toml", {"pulse.center_us": c})["peak_freqs_mhz"]
             for c in (1.25, 1.75)]
    assert [len(f) for f in lines] == [2, 2]
    moves = np.subtract(lines[1], lines[0])
    assert np.all(moves > 0) or np.all(moves < 0)


def test_arrival_time_maps_to_frequency():
    config = load("eit_gem_double_pulse.toml")
    single = {"pulse.kind": "gaussian"}
    peaks = [metrics_of("eit_gem_double_pulse.toml", {**single, "pulse.center_us": c})["spectral_peak_mhz"]
             for c in (1.0, 1.5, 2.0)]
    assert monotonic(peaks)
    assert abs(peaks[-1] - peaks[0]) == pytest.approx(spectral_spacing_mhz(config, 1.0), rel=0.25)


def test_long_pulse_gives_a_broad_spectrum():
    widths = {}
    for sigma, window in ((0.2, 3.0), (0.7, 4.2)):
        metrics = metrics_of("eit_gem_double_pulse.toml", {
            "pulse.kind": "gaussian", "pulse.sigma_us": sigma,
            "pulse.window_us": window, "pulse.center_us": 0.5 * window,
        })
        widths[sigma] = metrics["spectral_sigma_mhz"]
    assert widths[0.7] > 1.4 * widths[0.2]


# ── Both directions ──────────────────────────────────────────────────────

def test_replaying_the_readout_restores_the_detuning():
    """GEM→EIT output fed to EIT→GEM comes back at the original detuning."""
    detuning_mhz = 0.2
    config = load("gem_eit.toml", {"physical.gradient_mhz_per_mm": 0.1,
                                   "pulse.detuning_mhz": detuning_mhz})
    forward = execute_run(config, 0).result
    read = forward.exit_trace.window(*forward.read_window)
    replay = ComplexTrace(read.values, read.dt, 0.0)

    params = config.physical_params()
    omega = params.omega_c_max
    stop_ramp = 0.5e-6
    ramp = CouplingRamp(RampShape.TANH, omega, 0.0, stop_ramp)
    ramp_area, _ = quad(lambda t: (ramp.value(t) / omega) ** 2, 0.0, stop_ramp)
    # stop the replayed pulse where the forward run had stored it
    depth = 0.5 * params.length + mhz_to_rad(detuning_mhz) / params.beta
    stop_delay = reference_time(replay) + depth / group_velocity(params, omega) - ramp_area

    reverse = ProtocolConfig(params=params, input_trace=replay, t1=10e-6, t2=10e-6,
                             eit_stop_ramp=stop_ramp, eit_stop_delay=stop_delay, store_sign=-1.0)
    result = run_eit_write_gem_read(reverse)
    resolution_mhz = to_mhz(2 * math.pi / (len(result.exit_trace.window(*result.read_window))
                                           * result.exit_trace.dt))
    assert abs(result.metrics["spectral_peak_mhz"] - detuning_mhz) < resolution_mhz
