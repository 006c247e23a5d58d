import logging

import numpy as np
import pytest

from app.core.exceptions import HandoffError, ScheduleError
from app.core.grid import make_grid
from app.domain.models import ComplexTrace, EitState, GemState, SegmentMode
from app.services.analysis import shifted_overlap, time_mirror_overlap
from app.services.sequence import (
    PROTOCOLS,
    ProtocolConfig,
    build_schedule,
    handoff_eit_to_gem,
    handoff_gem_to_eit,
    reference_time,
    run_eit_only,
    run_eit_write_gem_read,
    run_gem_only,
    run_gem_write_eit_read,
    run_protocol,
    schedule_eit_gem,
    schedule_eit_only,
    schedule_gem_eit,
    schedule_gem_only,
    with_input,
)
from app.services.signal import PulseKind, PulseSpec, synthesize_input
from app.solvers.eit_solver import slow_light_delay
from tests.conftest import physical


def protocol_config(dt=1e-8, sigma=0.5e-6, window=4e-6, od=5.0, **overrides):
    params = physical(od=od)
    grid = make_grid(params, overrides.get("nz", 41), window, dt)
    trace = synthesize_input(PulseSpec(sigma_t=sigma, center_t=0.5 * window), grid)
    overrides.setdefault("nz", 41)
    return ProtocolConfig(params=params, input_trace=trace, **overrides)


def labels(schedule):
    return [s.label for s in schedule.segments]


def test_gem_to_eit_handoff_scales_by_collective_coupling(params):
    rho = np.linspace(0, 1, 11) * (1 + 1j)
    eit = handoff_gem_to_eit(GemState(rho, 3e-6), params)
    np.testing.assert_allclose(eit.s, params.g_p * rho)
    assert np.all(eit.a == 0) and np.all(eit.p == 0)
    assert eit.t_now == 3e-6


def test_eit_to_gem_handoff_round_trip(params):
    s = np.linspace(0, 1, 11) * params.g_p + 0j
    zero = np.zeros(11, dtype=complex)
    gem = handoff_eit_to_gem(EitState(zero, zero, s, 1e-6, a_peak=1.0, p_peak=1.0), params)
    np.testing.assert_allclose(gem.rho_gh, np.linspace(0, 1, 11))


def test_eit_to_gem_handoff_refuses_live_light(params):
    zero = np.zeros(11, dtype=complex)
    a = zero.copy()
    a[5] = 1e-3
    with pytest.raises(HandoffError, match="live excitation"):
        handoff_eit_to_gem(EitState(a, zero, zero, 0.0, a_peak=1.0, p_peak=1.0), params)


def test_eit_to_gem_handoff_needs_atoms():
    zero = np.zeros(11, dtype=complex)
    with pytest.raises(HandoffError):
        handoff_eit_to_gem(EitState(zero, zero, zero), physical(od=0))


def test_reference_time_is_energy_centroid():
    trace = ComplexTrace(np.array([0, 1, 0, 0, 1, 0], dtype=complex), 1e-6, 1e-6)
    assert reference_time(trace) == pytest.approx(3.5e-6)


def test_gem_only_read_mirrors_write():
    cfg = protocol_config(t1=3e-6)
    schedule = schedule_gem_only(cfg)
    assert labels(schedule) == ["gem_write", "store", "unwind", "gem_read"]
    t_ref = schedule.t_reference
    assert t_ref == pytest.approx(2e-6, abs=1e-9)
    t_flip = t_ref + 3e-6
    starts = np.cumsum([0.0] + [s.duration for s in schedule.segments])
    assert starts[2] == pytest.approx(t_flip, abs=1e-8)
    assert starts[3] == pytest.approx(2 * t_flip - cfg.write_end, abs=1e-8)
    assert [s.gradient_sign for s in schedule.segments] == [1.0, 1.0, -1.0, -1.0]


def test_segment_durations_are_on_the_step_lattice():
    cfg = protocol_config(t1=3.3333e-6, t2=3.3333e-6)
    for builder in (schedule_gem_only, schedule_gem_eit, schedule_eit_gem):
        for seg in builder(cfg).segments:
            n = seg.duration / cfg.dt
            assert n == pytest.approx(round(n), abs=1e-6)


def test_gem_eit_schedule_modes():
    cfg = protocol_config(t1=3e-6, t2=3e-6, eit_read_duration=2e-6)
    schedule = schedule_gem_eit(cfg)
    assert [s.mode for s in schedule.segments] == [SegmentMode.GEM, SegmentMode.DARK,
                                                   SegmentMode.DARK, SegmentMode.EIT]
    read = schedule.segments[-1]
    assert read.ramp.end == cfg.params.omega_c_max
    assert read.ramp.start == 0.0


def test_eit_gem_schedule_reads_around_rephasing():
    cfg = protocol_config(t1=5e-6, t2=5e-6, gem_read_lead=2e-6)
    schedule = schedule_eit_gem(cfg)
    assert labels(schedule) == ["eit_write", "settle", "store", "unwind", "gem_read"]
    store, unwind, read = schedule.segments[2:]
    assert store.duration == pytest.approx(5e-6)
    assert unwind.duration == pytest.approx(3e-6)
    assert read.duration == pytest.approx(4e-6)


def test_eit_stop_ramp_is_anchored_to_the_write_window():
    params = physical(od=80)
    grid = make_grid(params, 41, 3e-6, 2e-9)
    delays = []
    for center in (1.0e-6, 1.5e-6, 2.0e-6):
        trace = synthesize_input(PulseSpec(sigma_t=0.2e-6, center_t=center), grid)
        cfg = ProtocolConfig(params=params, input_trace=trace, nz=41, eit_stop_ramp=0.5e-6)
        delays.append(schedule_eit_gem(cfg).segments[0].ramp.delay)
    expected = 1.5e-6 + 0.5 * slow_light_delay(params, params.omega_c_max) - 0.25e-6
    assert delays == pytest.approx([expected] * 3, abs=2e-9)

    explicit = protocol_config(eit_stop_delay=1e-6)
    assert schedule_eit_only(explicit).segments[0].ramp.delay == pytest.approx(1e-6)


def test_store_sign_flips_every_gradient():
    plain = schedule_gem_only(protocol_config(t1=3e-6))
    flipped = schedule_gem_only(protocol_config(t1=3e-6, store_sign=-1.0))
    assert [s.gradient_sign for s in flipped.segments] == [-s.gradient_sign for s in plain.segments]
    eit_gem = schedule_eit_gem(protocol_config(t1=3e-6, t2=3e-6, gem_read_lead=2e-6, store_sign=-1.0))
    assert [s.gradient_sign for s in eit_gem.segments[2:]] == [-1.0, 1.0, 1.0]
    with pytest.raises(ScheduleError, match="store_sign"):
        protocol_config(store_sign=0.5)


def test_unwind_mismatch_warns(caplog):
    cfg = protocol_config(t1=3e-6, t2=4e-6)
    with caplog.at_level(logging.WARNING):
        schedule_gem_eit(cfg)
    assert "Gradient areas differ" in caplog.text

    caplog.clear()
    with caplog.at_level(logging.WARNING):
        schedule_gem_eit(protocol_config(t1=3e-6, t2=3e-6))
    assert "Gradient areas differ" not in caplog.text


def test_unknown_protocol():
    with pytest.raises(ScheduleError):
        build_schedule("gem_gem", protocol_config())


@pytest.mark.parametrize("protocol", PROTOCOLS)
def test_protocols_are_linear_and_passive(protocol):
    cfg = protocol_config(t1=3e-6, t2=3e-6, eit_read_duration=3e-6, eit_hold=2e-6, gem_read_lead=2e-6)
    base = run_protocol(protocol, cfg)
    scale = float(np.max(np.abs(base.exit_trace.values)))
    assert scale > 0
    assert 0.0 <= base.metrics["efficiency"] <= 1.0 + 1e-6
    for alpha in (0.5, 2.0, 1j):
        scaled = run_protocol(protocol, with_input(cfg, cfg.input_trace.scaled(alpha)))
        np.testing.assert_allclose(scaled.exit_trace.values, alpha * base.exit_trace.values,
                                   rtol=1e-10, atol=1e-10 * abs(alpha) * scale)
        assert scaled.metrics["efficiency"] == pytest.approx(base.metrics["efficiency"], rel=1e-9)
        assert scaled.metrics["efficiency"] <= 1.0 + 1e-6


def test_gem_only_run_bookkeeping():
    cfg = protocol_config(t1=3e-6, record_every=50)
    result = run_gem_only(cfg)
    steps = sum(r.steps for r in result.segments)
    assert len(result.exit_trace) == steps + 1
    assert result.exit_trace.t0 == pytest.approx(cfg.params.transit_time)
    assert result.write_window == pytest.approx((0.0, cfg.write_end))
    assert result.read_window[1] == pytest.approx(result.duration + cfg.params.transit_time)
    assert set(result.snapshots) >= {"gem_write", "store", "unwind", "gem_read"}
    assert 0.0 < result.metrics["efficiency"] < 1.0
    times = result.field_record.t
    assert times == sorted(set(times))


def test_gem_eit_hands_coherence_to_eit_read():
    cfg = protocol_config(dt=4e-9, t1=2e-6, t2=2e-6, eit_read_duration=2e-6)
    result = run_gem_write_eit_read(cfg)
    assert [r.mode for r in result.segments] == ["gem", "dark", "eit"]
    assert isinstance(result.final_state, EitState)
    stored = result.snapshots["unwind"]
    assert np.max(np.abs(stored)) > 0
    out = result.exit_trace.window(*result.read_window)
    assert np.max(np.abs(out.values)) > 0


@pytest.mark.slow
def test_eit_gem_round_trip():
    cfg = protocol_config(dt=4e-9, sigma=0.3e-6, window=3e-6, od=20.0, t1=2e-6, t2=2e-6,
                          gem_read_lead=1e-6, eit_settle=1e-6, density_width_fraction=None)
    result = run_eit_write_gem_read(cfg)
    assert [r.mode for r in result.segments] == ["eit", "eit", "dark", "dark", "gem"]
    assert isinstance(result.final_state, GemState)
    assert "stopped" in result.snapshots
    assert 0.0 < result.metrics["efficiency"] < 1.0


@pytest.mark.slow
def test_eit_store_and_release():
    params = physical(od=80)
    grid = make_grid(params, 101, 3.2e-6, 2e-9)
    trace = synthesize_input(PulseSpec(sigma_t=0.4e-6, center_t=1.6e-6), grid)
    cfg = ProtocolConfig(params=params, input_trace=trace, nz=101, density_width_fraction=None,
                         eit_hold=1e-6, eit_read_duration=4e-6)
    result = run_eit_only(cfg)
    assert [r.label for r in result.segments] == ["eit_write", "hold", "eit_read"]
    assert "stopped" in result.snapshots
    assert 0.1 < result.metrics["efficiency"] < 1.0


@pytest.mark.slow
def test_gem_echo_is_time_reversed():
    params = physical(od=80, gradient_mhz_per_mm=0.5)
    spec = PulseSpec(kind=PulseKind.DOUBLE_PULSE, sigma_t=0.3e-6, center_t=1.7e-6, separation=1e-6,
                     amplitudes=(1.0, 0.8), phases=(0.0, np.pi / 2), detunings=(0.0,))
    grid = make_grid(params, 201, 3.4e-6, 4e-9)
    cfg = ProtocolConfig(params=params, input_trace=synthesize_input(spec, grid), nz=201, t1=3e-6)
    result = run_gem_only(cfg)
    inp = result.input_trace.window(*result.write_window)
    out = result.exit_trace.window(*result.read_window)
    assert time_mirror_overlap(inp, out) >= 0.9
    # lobe order and relative phase are reversed, so no plain shift lines them up
    assert shifted_overlap(inp, out) <= 0.7
