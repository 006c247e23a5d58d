"""
Single runs and parameter sweeps: config → protocol run → detection → files.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from app.cli.config_models import RunConfig, apply_overrides, defaulted_keys, sweep_plan
from app.core.exceptions import HybridMemoryError
from app.domain.models import ComplexTrace, PhysicalParams, RealTrace, RunResult
from app.helpers.utils import normalize_column_name
from app.services import output
from app.services.analysis import Spectrum, spectrum
from app.services.sequence import run_protocol
from app.services.signal import (
    acquire_sequences,
    demodulate,
    lowpass_design,
    synthesize_input,
)
from app.solvers.eit_solver import group_velocity, slow_light_delay

logger = logging.getLogger(__name__)


@dataclass
class RunArtifacts:
    """Everything one run produces before it is written to disk."""
    config: RunConfig
    seed: int
    params: PhysicalParams
    result: RunResult
    detector: RealTrace
    demodulated: ComplexTrace
    spectrum: Spectrum
    filter_design: dict


@dataclass
class SweepRowResult:
    """Outcome of one sweep point."""
    index: int
    success: bool
    values: dict[str, Any]
    metrics: dict = field(default_factory=dict)
    error: Optional[str] = None


def execute_run(config: RunConfig, seed: int) -> RunArtifacts:
    params = config.physical_params()
    write_grid = config.write_grid(params)
    pulse = config.pulse_spec()
    input_trace = synthesize_input(pulse, write_grid)
    result = run_protocol(config.protocol, config.protocol_config(params, input_trace))

    det = config.detection_spec(seed)
    detector = acquire_sequences(result.exit_trace, det)
    demodulated = demodulate(detector, det, sigma_min=pulse.sigma_min)
    read = result.exit_trace.window(*result.read_window)
    spec = spectrum(read, window=config.output.spectrum_window)
    return RunArtifacts(config, seed, params, result, detector, demodulated, spec,
                        lowpass_design(det, result.exit_trace.dt))


def derived_quantities(params: PhysicalParams, omega_c: float) -> dict:
    return {
        "g_p": params.g_p,
        "v_g_at_omega_c_max": group_velocity(params, omega_c),
        "memory_bandwidth_mhz": params.memory_bandwidth / (2 * math.pi * 1e6),
        "slow_light_delay_us": slow_light_delay(params, omega_c) * 1e6,
        "transit_time_s": params.transit_time,
    }


def write_run(artifacts: RunArtifacts, out_dir: Path, started: str) -> Path:
    """Write the selected outputs and the manifest; returns the manifest path."""
    emits = artifacts.config.emits
    result = artifacts.result
    files: list[Path] = []
    if "trace" in emits:
        files.append(output.write_complex_trace(result.input_trace, out_dir / "input_trace.csv"))
        files.append(output.write_complex_trace(result.exit_trace, out_dir / "exit_trace.csv"))
        files.append(output.write_real_trace(artifacts.detector, out_dir / "heterodyne_trace.csv"))
        files.append(output.write_complex_trace(artifacts.demodulated, out_dir / "demodulated_trace.csv"))
    if "spectrum" in emits:
        files.append(output.write_spectrum(artifacts.spectrum, out_dir / "spectrum.csv"))
    if "metrics" in emits:
        files.append(output.write_metrics(result.metrics, out_dir / "metrics.csv"))
    if "fields" in emits:
        if result.field_record is None:
            logger.warning("Field output requested but output.record_every is not set")
        else:
            files.extend(output.write_field_record(
                result.field_record, artifacts.params.length,
                out_dir / "fields.csv", out_dir / "coherence.csv"))

    params = artifacts.params
    resolved = dataclasses.asdict(params)
    resolved.update({
        "nz": artifacts.config.grid.nz,
        "dz": params.length / (artifacts.config.grid.nz - 1),
        "dt": result.exit_trace.dt,
        "write_window": list(result.write_window),
        "read_window": list(result.read_window),
    })
    derived = derived_quantities(params, params.omega_c_max)
    derived["lowpass_filter"] = artifacts.filter_design
    derived.update(result.metadata)
    return output.write_manifest(
        out_dir,
        config=artifacts.config.model_dump(mode="json"),
        resolved_si=resolved,
        derived=derived,
        defaulted=defaulted_keys(artifacts.config),
        files=files,
        started=started,
        metrics=result.metrics,
        seed=artifacts.seed,
    )


def run_to_directory(config: RunConfig, seed: int, out_dir: Path) -> RunArtifacts:
    started = output.utc_now()
    artifacts = execute_run(config, seed)
    manifest = write_run(artifacts, out_dir, started)
    logger.info("Run written to %s", manifest.parent)
    return artifacts


# ── Sweeps ───────────────────────────────────────────────────────────────

def child_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _sweep_point(args: tuple[int, dict, dict, int, str]) -> SweepRowResult:
    index, values, config_data, seed, out_root = args
    try:
        config = apply_overrides(RunConfig.model_validate(config_data), values)
        artifacts = run_to_directory(config, child_seed(seed, index),
                                     Path(out_root) / f"run_{index:04d}")
        return SweepRowResult(index, True, values, artifacts.result.metrics)
    except Exception as exc:
        if isinstance(exc, HybridMemoryError):
            logger.error("Sweep point %d (%s) failed: %s", index, values, exc)
        else:
            logger.exception("Sweep point %d (%s) failed unexpectedly", index, values)
        return SweepRowResult(index, False, values, error=f"{type(exc).__name__}: {exc}")


def aggregate(rows: list[SweepRowResult]) -> pd.DataFrame:
    """One row per sweep point, in plan order."""
    records = []
    for row in sorted(rows, key=lambda r: r.index):
        record: dict[str, Any] = {normalize_column_name(k): v for k, v in row.values.items()}
        m = row.metrics
        record["delay_us"] = m.get("delay_us", math.nan)
        record["sigma_us"] = m.get("sigma_us", math.nan)
        record["efficiency"] = m.get("efficiency", math.nan)
        record["n_peaks"] = m.get("n_peaks", 0)
        record["peak_freqs_MHz"] = ";".join(repr(float(f)) for f in m.get("peak_freqs_mhz", []))
        record["error"] = row.error or ""
        records.append(record)
    return pd.DataFrame.from_records(records)


def run_sweep(config: RunConfig, seed: int, out_dir: Path,
              workers: int = 1) -> tuple[pd.DataFrame, list[SweepRowResult]]:
    """Run every sweep point independently and write ``sweep.csv``."""
    plan = sweep_plan(config)
    logger.info("Sweep: %d runs over %s with %d worker(s)", len(plan),
                [a.name for a in config.sweep.axes], workers)
    data = config.model_dump(mode="json", exclude_unset=True)
    jobs = [(i, values, data, seed, str(out_dir)) for i, values in enumerate(plan)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(job) for job in jobs]
    table = aggregate(rows)
    output.write_table(table, out_dir / "sweep.csv")
    failed = sum(not r.success for r in rows)
    if failed:
        logger.warning("%d of %d sweep runs failed", failed, len(rows))
    return table, rows
