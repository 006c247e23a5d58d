"""
Plot-ready CSV files and the run manifest.

CSV schemas (17 significant digits):
    traces            time_us, re, im
    detector trace    time_us, volts
    spectrum          freq_MHz, re, im, mag
    metrics           one row, one column per metric
    fields            t_us, z_mm, re, im     (t slowest, then z)
    coherence         t_us, z_mm, abs        (same ordering)
"""

import json
import logging
import os
import platform
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

import app
from app.core.config import settings
from app.domain.models import ComplexTrace, FieldRecord, RealTrace
from app.helpers.utils import sha256_file
from app.services.analysis import Spectrum

logger = logging.getLogger(__name__)


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=settings.FLOAT_FORMAT, lineterminator="\n")
    return path


def _write_json(path: Path, data: Any) -> Path:
    os.makedirs(path.parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False, default=_json_default)
        f.write("\n")
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    raise TypeError(f"cannot serialise {type(value).__name__}")


def write_complex_trace(trace: ComplexTrace, path: Path) -> Path:
    return _write_csv(pd.DataFrame({
        "time_us": trace.t * 1e6,
        "re": trace.values.real,
        "im": trace.values.imag,
    }), path)


def write_real_trace(trace: RealTrace, path: Path) -> Path:
    return _write_csv(pd.DataFrame({"time_us": trace.t * 1e6, "volts": trace.values}), path)


def write_spectrum(spec: Spectrum, path: Path) -> Path:
    return _write_csv(pd.DataFrame({
        "freq_MHz": spec.frequency / (2 * np.pi * 1e6),
        "re": spec.amplitude.real,
        "im": spec.amplitude.imag,
        "mag": spec.magnitude,
    }), path)


def flatten_metrics(metrics: dict) -> dict:
    """Lists become ';'-joined strings so a metrics row stays one CSV line."""
    flat = {}
    for key, value in metrics.items():
        if isinstance(value, (list, tuple)):
            flat[key] = ";".join(repr(float(v)) for v in value)
        else:
            flat[key] = value
    return flat


def write_metrics(metrics: dict, path: Path) -> Path:
    return _write_csv(pd.DataFrame([flatten_metrics(metrics)]), path)


def write_field_record(record: FieldRecord, length: float, field_path: Path,
                       coherence_path: Path) -> list[Path]:
    """Dense (t, z) tables of A and |ρ_gh|, time-major."""
    if not record.t:
        logger.warning("Field record is empty; nothing to write")
        return []
    rows = np.stack(record.field_rows)
    coherence = np.stack(record.coherence_rows)
    nt, nz = rows.shape
    t_us = np.repeat(np.asarray(record.t) * 1e6, nz)
    z_mm = np.tile(np.linspace(0.0, length, nz) * 1e3, nt)
    flat = rows.ravel()
    return [
        _write_csv(pd.DataFrame({"t_us": t_us, "z_mm": z_mm, "re": flat.real, "im": flat.imag}),
                   field_path),
        _write_csv(pd.DataFrame({"t_us": t_us, "z_mm": z_mm, "abs": coherence.ravel()}),
                   coherence_path),
    ]


def write_table(frame: pd.DataFrame, path: Path) -> Path:
    return _write_csv(frame, path)


def package_versions() -> dict:
    versions = {"python": platform.python_version(), "hybrid-memory": app.__version__}
    for name in ("numpy", "scipy", "pandas", "pydantic", "pydantic-settings"):
        try:
            versions[name] = version(name)
        except PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def file_inventory(paths: list[Path], root: Path) -> dict:
    return {
        str(p.relative_to(root)): {"sha256": sha256_file(p), "bytes": p.stat().st_size}
        for p in sorted(paths)
    }


def write_manifest(out_dir: Path, *, config: dict, resolved_si: dict, derived: dict,
                   defaulted: list[str], files: list[Path], started: str,
                   metrics: Optional[dict] = None, seed: Optional[int] = None) -> Path:
    """``manifest.json``: config echo, SI parameters, derived values, checksums."""
    data = {
        "config": config,
        "seed": seed,
        "resolved_si": resolved_si,
        "derived": derived,
        "defaulted_keys": defaulted,
        "metrics": flatten_metrics(metrics or {}),
        "versions": package_versions(),
        "timestamps": {"started": started, "finished": utc_now()},
        "files": file_inventory(files, out_dir),
    }
    return _write_json(out_dir / "manifest.json", data)
