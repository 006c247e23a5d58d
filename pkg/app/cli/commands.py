"""
``run`` and ``sweep`` commands. Each returns a process exit code:
0 success, 1 invalid configuration, 2 solver or detection failure,
3 sweep finished with failed points.
"""

import logging
from pathlib import Path
from typing import Optional

from app.cli.config_models import RunConfig, parse_config, validate_config
from app.core.config import settings
from app.core.exceptions import ConfigError, HybridMemoryError
from app.helpers.utils import set_dotted
from app.services.runner import run_sweep, run_to_directory

logger = logging.getLogger(__name__)

PARTIAL_SWEEP_EXIT = 3


def load_config(path: Path, emit: Optional[list[str]] = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    config = parse_config(text)
    if emit:
        # validated again so the override survives exclude_unset dumps
        data = config.model_dump(mode="json", exclude_unset=True)
        config = validate_config(set_dotted(data, "output.emit", emit))
    return config


def resolve_seed(cli_seed: Optional[int], config: RunConfig) -> int:
    """--seed, then the document's ``seed``, then HYBRID_MEMORY_SEED, then 0."""
    for candidate in (cli_seed, config.seed, settings.SEED):
        if candidate is not None:
            return int(candidate)
    return 0


def resolve_out_dir(out_dir: Optional[Path], config_path: Path) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    return Path(settings.OUTPUT_DIR) / Path(config_path).stem


def run_command(config_path: Path, out_dir: Optional[Path] = None, seed: Optional[int] = None,
                emit: Optional[list[str]] = None) -> int:
    try:
        config = load_config(config_path, emit)
        seed_value = resolve_seed(seed, config)
        target = resolve_out_dir(out_dir, config_path)
        logger.info("Protocol %s, seed %d, output %s", config.protocol, seed_value, target)
        artifacts = run_to_directory(config, seed_value, target)
    except HybridMemoryError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code

    metrics = artifacts.result.metrics
    logger.info("Efficiency %.4g, delay %.4g µs, %d peak(s)",
                metrics.get("efficiency", float("nan")), metrics.get("delay_us", float("nan")),
                metrics.get("n_peaks", 0))
    return 0


def sweep_command(config_path: Path, out_dir: Optional[Path] = None, seed: Optional[int] = None,
                  emit: Optional[list[str]] = None) -> int:
    try:
        config = load_config(config_path, emit)
        seed_value = resolve_seed(seed, config)
        target = resolve_out_dir(out_dir, config_path)
        workers = config.sweep.workers or settings.SWEEP_WORKERS
        _, rows = run_sweep(config, seed_value, target, workers)
    except HybridMemoryError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code

    if any(not row.success for row in rows):
        return PARTIAL_SWEEP_EXIT
    logger.info("Sweep of %d runs written to %s", len(rows), target)
    return 0
