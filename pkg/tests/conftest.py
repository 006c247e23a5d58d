import math
import shutil
import textwrap
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from app.core.grid import flat_density, make_grid
from app.domain.models import PhysicalParams

GOLDEN_DIR = Path(__file__).parent / "golden"

TWO_PI = 2 * math.pi
GAMMA = TWO_PI * 5.75e6


def physical(od: float = 5.0, *, length: float = 0.01, gradient_mhz_per_mm: float = 0.08,
             delta_mhz: float = 30.0, omega_c_mhz: float = 6.9, **extra) -> PhysicalParams:
    """PhysicalParams from config-like numbers."""
    return PhysicalParams(
        od=od,
        gamma=extra.pop("gamma", GAMMA),
        length=length,
        beta=TWO_PI * gradient_mhz_per_mm * 1e6 / 1e-3,
        delta=TWO_PI * delta_mhz * 1e6,
        omega_c_max=TWO_PI * omega_c_mhz * 1e6,
        **extra,
    )


@pytest.fixture
def params() -> PhysicalParams:
    return physical()


@pytest.fixture
def small_grid(params):
    return make_grid(params, 41, 2e-6, 1e-8)


@pytest.fixture
def flat(small_grid):
    return flat_density(small_grid)


@pytest.fixture
def write_config(tmp_path):
    """Write a TOML document and return its path."""

    def _write(text: str, name: str = "run.toml") -> Path:
        path = tmp_path / name
        path.write_text(textwrap.dedent(text), encoding="utf-8")
        return path

    return _write


def pytest_addoption(parser):
    parser.addoption("--update-golden", action="store_true", default=False,
                     help="rewrite the snapshots in tests/golden from this run")


@pytest.fixture
def golden(request):
    """Compare a CSV with its committed snapshot in tests/golden.

    A missing snapshot fails; ``--update-golden`` rewrites it instead.
    """
    update = request.config.getoption("--update-golden")

    def _check(path: Path, name: str, rtol: float = 1e-9) -> None:
        target = GOLDEN_DIR / name
        if update:
            GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(path, target)
            return
        if not target.exists():
            pytest.fail(f"snapshot {target} is missing; record it with `task golden`")
        expected = pd.read_csv(target)
        actual = pd.read_csv(path)
        assert list(actual.columns) == list(expected.columns)
        np.testing.assert_allclose(actual.to_numpy(float), expected.to_numpy(float),
                                   rtol=rtol, atol=1e-12)

    return _check
