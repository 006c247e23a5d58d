"""Grid construction, atomic density profile and midpoint interpolation."""

import logging
import math

import numpy as np
from scipy.integrate import quad

from app.core.exceptions import ConfigError
from app.domain.models import DensityProfile, PhysicalParams, SimGrid

logger = logging.getLogger(__name__)


def make_grid(params: PhysicalParams, nz: int, duration: float, dt: float,
              t0: float = 0.0) -> SimGrid:
    """Uniform grid covering z ∈ [0, L] and t ∈ [t0, t0 + duration]."""
    if nz < 2:
        raise ConfigError(f"nz must be at least 2, got {nz}")
    if not (dt > 0 and math.isfinite(dt)):
        raise ConfigError(f"dt must be positive, got {dt!r}")
    if not (duration > dt and math.isfinite(duration)):
        raise ConfigError(f"duration must exceed dt, got duration={duration!r}, dt={dt!r}")
    nt = int(round(duration / dt)) + 1
    return SimGrid(nz=nz, nt=nt, dz=params.length / (nz - 1), dt=dt, t0=t0)


def super_gaussian(z: np.ndarray, order: int, width: float, length: float) -> np.ndarray:
    return np.exp(-np.power(2.0 * (z - 0.5 * length) / width, 2 * order))


def sample_density(order: int, width: float, grid: SimGrid) -> DensityProfile:
    """Super-Gaussian n(z) ∝ exp(−(2(z−L/2)/w)^(2m)) normalised to (1/L)∫n dz = 1."""
    if order < 1:
        raise ConfigError(f"density order must be >= 1, got {order}")
    if not (width > 0 and math.isfinite(width)):
        raise ConfigError(f"density width must be positive, got {width!r}")
    length = grid.length
    edges = [0.5 * length - 0.5 * width, 0.5 * length + 0.5 * width]
    points = [p for p in edges if 0.0 < p < length] or None
    integral, _ = quad(
        lambda x: float(super_gaussian(np.asarray(x), order, width, length)),
        0.0, length, points=points, epsabs=0.0, epsrel=1e-13, limit=200,
    )
    scale = length / integral
    z = grid.z
    mid = z[:-1] + 0.5 * grid.dz
    return DensityProfile(
        order=order,
        width=width,
        samples=scale * super_gaussian(z, order, width, length),
        mid_samples=scale * super_gaussian(mid, order, width, length),
    )


def flat_density(grid: SimGrid) -> DensityProfile:
    """Uniform n(z) = 1."""
    return DensityProfile(order=1, width=math.inf,
                          samples=np.ones(grid.nz), mid_samples=np.ones(grid.nz - 1))


def midpoints(values: np.ndarray) -> np.ndarray:
    """Values at cell midpoints by cubic Lagrange interpolation (4th order).

    Works along the last axis; falls back to lower order on very small grids.
    """
    a = np.asarray(values)
    n = a.shape[-1]
    if n == 2:
        return 0.5 * (a[..., :1] + a[..., 1:])
    if n == 3:
        left = (3 * a[..., 0] + 6 * a[..., 1] - a[..., 2]) / 8
        right = (-a[..., 0] + 6 * a[..., 1] + 3 * a[..., 2]) / 8
        return np.stack([left, right], axis=-1)
    out = np.empty(a.shape[:-1] + (n - 1,), dtype=np.result_type(a, float))
    out[..., 1:-1] = (-a[..., :-3] + 9 * a[..., 1:-2] + 9 * a[..., 2:-1] - a[..., 3:]) / 16
    out[..., 0] = (5 * a[..., 0] + 15 * a[..., 1] - 5 * a[..., 2] + a[..., 3]) / 16
    out[..., -1] = (a[..., -4] - 5 * a[..., -3] + 15 * a[..., -2] + 5 * a[..., -1]) / 16
    return out


def simpson_weights(nz: int, dz: float) -> np.ndarray:
    """Quadrature weights for ∫ f dz on the grid (composite Simpson when possible)."""
    w = np.full(nz, dz)
    w[0] = w[-1] = 0.5 * dz
    if nz >= 3 and (nz - 1) % 2 == 0:
        w = np.empty(nz)
        w[0] = w[-1] = dz / 3
        w[1:-1:2] = 4 * dz / 3
        w[2:-1:2] = 2 * dz / 3
    return w
