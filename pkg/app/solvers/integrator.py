"""
Spatial march shared by the GEM and EIT solvers.

Both solvers integrate a linear first-order ODE along z at every instant,

    dy/dz = a(z)·y + s(z),   y(0) = y0,

with a classical RK4 step per cell. Because the ODE is linear, one cell
reduces to ``y[j+1] = M[j]·y[j] + c[j]``: ``M`` depends only on ``a`` and is
fixed for a whole segment, ``c`` is linear in the source. The recurrence is
then solved with prefix products, so a march costs a handful of vector ops.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from app.core.grid import midpoints

logger = logging.getLogger(__name__)

# Prefix products below this magnitude lose the source terms to underflow;
# the march falls back to the sequential recurrence.
_PREFIX_FLOOR = 1e-250


@dataclass(frozen=True)
class LinearMarch:
    """Precomputed RK4 cell factors for a fixed coefficient profile a(z)."""
    h: float
    a_nodes: np.ndarray
    a_mid: np.ndarray
    m: np.ndarray
    prefix: np.ndarray
    vectorised: bool

    @classmethod
    def build(cls, a_nodes: np.ndarray, a_mid: np.ndarray, h: float) -> LinearMarch:
        a_nodes = np.asarray(a_nodes, dtype=complex)
        a_mid = np.asarray(a_mid, dtype=complex)
        a1, a2, a3 = a_nodes[:-1], a_mid, a_nodes[1:]
        al1 = a1
        al2 = a2 * (1 + 0.5 * h * al1)
        al3 = a2 * (1 + 0.5 * h * al2)
        al4 = a3 * (1 + h * al3)
        m = 1 + h / 6 * (al1 + 2 * al2 + 2 * al3 + al4)
        prefix = np.concatenate(([1.0 + 0j], np.cumprod(m)))
        vectorised = bool(np.all(np.abs(prefix) > _PREFIX_FLOOR))
        if not vectorised:
            logger.debug("Spatial march prefix underflows, using sequential recurrence")
        return cls(h, a_nodes, a_mid, m, prefix, vectorised)

    @classmethod
    def free(cls, nz: int, h: float) -> LinearMarch:
        """a ≡ 0: the march is Simpson quadrature of the source."""
        zero = np.zeros(nz, dtype=complex)
        return cls.build(zero, zero[:-1], h)

    def cell_sources(self, s_nodes: np.ndarray, s_mid: np.ndarray) -> np.ndarray:
        """Additive term c[j] of every cell for the source s(z)."""
        h = self.h
        a2, a3 = self.a_mid, self.a_nodes[1:]
        g1 = s_nodes[..., :-1]
        g2 = 0.5 * h * a2 * g1 + s_mid
        g3 = 0.5 * h * a2 * g2 + s_mid
        g4 = h * a3 * g3 + s_nodes[..., 1:]
        return h / 6 * (g1 + 2 * g2 + 2 * g3 + g4)

    def solve(self, y0: complex, s_nodes: np.ndarray, s_mid: np.ndarray) -> np.ndarray:
        """y over all nodes for boundary value y0 and source samples."""
        c = self.cell_sources(s_nodes, s_mid)
        if self.vectorised:
            acc = np.concatenate(([0j], np.cumsum(c / self.prefix[1:])))
            return self.prefix * (y0 + acc)
        y = np.empty(len(self.prefix), dtype=complex)
        y[0] = y0
        for j in range(len(self.m)):
            y[j + 1] = self.m[j] * y[j] + c[j]
        return y


def source_midpoints(coefficient_mid: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Midpoint samples of coefficient·values with values interpolated to 4th order."""
    return coefficient_mid * midpoints(values)
