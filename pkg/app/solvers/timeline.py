"""Segment bookkeeping shared by both solvers: step counts and input sampling."""

import logging
from typing import Optional, Sequence

import numpy as np

from app.core.exceptions import ScheduleError
from app.core.grid import midpoints
from app.domain.models import ComplexTrace, Segment, SimGrid

logger = logging.getLogger(__name__)

# Segment durations must be whole multiples of dt to this relative tolerance.
_STEP_TOLERANCE = 1e-6


def segment_steps(segments: Sequence[Segment], dt: float) -> list[int]:
    """Number of time steps per segment; rejects durations off the dt lattice."""
    steps = []
    for seg in segments:
        ratio = seg.duration / dt
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > _STEP_TOLERANCE * max(1.0, ratio):
            raise ScheduleError(
                f"segment {seg.label!r}: duration {seg.duration:.6g} s is not a "
                f"whole number of steps of {dt:.6g} s"
            )
        steps.append(n)
    return steps


def check_tiling(segments: Sequence[Segment], grid: SimGrid) -> list[int]:
    """Segments must cover the grid's time span exactly, without gaps or overlap."""
    if not segments:
        raise ScheduleError("schedule has no segments")
    steps = segment_steps(segments, grid.dt)
    total = sum(steps)
    if total != grid.nt - 1:
        raise ScheduleError(
            f"segments span {total} steps but the grid has {grid.nt - 1}"
        )
    return steps


def input_samples(trace: Optional[ComplexTrace], grid: SimGrid) -> tuple[np.ndarray, np.ndarray]:
    """Boundary input on the grid's time nodes and at step midpoints.

    Samples of ``trace`` outside the grid are dropped; grid nodes the trace
    does not reach are zero.
    """
    nodes = np.zeros(grid.nt, dtype=complex)
    if trace is not None and len(trace):
        if abs(trace.dt - grid.dt) > 1e-9 * grid.dt:
            raise ScheduleError(
                f"input trace dt {trace.dt:.6g} s differs from grid dt {grid.dt:.6g} s"
            )
        offset = (trace.t0 - grid.t0) / grid.dt
        start = int(round(offset))
        if abs(offset - start) > 1e-6:
            raise ScheduleError("input trace is not aligned with the time grid")
        lo = max(start, 0)
        hi = min(start + len(trace), grid.nt)
        if hi > lo:
            nodes[lo:hi] = trace.values[lo - start:hi - start]
    return nodes, midpoints(nodes)
