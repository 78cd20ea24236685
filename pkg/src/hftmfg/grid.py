"""Segmented time grids and piecewise-defined curves.

The horizon [0, T] is split at the large trader's trade times
t_1 < ... < t_K.  Integrators advance on level-0 nodes (the configured
resolution) while every curve is stored on a twice-finer mesh so that
half-step stage values are available to downstream consumers.

Each segment keeps both of its endpoint samples, so one-sided limits at a
trade time survive: the last sample of segment k-1 is the left limit at t_k
and the first sample of segment k is the right-continuous value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Partition of [0, T] with a uniform fine mesh on every segment."""

    bounds: np.ndarray                  # (S+1,), bounds[0] = 0, bounds[-1] = T
    steps: tuple[int, ...]              # level-0 integrator steps per segment
    fine_times: tuple[np.ndarray, ...]  # per segment: 2*steps[s] + 1 samples

    @property
    def n_segments(self) -> int:
        return len(self.steps)

    @property
    def horizon(self) -> float:
        return float(self.bounds[-1])

    @property
    def trade_times(self) -> np.ndarray:
        return self.bounds[1:-1]

    def step_width(self, s: int) -> float:
        return float(self.bounds[s + 1] - self.bounds[s]) / self.steps[s]

    def level0_times(self, s: int) -> np.ndarray:
        return self.fine_times[s][::2]

    def total_level0_nodes(self) -> int:
        return sum(m + 1 for m in self.steps)


def make_grid(T: float, trade_times, steps_per_unit: int) -> TimeGrid:
    """Build a grid whose nodes contain every trade time exactly."""
    times = np.asarray(trade_times, dtype=float)
    bounds = np.concatenate(([0.0], times, [float(T)]))
    steps = []
    fine = []
    for s in range(len(bounds) - 1):
        width = float(bounds[s + 1] - bounds[s])
        m = max(1, int(round(steps_per_unit * width)))
        steps.append(m)
        # linspace pins both endpoints, so trade times are exact nodes
        fine.append(np.linspace(bounds[s], bounds[s + 1], 2 * m + 1))
    bounds.setflags(write=False)
    return TimeGrid(bounds, tuple(steps), tuple(fine))


@dataclass(frozen=True)
class PiecewiseCurve:
    """Vector-valued function of time, smooth inside each grid segment.

    ``segments[s]`` holds samples of shape (2*steps[s] + 1, dim) on the
    segment's fine mesh.  Evaluation is right-continuous by default; the left
    limit at an interior boundary is available through ``side="left"`` or
    ``left_at``.
    """

    grid: TimeGrid
    segments: tuple[np.ndarray, ...]

    @property
    def dim(self) -> int:
        return self.segments[0].shape[1]

    def node_values(self, s: int) -> np.ndarray:
        return self.segments[s][::2]

    def initial(self) -> np.ndarray:
        return self.segments[0][0]

    def terminal(self) -> np.ndarray:
        return self.segments[-1][-1]

    def left_at(self, k: int) -> np.ndarray:
        """Left limit at interior boundary k (1-based trade index)."""
        return self.segments[k - 1][-1]

    def right_at(self, k: int) -> np.ndarray:
        return self.segments[k][0]

    def segment_of(self, t: float, side: str = "right") -> int:
        inner = self.grid.bounds[1:-1]
        pos = int(np.searchsorted(inner, t, side="right" if side == "right" else "left"))
        return min(max(pos, 0), self.grid.n_segments - 1)

    def eval(self, t: float, side: str = "right") -> np.ndarray:
        s = self.segment_of(t, side)
        ft = self.grid.fine_times[s]
        vals = self.segments[s]
        if len(ft) == 1:
            return vals[0]
        h = ft[1] - ft[0]
        u = (float(t) - ft[0]) / h
        i = min(max(int(math.floor(u)), 0), len(ft) - 2)
        w = u - i
        return (1.0 - w) * vals[i] + w * vals[i + 1]

    def map(self, fn) -> "PiecewiseCurve":
        return PiecewiseCurve(self.grid, tuple(fn(seg) for seg in self.segments))


def weighted_aggregate(curve: PiecewiseCurve, weights: PiecewiseCurve) -> PiecewiseCurve:
    """Scalar curve sum_i w_i(t) * c_i(t), sampled on the shared mesh."""
    segs = tuple(
        np.sum(w * c, axis=1, keepdims=True)
        for w, c in zip(weights.segments, curve.segments)
    )
    return PiecewiseCurve(curve.grid, segs)


def lincomb(curves: list[PiecewiseCurve], coeffs) -> PiecewiseCurve:
    """Linear combination of curves defined on the same grid."""
    coeffs = np.asarray(coeffs, dtype=float)
    grid = curves[0].grid
    segs = []
    for s in range(grid.n_segments):
        acc = np.zeros_like(curves[0].segments[s])
        for c, curve in zip(coeffs, curves):
            acc = acc + c * curve.segments[s]
        segs.append(acc)
    return PiecewiseCurve(grid, tuple(segs))
