"""Type-distribution dynamics of the switching crowd.

Solves the forward equation dp/dt = Q^T p for the state probabilities and
exposes the reweighted generator p_Q(t) whose (i, j) entry for j != i is
(p_j / p_i) Q^{ji}, with the diagonal chosen so rows sum to zero.  p_Q drives
the per-state mean-inventory dynamics dE_i/dt = mu_i + (p_Q E)_i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AversionSpec
from .errors import SolverError
from .grid import PiecewiseCurve, TimeGrid

POSITIVITY_FLOOR = 1e-10
CONSERVATION_TOL = 1e-10


def onestep_matrix(A: np.ndarray, h: float, method: str) -> np.ndarray:
    """One-step map of dy/dt = A y for the chosen integrator.

    For a linear autonomous system the classic Euler/RK4 update is exactly
    multiplication by the truncated exponential, so we apply that matrix
    directly instead of looping over stages.
    """
    hA = h * A
    M = np.eye(A.shape[0]) + hA
    if method == "rk4":
        hA2 = hA @ hA
        M = M + hA2 / 2.0 + (hA2 @ hA) / 6.0 + (hA2 @ hA2) / 24.0
    elif method != "euler":
        raise ValueError(f"unknown integrator {method!r}")
    return M


@dataclass(frozen=True)
class ChainSolution:
    p: PiecewiseCurve   # (n, N) probabilities on the fine mesh, smooth on [0, T]
    Q: np.ndarray

    def p_at(self, t: float) -> np.ndarray:
        return self.p.eval(t)


def solve_chain(aversion: AversionSpec, grid: TimeGrid, method: str = "rk4") -> ChainSolution:
    """Integrate the forward equation on the grid's fine mesh."""
    Q = np.asarray(aversion.Q, dtype=float)
    N = aversion.n_states
    cur = np.array(aversion.p0, dtype=float)
    segs = []
    static = not np.any(Q)
    for s in range(grid.n_segments):
        m2 = 2 * grid.steps[s]
        out = np.empty((m2 + 1, N))
        out[0] = cur
        if static:
            out[1:] = cur
        else:
            M = onestep_matrix(Q.T, grid.step_width(s) / 2.0, method)
            for i in range(m2):
                cur = M @ cur
                out[i + 1] = cur
        cur = out[-1]
        segs.append(out)
    curve = PiecewiseCurve(grid, tuple(segs))
    _check_chain(curve)
    return ChainSolution(curve, Q)


def _check_chain(curve: PiecewiseCurve) -> None:
    for s, seg in enumerate(curve.segments):
        sums = seg.sum(axis=1)
        bad = np.abs(sums - 1.0) > CONSERVATION_TOL
        if np.any(bad):
            t = curve.grid.fine_times[s][np.argmax(bad)]
            raise SolverError(f"probability mass not conserved at t={t:.6g}")
        low = seg.min(axis=1) <= POSITIVITY_FLOOR
        if np.any(low):
            t = curve.grid.fine_times[s][np.argmax(low)]
            raise SolverError(f"state probability not strictly positive at t={t:.6g}")


def pq_matrix(p: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Reweighted generator for one probability vector."""
    raw = Q.T * (p[None, :] / p[:, None])
    return raw - np.diag(raw.sum(axis=1))


def pq_batch(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Reweighted generators for a batch of probability vectors, shape (n, N, N)."""
    raw = Q.T[None, :, :] * (P[:, None, :] / P[:, :, None])
    out = raw.copy()
    idx = np.arange(Q.shape[0])
    out[:, idx, idx] -= raw.sum(axis=2)
    return out


def build_pQ(chain: ChainSolution, aversion: AversionSpec, t: float, side: str = "right") -> np.ndarray:
    """Evaluate p_Q(t) lazily from the stored probabilities."""
    p = chain.p.eval(t, side=side)
    if np.any(p <= POSITIVITY_FLOOR):
        raise SolverError(f"state probability not strictly positive at t={t:.6g}")
    return pq_matrix(p, np.asarray(aversion.Q, dtype=float))
