"""Backward value-function coefficients and the crowd's feedback control.

Each trader's value of holding x shares at price P in state i is
P*x + h0_i(t) + h1_i(t)*x + h2_i(t)*x^2.  The quadratic coefficient solves a
coupled backward Riccati system

    dh2_i/dt = -(h2_i)^2/eta + phi_i - sum_j Q^{ij} h2_j,   h2_i(T) = -Gamma_i,

continuous across trade times.  The linear coefficient jumps down by
gamma*xi_k at each trade time and is recovered algebraically from the
solved mean field (h1_i = 2*eta*mu_i - 2*h2_i*E_i + lambdaH*mu); a direct
backward integration is kept as an independent cross-check.  The optimal
feedback control is

    v(t, x, i) = (h1_i(t) + 2*h2_i(t)*x - lambdaH*mu(t)) / (2*eta),

equivalently mu_i(t) + (h2_i(t)/eta)*(x - E_i(t)).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import AversionSpec, MarketParams
from .errors import ResidualWarning, SolverError
from .grid import PiecewiseCurve, TimeGrid

BOX_SLACK = 1e-8
JUMP_MISMATCH_TOL = 1e-6


def h2_box_bound(aversion: AversionSpec, market: MarketParams) -> float:
    """Envelope C with h2_i(t) in [-C, 0] for all states and times."""
    return float(np.max(np.maximum(aversion.Gamma, np.sqrt(market.eta * aversion.phi))))


def solve_h2(aversion: AversionSpec, market: MarketParams, grid: TimeGrid,
             method: str = "rk4") -> PiecewiseCurve:
    """Integrate the quadratic coefficient backward from -Gamma on the fine mesh."""
    N = aversion.n_states
    eta = market.eta
    phi = np.asarray(aversion.phi, dtype=float)
    Q = np.asarray(aversion.Q, dtype=float)
    segs: list[np.ndarray | None] = [None] * grid.n_segments
    cur = -np.asarray(aversion.Gamma, dtype=float)

    if N == 1:
        ph = float(phi[0])
        q = float(Q[0, 0])
        inv_eta = 1.0 / eta
        h = float(cur[0])
        for s in reversed(range(grid.n_segments)):
            m2 = 2 * grid.steps[s]
            dt = grid.step_width(s) / 2.0
            out = np.empty((m2 + 1, 1))
            out[-1, 0] = h
            if method == "rk4":
                for i in range(m2):
                    k1 = h * h * inv_eta - ph + q * h
                    y = h + 0.5 * dt * k1
                    k2 = y * y * inv_eta - ph + q * y
                    y = h + 0.5 * dt * k2
                    k3 = y * y * inv_eta - ph + q * y
                    y = h + dt * k3
                    k4 = y * y * inv_eta - ph + q * y
                    h = h + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
                    out[m2 - 1 - i, 0] = h
            else:
                for i in range(m2):
                    h = h + dt * (h * h * inv_eta - ph + q * h)
                    out[m2 - 1 - i, 0] = h
            segs[s] = out
    else:
        def g(y):
            # time runs backward here: d h2 / d(T - t)
            return y * y / eta - phi + Q @ y
        for s in reversed(range(grid.n_segments)):
            m2 = 2 * grid.steps[s]
            dt = grid.step_width(s) / 2.0
            out = np.empty((m2 + 1, N))
            out[-1] = cur
            if method == "rk4":
                for i in range(m2):
                    k1 = g(cur)
                    k2 = g(cur + 0.5 * dt * k1)
                    k3 = g(cur + 0.5 * dt * k2)
                    k4 = g(cur + dt * k3)
                    cur = cur + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
                    out[m2 - 1 - i] = cur
            else:
                for i in range(m2):
                    cur = cur + dt * g(cur)
                    out[m2 - 1 - i] = cur
            segs[s] = out
        cur = segs[0][0]

    curve = PiecewiseCurve(grid, tuple(segs))
    _check_box(curve, aversion, market)
    return curve


def _check_box(curve: PiecewiseCurve, aversion: AversionSpec, market: MarketParams) -> None:
    C = h2_box_bound(aversion, market)
    for s, seg in enumerate(curve.segments):
        bad = (seg < -C - BOX_SLACK) | (seg > 1e-12)
        if np.any(bad):
            t = curve.grid.fine_times[s][np.argmax(np.any(bad, axis=1))]
            raise SolverError(
                f"quadratic coefficient left [{-C:.6g}, 0] at t={t:.6g}; refine the grid")


@dataclass(frozen=True)
class H1Diagnostics:
    jump_residuals: np.ndarray   # (K, N): (left - right) - gamma*xi_k per state
    terminal: np.ndarray         # (N,): h1(T), zero up to shooting error


def recover_h1(sol, h2: PiecewiseCurve, market: MarketParams) -> tuple[PiecewiseCurve, H1Diagnostics]:
    """Algebraic recovery of the linear coefficient from a solved mean field.

    ``sol`` must expose mu_by_state, E_by_state, mu_agg and xi.  The jump at
    each trade time is cross-checked against gamma*xi_k.
    """
    segs = []
    for mu_s, E_s, mua_s, h2_s in zip(sol.mu_by_state.segments, sol.E_by_state.segments,
                                      sol.mu_agg.segments, h2.segments):
        segs.append(2.0 * market.eta * mu_s - 2.0 * h2_s * E_s + market.lam_h * mua_s)
    curve = PiecewiseCurve(h2.grid, tuple(segs))

    K = h2.grid.n_segments - 1
    xi = np.asarray(sol.xi, dtype=float)
    jumps = np.empty((K, curve.dim))
    for k in range(1, K + 1):
        jumps[k - 1] = (curve.left_at(k) - curve.right_at(k)) - market.gamma * xi[k - 1]
    diag = H1Diagnostics(jump_residuals=jumps, terminal=curve.terminal().copy())
    worst = float(np.max(np.abs(jumps), initial=0.0))
    if worst > JUMP_MISMATCH_TOL:
        warnings.warn(
            f"linear-coefficient jump mismatch {worst:.3e} exceeds {JUMP_MISMATCH_TOL:g}; "
            "equilibrium inconsistency", ResidualWarning, stacklevel=2)
    return curve, diag


def _backward_sweep(grid: TimeGrid, terminal: np.ndarray, rhs_tau, jump_at, method: str) -> PiecewiseCurve:
    """Backward level-0 integration with stage data sampled on the fine mesh.

    ``rhs_tau(s, fine_idx, y)`` is the derivative in tau = T - t.  ``jump_at(k)``
    is added when stepping left across interior boundary k.  Midpoint storage
    slots are filled by linear averaging (diagnostic curves only).
    """
    N = len(terminal)
    segs: list[np.ndarray | None] = [None] * grid.n_segments
    cur = np.array(terminal, dtype=float)
    for s in reversed(range(grid.n_segments)):
        m = grid.steps[s]
        dt = grid.step_width(s)
        out = np.empty((2 * m + 1, N))
        out[-1] = cur
        for i in range(m, 0, -1):
            if method == "rk4":
                k1 = rhs_tau(s, 2 * i, cur)
                k2 = rhs_tau(s, 2 * i - 1, cur + 0.5 * dt * k1)
                k3 = rhs_tau(s, 2 * i - 1, cur + 0.5 * dt * k2)
                k4 = rhs_tau(s, 2 * i - 2, cur + dt * k3)
                cur = cur + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            else:
                cur = cur + dt * rhs_tau(s, 2 * i, cur)
            out[2 * i - 2] = cur
        out[1::2] = 0.5 * (out[0:-1:2] + out[2::2])
        segs[s] = out
        if s > 0:
            cur = cur + jump_at(s)
    return PiecewiseCurve(grid, tuple(segs))


def integrate_h1_backward(h2: PiecewiseCurve, mu_agg: PiecewiseCurve,
                          aversion: AversionSpec, market: MarketParams,
                          xi, method: str = "rk4") -> PiecewiseCurve:
    """Direct backward solve of the linear coefficient (cross-check route)."""
    Q = np.asarray(aversion.Q, dtype=float)
    eta, lam_h, gamma_h = market.eta, market.lam_h, market.gamma_h
    xi = np.asarray(xi, dtype=float)
    N = aversion.n_states

    def rhs(s, idx, y):
        mu = mu_agg.segments[s][idx, 0]
        h2v = h2.segments[s][idx]
        return h2v * (y - lam_h * mu) / eta + gamma_h * mu + Q @ y

    def jump(k):
        return np.full(N, market.gamma * xi[k - 1])

    return _backward_sweep(h2.grid, np.zeros(N), rhs, jump, method)


def compute_h0(h1: PiecewiseCurve, h2: PiecewiseCurve, mu_agg: PiecewiseCurve,
               aversion: AversionSpec, market: MarketParams, method: str = "rk4") -> PiecewiseCurve:
    """Backward quadrature of the constant coefficient, continuous at trade times."""
    Q = np.asarray(aversion.Q, dtype=float)
    eta, lam_h = market.eta, market.lam_h
    N = aversion.n_states

    def rhs(s, idx, y):
        mu = mu_agg.segments[s][idx, 0]
        z = h1.segments[s][idx] - lam_h * mu
        return z * z / (4.0 * eta) + Q @ y

    return _backward_sweep(h2.grid, np.zeros(N), rhs, lambda k: np.zeros(N), method)


@dataclass(frozen=True)
class RiccatiSolution:
    h2: PiecewiseCurve
    h1: PiecewiseCurve | None
    h0: PiecewiseCurve | None
    market: MarketParams
    aversion: AversionSpec

    def H(self, t: float, side: str = "right") -> np.ndarray:
        """Diagonal-matrix view diag(h2_i(t))."""
        return np.diag(self.h2.eval(t, side=side))

    def Phi(self, t: float, side: str = "right") -> np.ndarray:
        """Diagonal source matrix diag(phi_i - sum_j Q^{ij} h2_j(t))."""
        h2 = self.h2.eval(t, side=side)
        Q = np.asarray(self.aversion.Q, dtype=float)
        return np.diag(np.asarray(self.aversion.phi, dtype=float) - Q @ h2)


def feedback_control(t: float, x: float, i: int, sol: RiccatiSolution,
                     mu, side: str = "right") -> float:
    """Optimal trading speed (h1_i + 2 h2_i x - lambdaH * mu) / (2 eta)."""
    mu_v = float(mu.eval(t, side=side)[0]) if isinstance(mu, PiecewiseCurve) else float(mu)
    h1_v = float(sol.h1.eval(t, side=side)[i])
    h2_v = float(sol.h2.eval(t, side=side)[i])
    return (h1_v + 2.0 * h2_v * x - sol.market.lam_h * mu_v) / (2.0 * sol.market.eta)


def feedback_control_deviation_form(t: float, x: float, i: int, meanfield,
                                    h2: PiecewiseCurve, market: MarketParams,
                                    side: str = "right") -> float:
    """Same control written as mu_i + (h2_i/eta) * (x - E_i)."""
    mu_i = float(meanfield.mu_by_state.eval(t, side=side)[i])
    E_i = float(meanfield.E_by_state.eval(t, side=side)[i])
    h2_v = float(h2.eval(t, side=side)[i])
    return mu_i + h2_v / market.eta * (x - E_i)


def value_function(t: float, x: float, P: float, i: int, sol: RiccatiSolution,
                   side: str = "right") -> float:
    """P*x + h0_i(t) + h1_i(t)*x + h2_i(t)*x^2."""
    if sol.h0 is None or sol.h1 is None:
        raise ValueError("value_function needs h0 and h1; build them first")
    h0_v = float(sol.h0.eval(t, side=side)[i])
    h1_v = float(sol.h1.eval(t, side=side)[i])
    h2_v = float(sol.h2.eval(t, side=side)[i])
    return P * x + h0_v + h1_v * x + h2_v * x * x
