"""Mean-field equilibrium of the crowd for a fixed trade schedule.

Between trades the per-state averages (mu, E) satisfy a linear system

    d/dt [mu; E] = A(t) [mu; E],
    A = [[A1, A2], [I, p_Q]],
    A1 = -B^{-1} (gammaH e p^T + 2 eta Q + lambdaH e p^T Q),
    A2 = 2 B^{-1} (H p_Q + Phi + Q H),      B = 2 eta I + lambdaH e p^T,

with H = diag(h2), Phi = diag(phi_i - (Q h2)_i).  B is always invertible
(det = (2 eta)^(N-1) (lambdaH + 2 eta)); its inverse is applied through the
rank-one update formula.  At each trade time the speeds jump down by
gamma*xi_k/(lambdaH + 2 eta) while E stays continuous, the terminal condition
is B mu(T) + 2 diag(Gamma) E(T) = 0, and E(0) = E0.

The solver integrates fundamental matrices of dU = A U dt and determines the
unknown initial speeds from the terminal condition in a single linear solve:
the problem is linear, so the shooting needs no iteration.  Residuals are
still reported because finite grids leave discretization error.

One numerical refinement over the textbook bookkeeping: the fundamental
matrix is re-anchored to the identity at every trade time and the speed jumps
are applied directly to the propagated state, instead of carrying
U(t_k)^{-1}-scaled increments in a global coefficient vector.  The two are
identical in exact arithmetic, but when the system has fast growing modes
(cond U(T) can exceed 1e12 on two-state presets) the global form loses six or
more digits to cancellation, while re-anchored propagators only span one
inter-trade interval and keep every intermediate at solution scale.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .chain import ChainSolution, pq_batch, solve_chain
from .config import AversionSpec, MarketParams, ModelConfig
from .errors import ResidualWarning, SolverError
from .grid import PiecewiseCurve, TimeGrid, make_grid, weighted_aggregate
from .riccati import solve_h2

logger = logging.getLogger(__name__)

COND_ABORT = 1e12


def default_grid(cfg: ModelConfig) -> TimeGrid:
    return make_grid(cfg.schedule.T, cfg.schedule.times, cfg.solver.grid_steps_per_unit_time)


def speed_jump_size(market: MarketParams, xi_k: float) -> float:
    """Drop of the aggregate speed at a trade of size xi_k."""
    return market.gamma * xi_k / (market.lam_h + 2.0 * market.eta)


def assemble_A_batch(P: np.ndarray, H2: np.ndarray, aversion: AversionSpec,
                     market: MarketParams) -> np.ndarray:
    """System matrices for a batch of (p, h2) samples, shape (n, 2N, 2N)."""
    n, N = P.shape
    eta, lam_h, gamma_h = market.eta, market.lam_h, market.gamma_h
    Q = np.asarray(aversion.Q, dtype=float)
    phi = np.asarray(aversion.phi, dtype=float)

    s = P.sum(axis=1)
    alpha = lam_h / (2.0 * eta + lam_h * s)          # rank-one inverse coefficient

    def apply_binv(M):
        pM = np.einsum("ni,nij->nj", P, M)
        return (M - alpha[:, None, None] * pM[:, None, :]) / (2.0 * eta)

    PQ = pq_batch(P, Q)
    ep = np.broadcast_to(P[:, None, :], (n, N, N))   # rows all equal p^T
    pTQ = P @ Q
    R1 = gamma_h * ep + 2.0 * eta * Q[None, :, :] + lam_h * pTQ[:, None, :]
    A1 = -apply_binv(R1)

    M2 = H2[:, :, None] * PQ + Q[None, :, :] * H2[:, None, :]
    idx = np.arange(N)
    phid = phi[None, :] - H2 @ Q.T                   # diagonal of Phi
    M2 = M2.copy()
    M2[:, idx, idx] += phid
    A2 = 2.0 * apply_binv(M2)

    A = np.zeros((n, 2 * N, 2 * N))
    A[:, :N, :N] = A1
    A[:, :N, N:] = A2
    A[:, N:, :N] = np.eye(N)
    A[:, N:, N:] = PQ
    return A


def assemble_A(t: float, chain: ChainSolution, h2: PiecewiseCurve,
               aversion: AversionSpec, market: MarketParams, side: str = "right") -> np.ndarray:
    """System matrix at a single time."""
    p = chain.p.eval(t, side=side)
    h = h2.eval(t, side=side)
    return assemble_A_batch(p[None, :], h[None, :], aversion, market)[0]


@dataclass(frozen=True)
class ResidualReport:
    terminal: float                 # ||B mu(T) + 2 Gamma E(T)||_2
    initial: float                  # max |E(0) - E0|
    jump_aggregate: np.ndarray      # (K,) aggregate-speed jump residuals
    jump_by_state: np.ndarray       # (K, N) per-state jump residuals
    terminal_condition_number: float

    @property
    def worst_jump(self) -> float:
        return float(np.max(np.abs(self.jump_by_state), initial=0.0))


@dataclass(frozen=True)
class MeanFieldSolution:
    grid: TimeGrid
    chain: ChainSolution
    h2: PiecewiseCurve
    E_by_state: PiecewiseCurve
    mu_by_state: PiecewiseCurve
    E_agg: PiecewiseCurve
    mu_agg: PiecewiseCurve
    xi: np.ndarray
    E0: np.ndarray
    residuals: ResidualReport
    U: tuple[np.ndarray, ...] | None          # per-segment fundamental matrices at
                                              # level-0 nodes, re-anchored to I at
                                              # each trade time
    c_segments: np.ndarray | None             # (S, 2N) state at each segment start;
                                              # [mu; E](t) = U_s(t) c_s on segment s

    @property
    def c0(self) -> np.ndarray | None:
        """Initial coefficient vector [mu(0); E(0)]."""
        return None if self.c_segments is None else self.c_segments[0]

    def mu_at_trades(self, side: str = "right") -> np.ndarray:
        K = self.grid.n_segments - 1
        if side == "right":
            return np.array([self.mu_agg.right_at(k)[0] for k in range(1, K + 1)])
        return np.array([self.mu_agg.left_at(k)[0] for k in range(1, K + 1)])

    def E_at_trades(self) -> np.ndarray:
        K = self.grid.n_segments - 1
        return np.array([self.E_agg.right_at(k)[0] for k in range(1, K + 1)])


class MeanFieldEngine:
    """Shared machinery for all solves on one configuration and grid.

    The chain, the quadratic coefficient and the fundamental matrix do not
    depend on (E0, xi), so basis solves reuse them; ``solve`` then costs one
    N x N linear solve plus the curve reconstruction.
    """

    def __init__(self, cfg: ModelConfig, grid: TimeGrid | None = None):
        self.cfg = cfg
        self.grid = grid if grid is not None else default_grid(cfg)
        method = cfg.solver.integrator
        self.chain = solve_chain(cfg.aversion, self.grid, method)
        self.h2 = solve_h2(cfg.aversion, cfg.market, self.grid, method)
        N = cfg.n_states
        self._N = N
        self._A = [assemble_A_batch(self.chain.p.segments[s], self.h2.segments[s],
                                    cfg.aversion, cfg.market)
                   for s in range(self.grid.n_segments)]
        self._U_nodes, self._U_mid = self._integrate_fundamental(method)
        self._V_end = [Un[-1] for Un in self._U_nodes]

        # propagate the affine structure of the state at segment starts:
        #   z_s = Z_s mu0 + W_s E0 - sum_{k <= s} jump_k * u_{k,s}
        S = self.grid.n_segments
        top = np.vstack([np.eye(N), np.zeros((N, N))])
        bot = np.vstack([np.zeros((N, N)), np.eye(N)])
        jump_vec = np.concatenate([np.ones(N), np.zeros(N)])
        self._Z = [top]
        self._W = [bot]
        for s in range(S - 1):
            self._Z.append(self._V_end[s] @ self._Z[s])
            self._W.append(self._V_end[s] @ self._W[s])
        self._ujump = {}
        for k in range(1, S):
            u = jump_vec.copy()
            self._ujump[(k, k)] = u
            for s in range(k, S - 1):
                u = self._V_end[s] @ u
                self._ujump[(k, s + 1)] = u

        pT = self.chain.p.terminal()
        self._B_T = 2.0 * cfg.market.eta * np.eye(N) + cfg.market.lam_h * np.outer(np.ones(N), pT)
        C = np.hstack([self._B_T, 2.0 * np.diag(cfg.aversion.Gamma)])
        self._CZ = C @ (self._V_end[-1] @ self._Z[-1])
        self._CW = C @ (self._V_end[-1] @ self._W[-1])
        self._Cu = {k: C @ (self._V_end[-1] @ self._ujump[(k, S - 1)]) for k in range(1, S)}
        self.terminal_condition_number = float(np.linalg.cond(self._CZ))
        logger.info("terminal system condition number: %.3e", self.terminal_condition_number)
        if not np.isfinite(self.terminal_condition_number) or self.terminal_condition_number > COND_ABORT:
            raise SolverError(
                f"terminal system is numerically singular "
                f"(condition number {self.terminal_condition_number:.3e})")

    def _integrate_fundamental(self, method: str):
        n2 = 2 * self._N
        nodes, mids = [], []
        for s in range(self.grid.n_segments):
            A = self._A[s]
            m = self.grid.steps[s]
            h = self.grid.step_width(s)
            U = np.eye(n2)
            Un = np.empty((m + 1, n2, n2))
            Un[0] = U
            if method == "rk4":
                for i in range(m):
                    A0, Am, A1 = A[2 * i], A[2 * i + 1], A[2 * i + 2]
                    k1 = A0 @ U
                    k2 = Am @ (U + (h / 2.0) * k1)
                    k3 = Am @ (U + (h / 2.0) * k2)
                    k4 = A1 @ (U + h * k3)
                    U = U + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                    Un[i + 1] = U
            else:
                for i in range(m):
                    U = U + h * (A[2 * i] @ U)
                    Un[i + 1] = U
            nodes.append(Un)
            mids.append(self._midpoint_states(Un, A, h, method))
        return nodes, mids

    @staticmethod
    def _midpoint_states(Un, A, h, method):
        # one vectorized half-step from every node; the quarter-point matrix is
        # linearly interpolated, which is ample for the stage-data consumers
        U0 = Un[:-1]
        A0 = A[0:-1:2]
        Am = A[1::2]
        if method != "rk4":
            return U0 + (h / 2.0) * (A0 @ U0)
        Aq = 0.5 * (A0 + Am)
        hh = h / 2.0
        k1 = A0 @ U0
        k2 = Aq @ (U0 + (hh / 2.0) * k1)
        k3 = Aq @ (U0 + (hh / 2.0) * k2)
        k4 = Am @ (U0 + hh * k3)
        return U0 + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def solve(self, E0, xi=None) -> MeanFieldSolution:
        cfg = self.cfg
        N = self._N
        S = self.grid.n_segments
        K = S - 1
        E0 = np.asarray(E0, dtype=float)
        xi = np.zeros(K) if xi is None else np.asarray(xi, dtype=float)
        if E0.shape != (N,):
            raise ValueError("E0 length must match the number of states")
        if xi.shape != (K,):
            raise ValueError("xi length must match the number of trade times")

        scale = cfg.market.gamma / (cfg.market.lam_h + 2.0 * cfg.market.eta)
        jumps = scale * xi
        rhs = -(self._CW @ E0)
        for k in range(1, S):
            rhs += jumps[k - 1] * self._Cu[k]
        mu0 = np.linalg.solve(self._CZ, rhs)
        c = np.concatenate([mu0, E0])
        c_segments = np.empty((S, 2 * N))
        c_segments[0] = c
        jump_vec = np.concatenate([np.ones(N), np.zeros(N)])
        for s in range(S - 1):
            c = self._V_end[s] @ c - jumps[s] * jump_vec
            c_segments[s + 1] = c

        mu_segs, E_segs = [], []
        for s in range(S):
            vn = self._U_nodes[s] @ c_segments[s]
            vm = self._U_mid[s] @ c_segments[s]
            fine = np.empty((len(vn) + len(vm), 2 * N))
            fine[0::2] = vn
            fine[1::2] = vm
            mu_segs.append(fine[:, :N])
            E_segs.append(fine[:, N:])
        mu_by_state = PiecewiseCurve(self.grid, tuple(mu_segs))
        E_by_state = PiecewiseCurve(self.grid, tuple(E_segs))
        mu_agg = weighted_aggregate(mu_by_state, self.chain.p)
        E_agg = weighted_aggregate(E_by_state, self.chain.p)

        term_vec = self._B_T @ mu_by_state.terminal() \
            + 2.0 * np.asarray(cfg.aversion.Gamma) * E_by_state.terminal()
        jump_state = np.empty((K, N))
        jump_agg = np.empty(K)
        for k in range(1, K + 1):
            expected = scale * xi[k - 1]
            jump_state[k - 1] = (mu_by_state.left_at(k) - mu_by_state.right_at(k)) - expected
            jump_agg[k - 1] = (mu_agg.left_at(k)[0] - mu_agg.right_at(k)[0]) - expected
        residuals = ResidualReport(
            terminal=float(np.linalg.norm(term_vec)),
            initial=float(np.max(np.abs(E_by_state.initial() - E0), initial=0.0)),
            jump_aggregate=jump_agg,
            jump_by_state=jump_state,
            terminal_condition_number=self.terminal_condition_number,
        )
        tol = cfg.solver.shooting_tolerance
        if residuals.terminal > tol or residuals.worst_jump > tol or residuals.initial > tol:
            warnings.warn(
                f"equilibrium residuals exceed tolerance {tol:g}: terminal="
                f"{residuals.terminal:.3e}, jump={residuals.worst_jump:.3e}, "
                f"initial={residuals.initial:.3e}", ResidualWarning, stacklevel=2)

        return MeanFieldSolution(
            grid=self.grid, chain=self.chain, h2=self.h2,
            E_by_state=E_by_state, mu_by_state=mu_by_state,
            E_agg=E_agg, mu_agg=mu_agg, xi=xi.copy(), E0=E0.copy(),
            residuals=residuals, U=tuple(self._U_nodes), c_segments=c_segments)


def solve_partial(cfg: ModelConfig, xi=None, grid: TimeGrid | None = None) -> MeanFieldSolution:
    """Solve the crowd equilibrium for a fixed trade schedule."""
    if xi is None:
        xi = cfg.schedule.quantities
        if xi is None:
            xi = np.zeros(cfg.schedule.K)
    return MeanFieldEngine(cfg, grid).solve(cfg.population.E0, xi)


def closed_form_n1(cfg: ModelConfig, xi=None, grid: TimeGrid | None = None) -> MeanFieldSolution:
    """Exact single-state solution; the independent oracle for the numerical path.

    E(t) = A_k e^{th1 t} + B_k e^{th2 t} on each interval, with the roots of
    (lambdaH + 2 eta) r^2 + gammaH r - 2 phi = 0 and coefficients propagated
    through the trade-time jumps.  The repeated-root case (reachable only at
    gammaH = phi = 0) uses the (A + B t) e^{th t} basis.
    """
    if cfg.n_states != 1:
        raise ValueError("closed_form_n1 requires a single-state configuration")
    mkt = cfg.market
    grid = grid if grid is not None else default_grid(cfg)
    K = grid.n_segments - 1
    if xi is None:
        xi = cfg.schedule.quantities
        if xi is None:
            xi = np.zeros(K)
    xi = np.asarray(xi, dtype=float)
    T = grid.horizon
    tk = grid.trade_times
    E0 = float(cfg.population.E0[0])
    Gam = float(cfg.aversion.Gamma[0])
    phi = float(cfg.aversion.phi[0])
    denom = mkt.lam_h + 2.0 * mkt.eta
    scale = mkt.gamma / denom
    disc = mkt.gamma_h ** 2 + 8.0 * phi * denom

    E_segs, mu_segs = [], []
    if disc > 0.0:
        rt = np.sqrt(disc)
        th1 = (-mkt.gamma_h + rt) / (2.0 * denom)
        th2 = (-mkt.gamma_h - rt) / (2.0 * denom)
        xs = np.concatenate(([0.0], np.cumsum(scale / (th2 - th1) * xi * np.exp(-th1 * tk))))
        ys = np.concatenate(([0.0], np.cumsum(scale / (th2 - th1) * xi * np.exp(-th2 * tk))))
        e1T, e2T = np.exp(th1 * T), np.exp(th2 * T)
        den = denom * (th1 * e1T - th2 * e2T) + 2.0 * Gam * (e1T - e2T)
        num = -denom * (xs[K] * th1 * e1T + (E0 - ys[K]) * th2 * e2T) \
            - 2.0 * Gam * (xs[K] * e1T + (E0 - ys[K]) * e2T)
        A0 = num / den
        B0 = E0 - A0
        for s in range(grid.n_segments):
            a, b = A0 + xs[s], B0 - ys[s]
            t = grid.fine_times[s]
            e1, e2 = np.exp(th1 * t), np.exp(th2 * t)
            E_segs.append((a * e1 + b * e2)[:, None])
            mu_segs.append((a * th1 * e1 + b * th2 * e2)[:, None])
    else:
        th = -mkt.gamma_h / (2.0 * denom)
        xs = np.concatenate(([0.0], np.cumsum(scale * xi * tk * np.exp(-th * tk))))
        ys = np.concatenate(([0.0], np.cumsum(scale * xi * np.exp(-th * tk))))
        A0 = E0
        aK = A0 + xs[K]
        den = denom * (1.0 + th * T) + 2.0 * Gam * T
        bK = -aK * (denom * th + 2.0 * Gam) / den
        B0 = bK + ys[K]
        for s in range(grid.n_segments):
            a, b = A0 + xs[s], B0 - ys[s]
            t = grid.fine_times[s]
            e = np.exp(th * t)
            E_segs.append(((a + b * t) * e)[:, None])
            mu_segs.append(((b + th * a + th * b * t) * e)[:, None])

    chain = solve_chain(cfg.aversion, grid, cfg.solver.integrator)
    h2 = solve_h2(cfg.aversion, cfg.market, grid, cfg.solver.integrator)
    E_by_state = PiecewiseCurve(grid, tuple(E_segs))
    mu_by_state = PiecewiseCurve(grid, tuple(mu_segs))
    E_agg = weighted_aggregate(E_by_state, chain.p)
    mu_agg = weighted_aggregate(mu_by_state, chain.p)

    term = denom * mu_by_state.terminal()[0] + 2.0 * Gam * E_by_state.terminal()[0]
    jump_state = np.empty((K, 1))
    jump_agg = np.empty(K)
    for k in range(1, K + 1):
        expected = scale * xi[k - 1]
        jump_state[k - 1] = (mu_by_state.left_at(k) - mu_by_state.right_at(k)) - expected
        jump_agg[k - 1] = jump_state[k - 1, 0]
    residuals = ResidualReport(
        terminal=abs(float(term)),
        initial=abs(float(E_by_state.initial()[0] - E0)),
        jump_aggregate=jump_agg, jump_by_state=jump_state,
        terminal_condition_number=1.0)
    return MeanFieldSolution(
        grid=grid, chain=chain, h2=h2,
        E_by_state=E_by_state, mu_by_state=mu_by_state,
        E_agg=E_agg, mu_agg=mu_agg, xi=xi.copy(),
        E0=np.array([E0]), residuals=residuals, U=None, c_segments=None)


@dataclass(frozen=True)
class JumpCheck:
    k: int
    time: float
    expected: float
    residual_aggregate: float
    residual_state_max: float


def jump_conditions_report(sol: MeanFieldSolution, cfg: ModelConfig) -> list[JumpCheck]:
    """Per-trade residuals of the speed-jump conditions."""
    rows = []
    for k in range(1, sol.grid.n_segments):
        expected = speed_jump_size(cfg.market, float(sol.xi[k - 1]))
        rows.append(JumpCheck(
            k=k, time=float(sol.grid.bounds[k]), expected=expected,
            residual_aggregate=abs(float(sol.residuals.jump_aggregate[k - 1])),
            residual_state_max=float(np.max(np.abs(sol.residuals.jump_by_state[k - 1]))),
        ))
    return rows
