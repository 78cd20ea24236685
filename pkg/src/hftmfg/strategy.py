"""Large trader best response, the joint equilibrium, and profit analytics.

With the mean field held fixed, the large trader's expected revenue is a
strictly concave quadratic in the trade vector under the completion
constraint sum(xi) = -xi0, and the first-order condition gives, for k < K,

    xi_k = -xi0/K + (D_k - (1/K) sum_{j<K} D_j) / (gamma + 2 (lambda + eta0)),
    D_k  = gammaH (E(t_K) - E(t_k)) + lambdaH (mu(t_K) - mu(t_k)),

with xi_K absorbing the remainder; the initial price P0 cancels.  In the
joint equilibrium the mean field responds linearly to (E0, xi), so solving
the N + K basis problems and substituting turns the fixed point into one
(K-1)-dimensional linear system.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ResidualWarning, SolverError
from .grid import PiecewiseCurve, lincomb
from .meanfield import MeanFieldEngine, MeanFieldSolution

logger = logging.getLogger(__name__)

COND_ABORT = 1e12
FIXED_POINT_TOL = 1e-6


def _impact_cost_coeff(cfg: ModelConfig) -> float:
    m = cfg.market
    return m.gamma + 2.0 * (m.lam + m.eta0)


def best_response_values(E_k: np.ndarray, mu_k: np.ndarray, xi0: float,
                         cfg: ModelConfig) -> np.ndarray:
    """First-order-condition trades from sampled aggregates at the trade times."""
    K = len(E_k)
    if K == 0:
        return np.zeros(0)
    m = cfg.market
    cstar = 1.0 / _impact_cost_coeff(cfg)
    D = m.gamma_h * (E_k[-1] - E_k) + m.lam_h * (mu_k[-1] - mu_k)
    xi = np.empty(K)
    if K > 1:
        S = float(np.sum(D[:-1]))
        xi[:-1] = -xi0 / K + cstar * (D[:-1] - S / K)
    xi[-1] = -xi0 - float(np.sum(xi[:-1]))
    return xi


def lt_best_response(mean_field: MeanFieldSolution, cfg: ModelConfig,
                     side: str | None = None) -> np.ndarray:
    """Optimal trades against a fixed mean field (empty schedule -> empty vector)."""
    side = cfg.solver.mu_at_trades if side is None else side
    xi0 = cfg.schedule.xi0 if cfg.schedule.xi0 is not None else 0.0
    return best_response_values(mean_field.E_at_trades(),
                                mean_field.mu_at_trades(side), float(xi0), cfg)


@dataclass(frozen=True)
class ProfitReport:
    profit_no_hft: float
    profit_with_hft: float
    difference: float


def profit_without_crowd(cfg: ModelConfig, xi: np.ndarray, P0: float = 0.0) -> float:
    """Expected revenue with no fast-trader crowd in the market."""
    xi = np.asarray(xi, dtype=float)
    m = cfg.market
    xi0 = cfg.schedule.xi0 if cfg.schedule.xi0 is not None else 0.0
    running = float(np.sum(xi * np.cumsum(xi)))
    return P0 * xi0 - m.gamma * running - (m.lam + m.eta0) * float(np.sum(xi * xi))


def lt_profit(cfg: ModelConfig, xi, mean_field: MeanFieldSolution,
              P0: float = 0.0, side: str | None = None) -> ProfitReport:
    """Expected revenue with and without the crowd's extra price impact."""
    xi = np.asarray(xi, dtype=float)
    side = cfg.solver.mu_at_trades if side is None else side
    m = cfg.market
    base = profit_without_crowd(cfg, xi, P0)
    E_k = mean_field.E_at_trades()
    mu_k = mean_field.mu_at_trades(side)
    E_start = float(mean_field.E_agg.initial()[0])
    diff = float(np.sum(-xi * (m.gamma_h * (E_k - E_start) + m.lam_h * mu_k)))
    return ProfitReport(base, base + diff, diff)


@dataclass(frozen=True)
class ConcavityReport:
    eigenvalues: np.ndarray
    negative_definite: bool
    max_eigenvalue: float


def concavity_check(cfg: ModelConfig, basis_E: np.ndarray, basis_mu: np.ndarray) -> ConcavityReport:
    """Negative definiteness of the substituted objective in the free trades.

    ``basis_E[k, m]`` is the aggregate-inventory response at t_k to a unit
    trade at t_m (``basis_mu`` likewise for the speed).  The Hessian is
    -gamma (11^T + I) - 2 (lambda + eta0) I - (R + R^T) with
    R = gammaH basis_E + lambdaH basis_mu, restricted to the constraint's
    free coordinates.
    """
    m = cfg.market
    K = basis_E.shape[0]
    if K <= 1:
        return ConcavityReport(np.zeros(0), True, float("-inf"))
    ones = np.ones((K, K))
    R = m.gamma_h * basis_E + m.lam_h * basis_mu
    H = -m.gamma * (ones + np.eye(K)) - 2.0 * (m.lam + m.eta0) * np.eye(K) - (R + R.T)
    M = np.vstack([np.eye(K - 1), -np.ones(K - 1)])
    Hz = M.T @ H @ M
    eig = np.linalg.eigvalsh(0.5 * (Hz + Hz.T))
    return ConcavityReport(eig, bool(eig.max() < 0.0), float(eig.max()))


@dataclass(frozen=True)
class OverallEquilibrium:
    xi_star: np.ndarray
    mean_field: MeanFieldSolution
    basis_initial: tuple[MeanFieldSolution, ...]   # responses to unit E0 components
    basis_trades: tuple[MeanFieldSolution, ...]    # responses to unit trades
    C_E: PiecewiseCurve                            # inhomogeneous aggregate inventory
    C_mu: PiecewiseCurve                           # inhomogeneous aggregate speed
    concavity: ConcavityReport
    fixed_point_residual: float


def solve_overall(cfg: ModelConfig, grid=None) -> OverallEquilibrium:
    """Joint equilibrium: crowd fixed point plus the trader's first-order system."""
    if cfg.mode != "overall":
        raise ValueError("solve_overall requires an overall-mode configuration")
    engine = MeanFieldEngine(cfg, grid)
    N = cfg.n_states
    K = cfg.schedule.K
    xi0 = float(cfg.schedule.xi0)
    E0 = cfg.population.E0
    side = cfg.solver.mu_at_trades

    eye_N = np.eye(N)
    basis_initial = tuple(engine.solve(eye_N[i], np.zeros(K)) for i in range(N))
    eye_K = np.eye(K)
    basis_trades = tuple(engine.solve(np.zeros(N), eye_K[k]) for k in range(K))

    if N:
        C_E = lincomb([b.E_agg for b in basis_initial], E0)
        C_mu = lincomb([b.mu_agg for b in basis_initial], E0)

    if K == 0:
        xi_star = np.zeros(0)
    elif K == 1:
        xi_star = np.array([-xi0])
    else:
        # affine data of the first-order system in the trade vector
        bE = np.column_stack([b.E_at_trades() for b in basis_trades])       # (K, K)
        bMu = np.column_stack([b.mu_at_trades(side) for b in basis_trades])
        cE0 = np.array([C_E.right_at(k)[0] for k in range(1, K + 1)])
        cMu0 = np.array([C_mu.left_at(k)[0] if side == "left" else C_mu.right_at(k)[0]
                         for k in range(1, K + 1)])
        m = cfg.market
        d = m.gamma_h * (bE[-1][None, :] - bE) + m.lam_h * (bMu[-1][None, :] - bMu)
        d0 = m.gamma_h * (cE0[-1] - cE0) + m.lam_h * (cMu0[-1] - cMu0)
        cstar = 1.0 / _impact_cost_coeff(cfg)

        # xi_k - xi_K - cstar * D_k(xi) = 0 for k < K, with xi_K = -xi0 - sum(z)
        A_sys = np.eye(K - 1) + np.ones((K - 1, K - 1)) \
            - cstar * (d[:-1, :-1] - d[:-1, -1][:, None])
        rhs = cstar * d0[:-1] - xi0 * (1.0 + cstar * d[:-1, -1])
        cond = float(np.linalg.cond(A_sys))
        logger.info("trade system condition number: %.3e", cond)
        if not np.isfinite(cond) or cond > COND_ABORT:
            raise SolverError(f"trade-vector system is numerically singular (cond {cond:.3e})")
        z = np.linalg.solve(A_sys, rhs)
        xi_star = np.empty(K)
        xi_star[:-1] = z
        xi_star[-1] = -xi0 - float(np.sum(z))

    mean_field = engine.solve(E0, xi_star)
    br = lt_best_response(mean_field, cfg, side)
    residual = float(np.max(np.abs(br - xi_star), initial=0.0))
    if residual > FIXED_POINT_TOL:
        warnings.warn(f"equilibrium fixed-point residual {residual:.3e} exceeds "
                      f"{FIXED_POINT_TOL:g}", ResidualWarning, stacklevel=2)

    if K:
        bE_full = np.column_stack([b.E_at_trades() for b in basis_trades])
        bMu_full = np.column_stack([b.mu_at_trades(side) for b in basis_trades])
    else:
        bE_full = np.zeros((0, 0))
        bMu_full = np.zeros((0, 0))
    concavity = concavity_check(cfg, bE_full, bMu_full)
    if not concavity.negative_definite:
        warnings.warn("substituted objective is not negative definite; the solved "
                      "trade vector is a stationary point only", ResidualWarning, stacklevel=2)

    return OverallEquilibrium(
        xi_star=xi_star, mean_field=mean_field,
        basis_initial=basis_initial, basis_trades=basis_trades,
        C_E=C_E, C_mu=C_mu, concavity=concavity, fixed_point_residual=residual)


def lt_objective_fixed_field(cfg: ModelConfig, xi, mean_field: MeanFieldSolution,
                             P0: float = 0.0, side: str | None = None) -> float:
    """Trader revenue for schedule xi with the mean field frozen (no response)."""
    return lt_profit(cfg, xi, mean_field, P0, side).profit_with_hft
