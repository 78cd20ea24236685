"""Finite-population simulation and empirical deviation (epsilon-Nash) tests.

M agents follow the mean-field feedback law while their aversion states
switch at exact exponential event times (never grid-discretized).  Each agent
is integrated in deviation form D_j = X_j - E_{Y_j}: between switches

    dD/dt = (h2_i(t)/eta) D - (p_Q(t) E(t))_i,

and a switch i -> j moves D by E_i - E_j (inventory itself is continuous).
This is the same feedback control written against the per-state mean; it
keeps the degenerate single-state deterministic population exactly on the
mean field, so all convergence metrics vanish identically there.

Randomness is drawn from counter-based streams keyed by
(seed, purpose, replication, agent), so results are independent of scheduling
and worker counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chain import pq_batch
from .config import ModelConfig
from .errors import SimulationError
from .meanfield import MeanFieldSolution
from .strategy import best_response_values

_MASK64 = (1 << 64) - 1
_PURPOSE_AGENT = 0
_PURPOSE_PRICE = 1
_MAX_EVENTS_PER_AGENT = 100_000


def _stream(seed: int, purpose: int, rep: int, agent: int) -> np.random.Generator:
    key0 = (int(seed) ^ 0x9E3779B97F4A7C15) & _MASK64
    key1 = ((purpose & 0xFF) << 56) | ((rep & 0xFFFFFFF) << 28) | (agent & 0xFFFFFFF)
    # exact uint64 key; large Python ints in a plain list round through float64
    key = np.array([key0, key1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_agents(cfg: ModelConfig, M: int, seed: int, rep: int, spread: float):
    """Initial states plus every agent's exact switch schedule on [0, T]."""
    N = cfg.n_states
    E0 = np.asarray(cfg.population.E0, dtype=float)
    Q = np.asarray(cfg.aversion.Q, dtype=float)
    T = cfg.schedule.T
    p0cum = np.cumsum(cfg.aversion.p0)
    X0 = np.empty(M)
    Y0 = np.empty(M, dtype=np.int64)
    ev_t: list[float] = []
    ev_agent: list[int] = []
    ev_state: list[int] = []
    for j in range(M):
        g = _stream(seed, _PURPOSE_AGENT, rep, j)
        y = min(int(np.searchsorted(p0cum, g.random(), side="right")), N - 1)
        X0[j] = E0[y] + spread * (2.0 * g.random() - 1.0)
        Y0[j] = y
        t = 0.0
        for _ in range(_MAX_EVENTS_PER_AGENT):
            rate = -Q[y, y]
            if rate <= 0.0:
                break
            t += g.exponential(1.0 / rate)
            if t >= T:
                break
            row = Q[y].copy()
            row[y] = 0.0
            y = min(int(np.searchsorted(np.cumsum(row) / rate, g.random(), side="right")), N - 1)
            ev_t.append(t)
            ev_agent.append(j)
            ev_state.append(y)
        else:
            raise SimulationError(f"agent {j} exceeded {_MAX_EVENTS_PER_AGENT} switches")
    order = np.argsort(np.asarray(ev_t), kind="stable")
    return (X0, Y0,
            np.asarray(ev_t, dtype=float)[order],
            np.asarray(ev_agent, dtype=np.int64)[order],
            np.asarray(ev_state, dtype=np.int64)[order])


@dataclass(frozen=True)
class ConvergenceMetrics:
    theta_dev: float   # sup_t || state fractions - p(t) ||^2
    Z_dev: float       # sup_t || per-state mean inventory mass - p_i E_i ||^2
    vbar_l2: float     # integral of |average speed - mu|^2


@dataclass(frozen=True)
class SegmentRecord:
    times: np.ndarray      # level-0 node times
    vbar: np.ndarray       # (m+1,)
    Xbar: np.ndarray       # (m+1,)
    theta: np.ndarray      # (m+1, N)
    Z: np.ndarray          # (m+1, N)
    v_agent0: np.ndarray   # (m+1,)
    X_agent0: np.ndarray   # (m+1,)


@dataclass(frozen=True)
class PopulationState:
    X: np.ndarray
    Y: np.ndarray
    t: float


@dataclass(frozen=True)
class PopulationTrajectory:
    segments: tuple[SegmentRecord, ...]
    final: PopulationState
    max_abs_X: np.ndarray
    agent0_events: tuple[tuple[float, int], ...]
    agent0_initial_state: int
    agent0_initial_inventory: float
    M: int
    seed: int
    rep: int
    # populated only when simulate_population(record_paths=True): per segment
    # (m+1, M) inventories and states at level-0 nodes
    paths_X: tuple[np.ndarray, ...] | None = None
    paths_Y: tuple[np.ndarray, ...] | None = None


def default_init_spread(cfg: ModelConfig) -> float:
    """Uniform half-width keeping |X_j(0)| within the configured bound."""
    worst = float(np.max(np.abs(cfg.population.E0), initial=0.0))
    return max(cfg.population.inventory_bound - worst, 0.0)


def _segment_coeffs(cfg: ModelConfig, eq: MeanFieldSolution):
    """Per-segment fine-mesh coefficient arrays for the deviation dynamics."""
    eta = cfg.market.eta
    Q = np.asarray(cfg.aversion.Q, dtype=float)
    a_segs, b_segs = [], []
    for s in range(eq.grid.n_segments):
        P = eq.chain.p.segments[s]
        E = eq.E_by_state.segments[s]
        a_segs.append(eq.h2.segments[s] / eta)
        b_segs.append(-np.einsum("nij,nj->ni", pq_batch(P, Q), E))
    return a_segs, b_segs


def _local_step(D: float, ta: float, tb: float, state: int, ft: np.ndarray,
                a_seg: np.ndarray, b_seg: np.ndarray, method: str) -> float:
    """One integrator step of the scalar deviation ODE on [ta, tb]."""
    if tb <= ta:
        return D
    h = tb - ta
    acol = a_seg[:, state]
    bcol = b_seg[:, state]

    def ab(t):
        return float(np.interp(t, ft, acol)), float(np.interp(t, ft, bcol))

    a0, b0 = ab(ta)
    if method != "rk4":
        return D + h * (a0 * D + b0)
    am, bm = ab(0.5 * (ta + tb))
    a1, b1 = ab(tb)
    k1 = a0 * D + b0
    k2 = am * (D + 0.5 * h * k1) + bm
    k3 = am * (D + 0.5 * h * k2) + bm
    k4 = a1 * (D + h * k3) + b1
    return D + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def simulate_population(cfg: ModelConfig, eq: MeanFieldSolution, M: int, seed: int,
                        *, rep: int = 0, init_spread: float | None = None,
                        record_paths: bool = False
                        ) -> tuple[PopulationTrajectory, ConvergenceMetrics]:
    """Simulate M agents under the feedback law and measure mean-field gaps."""
    if M < 1:
        raise SimulationError("need at least one agent")
    grid = eq.grid
    N = cfg.n_states
    method = cfg.solver.integrator
    spread = default_init_spread(cfg) if init_spread is None else float(init_spread)
    X0, Y, ev_t, ev_agent, ev_state = _draw_agents(cfg, M, seed, rep, spread)
    a_segs, b_segs = _segment_coeffs(cfg, eq)

    D = X0 - eq.E_by_state.initial()[Y]
    max_abs = np.abs(X0).copy()
    agent0_events = [(float(t), int(s)) for t, s, a in zip(ev_t, ev_state, ev_agent) if a == 0]
    agent0_y0 = int(Y[0])
    agent0_x0 = float(X0[0])

    records = []
    paths_X: list[np.ndarray] = []
    paths_Y: list[np.ndarray] = []
    ptr = 0
    n_ev = len(ev_t)
    for s in range(grid.n_segments):
        ft = grid.fine_times[s]
        m = grid.steps[s]
        h = grid.step_width(s)
        a_seg, b_seg = a_segs[s], b_segs[s]
        mu_seg = eq.mu_by_state.segments[s]
        E_seg = eq.E_by_state.segments[s]
        vbar = np.empty(m + 1)
        Xbar = np.empty(m + 1)
        theta = np.empty((m + 1, N))
        Z = np.empty((m + 1, N))
        v0 = np.empty(m + 1)
        X0a = np.empty(m + 1)
        if record_paths:
            seg_X = np.empty((m + 1, M))
            seg_Y = np.empty((m + 1, M), dtype=np.int64)

        def record(node: int, fine_idx: int):
            av = a_seg[fine_idx]
            muv = mu_seg[fine_idx]
            Ev = E_seg[fine_idx]
            counts = np.bincount(Y, minlength=N)
            th = counts / M
            sumD = np.bincount(Y, weights=D, minlength=N)
            theta[node] = th
            Z[node] = th * Ev + sumD / M
            adev = av[Y] * D
            vbar[node] = th @ muv + adev.mean()
            Xbar[node] = th @ Ev + D.mean()
            X = Ev[Y] + D
            np.maximum(max_abs, np.abs(X), out=max_abs)
            v0[node] = muv[Y[0]] + adev[0]
            X0a[node] = X[0]
            if record_paths:
                seg_X[node] = X
                seg_Y[node] = Y

        record(0, 0)
        for i in range(m):
            t0 = ft[2 * i]
            t2 = ft[2 * i + 2]
            jumpers: dict[int, list[tuple[float, int]]] = {}
            while ptr < n_ev and ev_t[ptr] <= t2:
                jumpers.setdefault(int(ev_agent[ptr]), []).append(
                    (float(ev_t[ptr]), int(ev_state[ptr])))
                ptr += 1
            if jumpers:
                saved = {j: (float(D[j]), int(Y[j])) for j in jumpers}

            a0 = a_seg[2 * i][Y]
            b0 = b_seg[2 * i][Y]
            if method == "rk4":
                am = a_seg[2 * i + 1][Y]
                bm = b_seg[2 * i + 1][Y]
                a1 = a_seg[2 * i + 2][Y]
                b1 = b_seg[2 * i + 2][Y]
                k1 = a0 * D + b0
                k2 = am * (D + 0.5 * h * k1) + bm
                k3 = am * (D + 0.5 * h * k2) + bm
                k4 = a1 * (D + h * k3) + b1
                D = D + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            else:
                D = D + h * (a0 * D + b0)

            for j, events in jumpers.items():
                d, y = saved[j]
                ta = t0
                for te, ynew in events:
                    d = _local_step(d, ta, te, y, ft, a_seg, b_seg, method)
                    d += float(np.interp(te, ft, E_seg[:, y]) - np.interp(te, ft, E_seg[:, ynew]))
                    y = ynew
                    ta = te
                d = _local_step(d, ta, t2, y, ft, a_seg, b_seg, method)
                D[j] = d
                Y[j] = y
            record(i + 1, 2 * i + 2)

        records.append(SegmentRecord(grid.level0_times(s).copy(), vbar, Xbar,
                                     theta, Z, v0, X0a))
        if record_paths:
            paths_X.append(seg_X)
            paths_Y.append(seg_Y)

    X_final = eq.E_by_state.terminal()[Y] + D
    traj = PopulationTrajectory(
        segments=tuple(records),
        final=PopulationState(X_final, Y.copy(), grid.horizon),
        max_abs_X=max_abs,
        agent0_events=tuple(agent0_events),
        agent0_initial_state=agent0_y0,
        agent0_initial_inventory=agent0_x0,
        M=M, seed=seed, rep=rep,
        paths_X=tuple(paths_X) if record_paths else None,
        paths_Y=tuple(paths_Y) if record_paths else None)
    return traj, _metrics(cfg, eq, traj)


def _metrics(cfg: ModelConfig, eq: MeanFieldSolution, traj: PopulationTrajectory) -> ConvergenceMetrics:
    theta_dev = 0.0
    z_dev = 0.0
    vbar_l2 = 0.0
    for s, rec in enumerate(traj.segments):
        p = eq.chain.p.node_values(s)
        E = eq.E_by_state.node_values(s)
        mu = eq.mu_agg.node_values(s)[:, 0]
        theta_dev = max(theta_dev, float(np.max(np.sum((rec.theta - p) ** 2, axis=1))))
        z_dev = max(z_dev, float(np.max(np.sum((rec.Z - p * E) ** 2, axis=1))))
        vbar_l2 += float(np.trapezoid((rec.vbar - mu) ** 2, rec.times))
    return ConvergenceMetrics(theta_dev, z_dev, vbar_l2)


def inventory_growth_bound(cfg: ModelConfig, eq: MeanFieldSolution) -> float:
    """Growth constant C2 with max_t |X_j(t)| <= (|X_j(0)| + C2) e^{C2 T}.

    C2 dominates both affine coefficients of the feedback law: the intercept
    |mu_i - (h2_i/eta) E_i| integrated over the horizon and the gain |h2_i|/eta.
    """
    eta = cfg.market.eta
    worst_icept = 0.0
    worst_gain = 0.0
    for s in range(eq.grid.n_segments):
        beta = eq.h2.segments[s] / eta
        alpha = eq.mu_by_state.segments[s] - beta * eq.E_by_state.segments[s]
        worst_icept = max(worst_icept, float(np.max(np.abs(alpha))))
        worst_gain = max(worst_gain, float(np.max(np.abs(beta))))
    return max(worst_icept * eq.grid.horizon, worst_gain)


# ---------------------------------------------------------------------------
# deviating-agent quadratic


@dataclass(frozen=True)
class DeviationResult:
    j_mfg: float
    j_best: float
    gain: float
    M: int
    seed: int


@dataclass(frozen=True)
class _Quadratic:
    """phi(w) = const + g.w - w.P w / 2 on the control cells."""
    edges: np.ndarray
    widths: np.ndarray
    P: np.ndarray
    g: np.ndarray
    const: float

    def value(self, w: np.ndarray) -> float:
        return float(self.const + self.g @ w - 0.5 * w @ self.P @ w)

    def maximizer(self) -> np.ndarray:
        eig = np.linalg.eigvalsh(0.5 * (self.P + self.P.T))
        if eig.min() <= 0.0:
            raise SimulationError(
                f"deviation objective is not strictly concave (min curvature {eig.min():.3e})")
        return np.linalg.solve(self.P, self.g)


def _control_edges(grid, cells_per_segment: int):
    """Cell edges snapped to level-0 nodes, per segment; returns (edge times, node index pairs)."""
    edges = [0.0]
    node_edges = []  # (segment, node index) of each edge except the first
    for s in range(grid.n_segments):
        m = grid.steps[s]
        r = min(cells_per_segment, m)
        idx = sorted({int(round(j * m / r)) for j in range(1, r + 1)} | {m})
        t = grid.level0_times(s)
        for i in idx:
            edges.append(float(t[i]))
            node_edges.append((s, i))
    return np.asarray(edges), node_edges


def _trapz_weights(times: np.ndarray) -> np.ndarray:
    w = np.zeros_like(times)
    dt = np.diff(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def _deviator_quadratic(cfg: ModelConfig, eq: MeanFieldSolution, delta: float,
                        vbar_segments: list[np.ndarray], x_init: float,
                        y_init: int, events, cells_per_segment: int) -> _Quadratic:
    grid = eq.grid
    m = cfg.market
    edges, _ = _control_edges(grid, cells_per_segment)
    left = edges[:-1]
    widths = np.diff(edges)
    R = len(widths)

    def psi(ts: np.ndarray) -> np.ndarray:
        return np.clip(ts[:, None] - left[None, :], 0.0, widths[None, :])

    P = np.zeros((R, R))
    g = np.zeros(R)
    const = 0.0

    # own-speed costs: fee plus the 1/M share of the temporary impact
    P += 2.0 * (m.eta + m.lam_h * delta) * np.diag(widths)

    # terminal inventory: aversion minus the 1/M share of the permanent impact
    y_term = y_init
    for _, ynew in events:
        y_term = ynew
    coef = float(cfg.aversion.Gamma[y_term]) - 0.5 * m.gamma_h * delta
    P += 2.0 * coef * np.outer(widths, widths)
    g += -2.0 * coef * x_init * widths
    const += -coef * x_init * x_init - 0.5 * m.gamma_h * delta * x_init * x_init

    # interaction with the frozen rest of the crowd
    for s in range(grid.n_segments):
        times = grid.level0_times(s)
        vb = vbar_segments[s]
        wt = _trapz_weights(times)
        g += m.gamma_h * (1.0 - delta) * psi(times).T @ (wt * vb)
        const += m.gamma_h * (1.0 - delta) * x_init * float(wt @ vb)

    # temporary-impact drag against the others' speed, per cell
    V = np.zeros(R)
    c = 0
    for s in range(grid.n_segments):
        times = grid.level0_times(s)
        vb = vbar_segments[s]
        mseg = grid.steps[s]
        r = min(cells_per_segment, mseg)
        idx = [0] + sorted({int(round(j * mseg / r)) for j in range(1, r + 1)} | {mseg})
        for a, b in zip(idx[:-1], idx[1:]):
            V[c] = float(np.trapezoid(vb[a:b + 1], times[a:b + 1]))
            c += 1
    g += -m.lam_h * (1.0 - delta) * V

    # price shifts of the schedule trades
    tk = grid.trade_times
    if len(tk):
        xi = np.asarray(eq.xi, dtype=float)
        psik = psi(tk)
        g += m.gamma * (psik.T @ xi)
        const += m.gamma * float(np.sum(xi)) * x_init

    # running aversion along the agent's own state path
    phi = np.asarray(cfg.aversion.phi, dtype=float)
    TA, TB, RHO = [], [], []
    y = y_init
    evs = list(events) + [(grid.horizon + 1.0, y_init)]
    ei = 0
    for s in range(grid.n_segments):
        times = grid.level0_times(s)
        for ta, tb in zip(times[:-1], times[1:]):
            cur = ta
            while True:
                nxt_event = evs[ei][0] if ei < len(evs) else math.inf
                stop = min(tb, nxt_event)
                if stop > cur and phi[y] != 0.0:
                    TA.append(cur)
                    TB.append(stop)
                    RHO.append(phi[y])
                if nxt_event <= tb:
                    y = evs[ei][1]
                    ei += 1
                    cur = stop
                    continue
                break
    if TA:
        TAa = np.asarray(TA)
        TBa = np.asarray(TB)
        om = np.asarray(RHO) * (TBa - TAa) / 3.0
        PA = psi(TAa)
        PB = psi(TBa)
        quad = PA.T @ (om[:, None] * PA) + PB.T @ (om[:, None] * PB)
        cross = PA.T @ (om[:, None] * PB)
        quad += 0.5 * (cross + cross.T)
        P += 2.0 * quad
        g += -3.0 * x_init * ((PA + PB).T @ om)
        const += -3.0 * x_init * x_init * float(np.sum(om))

    return _Quadratic(edges, widths, P, g, const)


def _cell_projected_controls(traj_X_segments, grid, cells_per_segment: int) -> np.ndarray:
    """Cell averages of a realized control, from inventory at cell edges."""
    _, node_edges = _control_edges(grid, cells_per_segment)
    xs = [traj_X_segments[0][0]]
    for s, i in node_edges:
        xs.append(traj_X_segments[s][i])
    x = np.asarray(xs)
    edges, _ = _control_edges(grid, cells_per_segment)
    return np.diff(x) / np.diff(edges)


def deviation_gain(cfg: ModelConfig, eq: MeanFieldSolution, M: int, seed: int,
                   control_cells_per_segment: int = 20, *, rep: int = 0,
                   init_spread: float | None = None) -> DeviationResult:
    """Exact best response of one agent against the frozen remaining M-1.

    The whole realization (initial inventories and every agent's state path,
    including the deviator's) is frozen; the agent's payoff is then a strictly
    concave quadratic in her cell-discretized speed and one linear solve gives
    the grid-exact optimum.  Against it, j_mfg evaluates the same functional
    at the cell projection of her realized feedback play, so gain >= 0 up to
    solve rounding.  Martingale price-noise terms are omitted (mean zero).
    """
    if M < 2:
        raise SimulationError("deviation test needs at least two agents")
    traj, _ = simulate_population(cfg, eq, M, seed, rep=rep, init_spread=init_spread)
    vbar_minus = [(M * rec.vbar - rec.v_agent0) / (M - 1) for rec in traj.segments]
    quad = _deviator_quadratic(
        cfg, eq, 1.0 / M, vbar_minus, traj.agent0_initial_inventory,
        traj.agent0_initial_state, traj.agent0_events, control_cells_per_segment)
    w_mfg = _cell_projected_controls([rec.X_agent0 for rec in traj.segments],
                                     eq.grid, control_cells_per_segment)
    w_best = quad.maximizer()
    j_mfg = quad.value(w_mfg)
    j_best = quad.value(w_best)
    return DeviationResult(j_mfg, j_best, j_best - j_mfg, M, seed)


def _single_agent_inventory(cfg: ModelConfig, eq: MeanFieldSolution, x_init: float,
                            y_init: int, events) -> list[np.ndarray]:
    """Level-0 inventory path of one agent following the feedback law."""
    grid = eq.grid
    method = cfg.solver.integrator
    a_segs, b_segs = _segment_coeffs(cfg, eq)
    d = x_init - float(eq.E_by_state.initial()[y_init])
    y = y_init
    evs = list(events)
    ei = 0
    out = []
    for s in range(grid.n_segments):
        ft = grid.fine_times[s]
        mseg = grid.steps[s]
        E_seg = eq.E_by_state.segments[s]
        xs = np.empty(mseg + 1)
        xs[0] = E_seg[0, y] + d
        for i in range(mseg):
            t0, t2 = ft[2 * i], ft[2 * i + 2]
            ta = t0
            while ei < len(evs) and evs[ei][0] <= t2:
                te, ynew = evs[ei]
                d = _local_step(d, ta, te, y, ft, a_segs[s], b_segs[s], method)
                d += float(np.interp(te, ft, E_seg[:, y]) - np.interp(te, ft, E_seg[:, ynew]))
                y = ynew
                ta = te
                ei += 1
            d = _local_step(d, ta, t2, y, ft, a_segs[s], b_segs[s], method)
            xs[i + 1] = E_seg[2 * i + 2, y] + d
        out.append(xs)
    return out


def deviation_gain_vs_mean_field(cfg: ModelConfig, eq: MeanFieldSolution, x_init: float,
                                 *, y_init: int = 0, events=(),
                                 control_cells_per_segment: int = 20) -> DeviationResult:
    """Limiting deviation test with the rest of the crowd replaced by the mean field."""
    vbar = [eq.mu_agg.node_values(s)[:, 0] for s in range(eq.grid.n_segments)]
    quad = _deviator_quadratic(cfg, eq, 0.0, vbar, x_init, y_init, list(events),
                               control_cells_per_segment)
    xs = _single_agent_inventory(cfg, eq, x_init, y_init, list(events))
    w_mfg = _cell_projected_controls(xs, eq.grid, control_cells_per_segment)
    w_best = quad.maximizer()
    j_mfg = quad.value(w_mfg)
    j_best = quad.value(w_best)
    return DeviationResult(j_mfg, j_best, j_best - j_mfg, 0, 0)


# ---------------------------------------------------------------------------
# large trader deviation


@dataclass(frozen=True)
class LTDeviationResult:
    psi_mfg: float
    psi_best: float
    gain: float
    xi_best: np.ndarray
    M: int
    seed: int


def _psi_value(cfg: ModelConfig, xi: np.ndarray, xbar_k: np.ndarray,
               xbar0: float, vbar_k: np.ndarray) -> float:
    m = cfg.market
    inner = m.gamma * np.cumsum(xi) + m.gamma_h * (xbar_k - xbar0) \
        + m.lam_h * vbar_k + (m.lam + m.eta0) * xi
    return float(np.sum(-xi * inner))


def lt_deviation_gain(cfg: ModelConfig, overall_eq, M: int, seed: int, *,
                      rep: int = 0, init_spread: float | None = None) -> LTDeviationResult:
    """Exact best response of the trader against a simulated crowd realization.

    The agents' feedback play does not react to the trader's realized trades
    (only to the anticipated equilibrium schedule), so the empirical payoff is
    a strictly concave quadratic in the schedule under the completion
    constraint and the first-order formula gives the exact maximizer.
    """
    mf = overall_eq.mean_field
    traj, _ = simulate_population(cfg, mf, M, seed, rep=rep, init_spread=init_spread)
    K = cfg.schedule.K
    xbar0 = float(traj.segments[0].Xbar[0])
    xbar_k = np.array([traj.segments[k].Xbar[0] for k in range(1, K + 1)])
    if cfg.solver.mu_at_trades == "left":
        vbar_k = np.array([traj.segments[k - 1].vbar[-1] for k in range(1, K + 1)])
    else:
        vbar_k = np.array([traj.segments[k].vbar[0] for k in range(1, K + 1)])
    xi0 = float(cfg.schedule.xi0)
    xi_best = best_response_values(xbar_k, vbar_k, xi0, cfg)
    psi_star = _psi_value(cfg, np.asarray(overall_eq.xi_star, dtype=float), xbar_k, xbar0, vbar_k)
    psi_best = _psi_value(cfg, xi_best, xbar_k, xbar0, vbar_k)
    return LTDeviationResult(psi_star, psi_best, psi_best - psi_star, xi_best, M, seed)


# ---------------------------------------------------------------------------
# price-path sampling


@dataclass(frozen=True)
class LTPathOutcome:
    revenues: np.ndarray
    mean: float
    std_error: float


def sample_price_paths(cfg: ModelConfig, xi, solution: MeanFieldSolution,
                       replications: int, seed: int, P0: float = 0.0) -> LTPathOutcome:
    """Realized trader revenue under sampled price noise.

    The Brownian term is sampled exactly at the trade times; the crowd's
    permanent-impact drift integrates to gammaH (E(t_k) - E(0)) because the
    aggregate speed is the derivative of the aggregate inventory, so the only
    sampling error is statistical.  With sigma = 0 every replication equals
    the analytic expected revenue.
    """
    xi = np.asarray(xi, dtype=float)
    m = cfg.market
    K = len(xi)
    tk = solution.grid.trade_times
    if K != len(tk):
        raise ValueError("xi length must match the number of trade times")
    E_k = solution.E_at_trades()
    mu_k = solution.mu_at_trades(cfg.solver.mu_at_trades)
    E_start = float(solution.E_agg.initial()[0])
    base = P0 + m.gamma * np.cumsum(xi) + m.gamma_h * (E_k - E_start)
    hat_p = base + m.lam_h * mu_k + (m.lam + m.eta0) * xi
    det_revenue = float(np.sum(-xi * hat_p))
    revenues = np.empty(replications)
    if K == 0 or m.sigma == 0.0:
        revenues[:] = det_revenue
    else:
        dt = np.diff(np.concatenate(([0.0], tk)))
        sq = np.sqrt(dt)
        for r in range(replications):
            g = _stream(seed, _PURPOSE_PRICE, r, 0)
            W = np.cumsum(sq * g.standard_normal(K))
            revenues[r] = det_revenue + m.sigma * float(np.sum(-xi * W))
    mean = float(revenues.mean())
    std_error = float(revenues.std(ddof=1) / math.sqrt(replications)) if replications > 1 else 0.0
    return LTPathOutcome(revenues, mean, std_error)
