import warnings

import numpy as np
import pytest

from hftmfg import presets
from hftmfg.errors import ResidualWarning, SimulationError
from hftmfg.meanfield import solve_partial
from hftmfg.simulate import (default_init_spread, deviation_gain,
                             deviation_gain_vs_mean_field, inventory_growth_bound,
                             lt_deviation_gain, sample_price_paths,
                             simulate_population, _draw_agents)
from hftmfg.strategy import lt_profit, solve_overall


@pytest.fixture(scope="module")
def overall_two():
    cfg = presets.overall_two_type(grid=400).with_solver(shooting_tolerance=1e-3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResidualWarning)
        return cfg, solve_overall(cfg)


def test_deterministic_single_type_metrics_vanish(stiff_eq):
    cfg, eq = stiff_eq
    traj, met = simulate_population(cfg, eq, M=40, seed=3, init_spread=0.0)
    assert met.theta_dev == 0.0
    assert met.Z_dev == 0.0
    assert met.vbar_l2 == 0.0
    # every agent sits exactly on the mean path
    assert np.max(np.abs(traj.final.X - eq.E_by_state.terminal()[0])) == 0.0


def test_identical_runs_are_bitwise_identical(twostate_eq):
    cfg, eq = twostate_eq
    t1, m1 = simulate_population(cfg, eq, M=300, seed=9)
    t2, m2 = simulate_population(cfg, eq, M=300, seed=9)
    assert m1 == m2
    for a, b in zip(t1.segments, t2.segments):
        assert np.array_equal(a.vbar, b.vbar)
        assert np.array_equal(a.Z, b.Z)
    t3, m3 = simulate_population(cfg, eq, M=300, seed=10)
    assert m3 != m1


def test_no_switching_keeps_state_fractions_constant(twostate_eq):
    cfg, eq = twostate_eq
    cfg0 = presets.partial_two_type(x=0.0, y=0.0, grid=400)
    eq0 = solve_partial(cfg0)
    traj, _ = simulate_population(cfg0, eq0, M=200, seed=4)
    first = traj.segments[0].theta[0]
    for rec in traj.segments:
        assert np.array_equal(rec.theta, np.broadcast_to(first, rec.theta.shape))


def test_state_fraction_counts_conserved(twostate_eq):
    cfg, eq = twostate_eq
    traj, _ = simulate_population(cfg, eq, M=137, seed=5)
    for rec in traj.segments:
        counts = rec.theta * 137
        assert np.max(np.abs(counts - np.round(counts))) < 1e-9
        assert np.all(np.round(counts).sum(axis=1) == 137)


def test_initial_inventories_respect_bound(twostate_eq):
    cfg, eq = twostate_eq
    spread = default_init_spread(cfg)
    X0, Y0, *_ = _draw_agents(cfg, 500, 11, 0, spread)
    assert np.max(np.abs(X0)) <= cfg.population.inventory_bound
    assert set(np.unique(Y0)) <= {0, 1}


def test_inventory_growth_bound_holds(twostate_eq):
    cfg, eq = twostate_eq
    traj, _ = simulate_population(cfg, eq, M=500, seed=2)
    C2 = inventory_growth_bound(cfg, eq)
    X0, *_ = _draw_agents(cfg, 500, 2, 0, default_init_spread(cfg))
    bound = (np.abs(X0) + C2) * np.exp(C2 * cfg.schedule.T)
    assert np.all(traj.max_abs_X <= bound)


def test_vbar_error_decreases_like_one_over_M(stiff_eq):
    cfg, eq = stiff_eq
    meds = []
    for M in (200, 2000):
        vals = [simulate_population(cfg, eq, M, seed)[1].vbar_l2 for seed in range(12)]
        meds.append(np.median(vals))
    ratio = meds[0] / meds[1]
    assert 3.0 <= ratio <= 33.0


def test_exact_switch_times_respected(twostate_eq):
    cfg, eq = twostate_eq
    _, _, ev_t, ev_agent, ev_state = _draw_agents(cfg, 400, 8, 0, 0.5)
    assert np.all(np.diff(ev_t) >= 0.0)
    assert np.all((ev_t > 0.0) & (ev_t < cfg.schedule.T))
    # switching rate 0.5 from each state: expect roughly 0.5 * M * T events
    assert 100 <= len(ev_t) <= 320


def test_deviation_gain_nonnegative_and_shrinks(stiff_eq):
    cfg, eq = stiff_eq
    gains = {}
    for M in (100, 1000):
        res = [deviation_gain(cfg, eq, M, seed) for seed in range(6)]
        for r in res:
            assert r.gain >= -1e-12
        gains[M] = float(np.median([r.gain for r in res]))
    assert gains[1000] < gains[100]


def test_deviation_vs_mean_field_is_tiny(stiff_eq):
    # with the crowd replaced by the mean field itself, the feedback play is
    # the best response up to control-grid projection error
    cfg, eq = stiff_eq
    r = deviation_gain_vs_mean_field(cfg, eq, x_init=0.7)
    assert 0.0 <= r.gain < 5e-4 * max(abs(r.j_mfg), 1.0)


def test_deviation_perturbation_second_order(baseline_eq):
    # bumping one control cell by +1 against the mean field lowers the payoff
    # by eta * cell_width at leading order
    cfg, eq = baseline_eq
    from hftmfg.simulate import (_cell_projected_controls, _deviator_quadratic,
                                 _single_agent_inventory)
    vbar = [eq.mu_agg.node_values(s)[:, 0] for s in range(eq.grid.n_segments)]
    quad = _deviator_quadratic(cfg, eq, 0.0, vbar, 0.0, 0, [], 20)
    xs = _single_agent_inventory(cfg, eq, 0.0, 0, [])
    w = _cell_projected_controls(xs, eq.grid, 20)
    base = quad.value(w)
    c = len(w) // 2
    w2 = w.copy()
    w2[c] += 1.0
    drop = base - quad.value(w2)
    width = quad.widths[c]
    assert drop == pytest.approx(cfg.market.eta * width, abs=25.0 * width ** 2)


def test_deviation_quadratic_concavity_guard(stiff_eq):
    cfg, eq = stiff_eq
    bad = presets.partial_single_type(0.0, 10.0, grid=1000,
                                      market_overrides={"gammaH": 80.0}).with_solver(
        shooting_tolerance=1e-2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResidualWarning)
        eq_bad = solve_partial(bad)
    with pytest.raises(SimulationError, match="concave"):
        deviation_gain(bad, eq_bad, M=2, seed=0)


def test_lt_deviation_zero_when_decoupled():
    cfg = presets.overall_two_type(grid=400,
                                   market_overrides={"gammaH": 0.0, "lambdaH": 0.0})
    eq = solve_overall(cfg)
    r = lt_deviation_gain(cfg, eq, M=50, seed=1)
    assert abs(r.gain) < 1e-12
    assert np.max(np.abs(r.xi_best - eq.xi_star)) < 1e-12


def test_lt_deviation_zero_for_exact_mean_population():
    # deterministic single-type agents sit exactly on the mean field, so the
    # empirical aggregates equal the solved ones and the trader cannot improve
    cfg = presets.overall_single_type(2.0, 0.0, grid=400)
    eq = solve_overall(cfg)
    # all agents start exactly at the mean inventory
    r = lt_deviation_gain(cfg, eq, M=30, seed=0, init_spread=0.0)
    assert abs(r.gain) < 1e-10


def test_lt_deviation_shrinks_with_population(overall_two):
    cfg, eq = overall_two
    meds = []
    for M in (100, 1000):
        vals = [lt_deviation_gain(cfg, eq, M, seed).gain for seed in range(6)]
        assert all(v >= -1e-12 for v in vals)
        meds.append(np.median(vals))
    assert meds[1] < meds[0]


def test_euler_simulation_keeps_exactness():
    cfg = presets.partial_single_type(2.0, 0.0, grid=400, integrator="euler")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResidualWarning)
        eq = solve_partial(cfg)
    _, met = simulate_population(cfg, eq, M=25, seed=1, init_spread=0.0)
    assert met.theta_dev == 0.0 and met.Z_dev == 0.0 and met.vbar_l2 == 0.0


def test_price_paths_sigma_zero_exact(baseline_eq):
    cfg, eq = baseline_eq
    out = sample_price_paths(cfg, eq.xi, eq, replications=5, seed=3)
    ref = lt_profit(cfg, eq.xi, eq).profit_with_hft
    assert np.max(np.abs(out.revenues - ref)) < 1e-9 * abs(ref)
    assert out.std_error == 0.0


def test_price_paths_no_trades_zero_revenue():
    cfg = presets.partial_single_type(2.0, 0.0, grid=300, sigma=1.0)
    eq = solve_partial(cfg, xi=np.zeros(9))
    out = sample_price_paths(cfg, np.zeros(9), eq, replications=50, seed=3)
    assert np.all(out.revenues == 0.0)


def test_price_paths_clt_band(baseline_eq):
    cfg, eq = baseline_eq
    cfg_noise = presets.partial_single_type(2.0, 0.0, grid=1000, sigma=1.0)
    eq_n = solve_partial(cfg_noise)
    out = sample_price_paths(cfg_noise, eq_n.xi, eq_n, replications=4000, seed=17)
    ref = lt_profit(cfg_noise, eq_n.xi, eq_n).profit_with_hft
    assert abs(out.mean - ref) <= 3.0 * out.std_error


def test_price_paths_deterministic_per_seed(baseline_eq):
    cfg, eq = baseline_eq
    cfg_noise = presets.partial_single_type(2.0, 0.0, grid=300, sigma=0.7)
    eq_n = solve_partial(cfg_noise)
    a = sample_price_paths(cfg_noise, eq_n.xi, eq_n, 64, seed=5)
    b = sample_price_paths(cfg_noise, eq_n.xi, eq_n, 64, seed=5)
    assert np.array_equal(a.revenues, b.revenues)
