"""Command-line front end.

Subcommands: ``solve-partial``, ``solve-overall``, ``simulate``, ``figures``,
``validate``.  Exit codes: 0 success (residual warnings print a WARN line but
stay 0), 1 validation or solver failure, 2 usage error.

Configuration values can be overridden per run through environment variables
prefixed with ``HFTMFG_`` (path segments joined by double underscores, e.g.
``HFTMFG_MARKET__GAMMA=2``), and through ``--grid`` / ``--integrator``.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ModelConfig, load_config
from .errors import ConfigError, ResidualWarning, SimulationError, SolverError
from .meanfield import jump_conditions_report, solve_partial
from .reporting import (plot_columns_from_csv, write_csv, write_equilibrium_csv,
                        write_keyvalue_csv)
from .simulate import deviation_gain, lt_deviation_gain, simulate_population
from .strategy import lt_profit, solve_overall


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="model configuration JSON")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("--grid", type=int, default=None,
                   help="override solver.grid_steps_per_unit_time")
    p.add_argument("--integrator", choices=("euler", "rk4"), default=None,
                   help="override solver.integrator")
    p.add_argument("--workers", type=int, default=1, help="task-parallel worker threads")


def _load(args, mode: str | None = None) -> ModelConfig:
    cfg = load_config(args.config)
    overrides = {}
    if args.grid is not None:
        overrides["grid_steps_per_unit_time"] = args.grid
    if args.integrator is not None:
        overrides["integrator"] = args.integrator
    if overrides:
        cfg = cfg.with_solver(**overrides)
        cfg.validate()
    if mode is not None and cfg.mode != mode:
        raise ConfigError(f"this command requires a {mode}-mode configuration")
    return cfg


def _solve_with_warnings(fn):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ResidualWarning)
        result = fn()
    for w in caught:
        if issubclass(w.category, ResidualWarning):
            print(f"WARN {w.message}")
    return result


def cmd_solve_partial(args) -> int:
    cfg = _load(args, "partial")
    os.makedirs(args.out, exist_ok=True)
    sol = _solve_with_warnings(lambda: solve_partial(cfg))
    eq_csv = os.path.join(args.out, "equilibrium.csv")
    write_equilibrium_csv(eq_csv, sol, cfg)
    rows = [[c.k, c.time, c.expected, c.residual_aggregate, c.residual_state_max]
            for c in jump_conditions_report(sol, cfg)]
    write_csv(os.path.join(args.out, "residuals.csv"),
              ["k", "t_k", "expected_jump", "residual_aggregate", "residual_state_max"],
              rows, cfg,
              terminal=repr(sol.residuals.terminal), initial=repr(sol.residuals.initial),
              condition_number=repr(sol.residuals.terminal_condition_number))
    plot_columns_from_csv(eq_csv, os.path.join(args.out, "equilibrium_E.svg"),
                          "time", ["E_agg"], title="crowd mean inventory")
    plot_columns_from_csv(eq_csv, os.path.join(args.out, "equilibrium_mu.svg"),
                          "time", ["mu_agg"], title="crowd mean trading speed")
    print(f"wrote equilibrium outputs to {args.out}")
    return 0


def cmd_solve_overall(args) -> int:
    cfg = _load(args, "overall")
    os.makedirs(args.out, exist_ok=True)
    eq = _solve_with_warnings(lambda: solve_overall(cfg))
    times = cfg.schedule.times
    write_csv(os.path.join(args.out, "xi_star.csv"), ["k", "t_k", "xi_star_k"],
              [[k + 1, float(times[k]), float(eq.xi_star[k])] for k in range(len(times))],
              cfg, fixed_point_residual=repr(eq.fixed_point_residual))
    write_equilibrium_csv(os.path.join(args.out, "equilibrium.csv"), eq.mean_field, cfg)
    rep = lt_profit(cfg, eq.xi_star, eq.mean_field)
    write_keyvalue_csv(os.path.join(args.out, "profit.csv"),
                       {"profit_no_hft": rep.profit_no_hft,
                        "profit_with_hft": rep.profit_with_hft,
                        "difference": rep.difference}, cfg)
    write_csv(os.path.join(args.out, "concavity.csv"), ["eigenvalue"],
              [[float(v)] for v in eq.concavity.eigenvalues], cfg,
              negative_definite=eq.concavity.negative_definite)
    print(f"wrote joint-equilibrium outputs to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    if cfg.mode == "overall":
        overall = _solve_with_warnings(lambda: solve_overall(cfg))
        eq = overall.mean_field
    else:
        overall = None
        eq = _solve_with_warnings(lambda: solve_partial(cfg))

    Ms = list(args.M)
    seeds = [args.seed + i for i in range(args.seeds)]
    tasks = [(M, seed) for M in Ms for seed in seeds]

    if args.dump_trajectories:
        nodes = eq.grid.total_level0_nodes()
        worst = max(Ms) * nodes
        if worst > 1_000_000:
            print(f"refusing trajectory dump: {worst} rows exceed the 1e6 guard",
                  file=sys.stderr)
            return 1

    def run(task):
        M, seed = task
        traj, met = simulate_population(cfg, eq, M, seed,
                                        record_paths=args.dump_trajectories)
        row = {"metrics": [M, seed, met.theta_dev, met.Z_dev, met.vbar_l2]}
        if not args.skip_deviation:
            dev = deviation_gain(cfg, eq, M, seed)
            row["hft"] = [M, seed, dev.j_mfg, dev.j_best, dev.gain]
            if overall is not None:
                lt = lt_deviation_gain(cfg, overall, M, seed)
                row["lt"] = [M, seed, lt.psi_mfg, lt.psi_best, lt.gain]
        if args.dump_trajectories:
            row["traj"] = (M, seed, traj)
        return row

    try:
        if args.workers > 1:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(run, tasks))
        else:
            results = [run(t) for t in tasks]
    except (SimulationError, SolverError) as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return 1

    write_csv(os.path.join(args.out, "metrics.csv"),
              ["M", "seed", "theta_dev", "Z_dev", "vbar_l2"],
              [r["metrics"] for r in results], cfg)
    if not args.skip_deviation:
        write_csv(os.path.join(args.out, "deviations_hft.csv"),
                  ["M", "seed", "j_mfg", "j_best", "gain"],
                  [r["hft"] for r in results], cfg)
        if overall is not None:
            write_csv(os.path.join(args.out, "deviations_lt.csv"),
                      ["M", "seed", "psi_mfg", "psi_best", "gain"],
                      [r["lt"] for r in results], cfg)
    if len(Ms) >= 2:
        med = []
        for M in Ms:
            vals = [r["metrics"][4] for r in results if r["metrics"][0] == M]
            med.append((M, float(np.median(vals))))
        logm = np.log([m for m, _ in med])
        logv = np.log([v for _, v in med])
        slope = float(np.polyfit(logm, logv, 1)[0])
        rows = [["vbar_l2_median", M, v] for M, v in med]
        rows.append(["vbar_l2_loglog_slope", "", slope])
        write_csv(os.path.join(args.out, "slope.csv"), ["quantity", "M", "value"], rows, cfg)
    if args.dump_trajectories:
        for r in results:
            M, seed, traj = r["traj"]
            rows = []
            for s, rec in enumerate(traj.segments):
                segX = traj.paths_X[s]
                segY = traj.paths_Y[s]
                for i, t in enumerate(rec.times):
                    for j in range(M):
                        rows.append([t, j, segX[i, j], int(segY[i, j])])
            write_csv(os.path.join(args.out, f"trajectory_M{M}_seed{seed}.csv"),
                      ["time", "agent", "X", "Y"], rows, cfg)
    print(f"wrote simulation outputs for {len(tasks)} runs to {args.out}")
    return 0


def cmd_figures(args) -> int:
    from .figures import figure_specs, render_panel
    specs = figure_specs()
    ids = list(args.ids)
    unknown = [fid for fid in ids if fid not in specs]
    if unknown:
        print(f"unknown figure id(s): {unknown}; known: {sorted(specs)}", file=sys.stderr)
        return 2
    panels = [p for fid in ids for p in specs[fid].panels]

    def run(panel):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ResidualWarning)
            return render_panel(panel, args.out)

    if args.workers > 1 and panels:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            written = list(pool.map(run, panels))
    else:
        written = [run(p) for p in panels]
    for paths in written:
        for path in paths:
            print(f"wrote {path}")
    return 0


def cmd_validate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    from .validate import run_validation
    report = run_validation(
        out_path=os.path.join(args.out, "validation.json"),
        config_path=args.config,
        grid=args.grid if args.grid is not None else 10000,
        method=args.integrator if args.integrator is not None else "rk4")
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hftmfg",
        description="crowd/large-trader equilibrium solver and finite-population validator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-partial", help="crowd equilibrium for a fixed schedule")
    _add_common(p)
    p.set_defaults(fn=cmd_solve_partial)

    p = sub.add_parser("solve-overall", help="joint trader/crowd equilibrium")
    _add_common(p)
    p.set_defaults(fn=cmd_solve_overall)

    p = sub.add_parser("simulate", help="finite-population convergence and deviation tests")
    _add_common(p)
    p.add_argument("--M", type=int, nargs="+", required=True, help="population sizes")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds (from --seed)")
    p.add_argument("--skip-deviation", action="store_true")
    p.add_argument("--dump-trajectories", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("figures", help="reproduce built-in figure sweeps")
    _add_common(p, config_required=False)
    p.add_argument("--ids", nargs="*", default=[], help="figure ids (F1..F12)")
    p.set_defaults(fn=cmd_figures)

    p = sub.add_parser("validate", help="run the invariant suite")
    _add_common(p, config_required=False)
    p.set_defaults(fn=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, SimulationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
