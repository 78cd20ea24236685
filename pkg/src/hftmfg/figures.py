"""Built-in figure presets reproducing the numerical study.

Each figure id maps to a list of panels; every panel emits one CSV and one
SVG with stable file names.  Sweeps:

  F1  crowd mean inventory, single type, phi=0, Gamma in {0, 0.1, 2}
  F2  crowd mean inventory, single type, Gamma=0, phi in {0, 5, 10}
  F3  profit difference vs lambdaH scan (phi=10, Gamma=2), fixed schedule
  F4  crowd mean inventory, two types (phi, Gamma) = (0,0) and (10,2),
      switch rates (x, y) in {(0,0), (0.2,0.8), (0.5,0.5), (0.8,0.2)}
  F5  same with types (0,2) and (10,0)
  F6  optimal trade schedule, single type, phi=0, Gamma in {0, 0.1, 2}
  F7  optimal trade schedule, single type, Gamma=0, phi in {0, 1, 5}
  F8  crowd mean inventory under the joint equilibrium, phi=0 Gamma sweep
  F9  profit difference vs lambdaH scan under the joint equilibrium
  F10 crowd mean inventory under the joint equilibrium, Gamma=0 phi sweep
  F11 optimal trade schedule, two types (0,2) and (10,0), (x, y) grid
  F12 crowd mean inventory for the same two-type joint equilibria
"""

from __future__ import annotations

import os
from dataclasses import dataclass


from . import presets
from .config import ModelConfig
from .meanfield import solve_partial
from .reporting import (plot_columns_from_csv, write_csv, write_equilibrium_csv)
from .strategy import lt_profit, solve_overall

XY_GRID = ((0.0, 0.0), (0.2, 0.8), (0.5, 0.5), (0.8, 0.2))


@dataclass(frozen=True)
class PanelSpec:
    name: str              # file stem, e.g. "F01a"
    kind: str              # partial_E | overall_xi | overall_E | scan_lamH
    cfg: ModelConfig | None
    label: str
    scan: tuple | None = None   # (mode, lamH values) for scans


@dataclass(frozen=True)
class FigureSpec:
    fid: str
    title: str
    panels: tuple[PanelSpec, ...]


def _letters(n: int):
    return "abcdefghijklmnopqrstuvwxyz"[:n]


def _panels(fid, kind, cfgs, labels):
    num = int(fid[1:])
    return tuple(PanelSpec(f"F{num:02d}{ch}", kind, cfg, lab)
                 for ch, cfg, lab in zip(_letters(len(cfgs)), cfgs, labels))


def figure_specs(grid: int = 2000) -> dict[str, FigureSpec]:
    gam_sweep = (0.0, 0.1, 2.0)
    phi_sweep = (0.0, 5.0, 10.0)
    phi_sweep_lt = (0.0, 1.0, 5.0)
    specs = {}

    specs["F1"] = FigureSpec("F1", "crowd inventory, phi=0", _panels(
        "F1", "partial_E",
        [presets.partial_single_type(g, 0.0, grid=grid) for g in gam_sweep],
        [f"Gamma={g}" for g in gam_sweep]))
    specs["F2"] = FigureSpec("F2", "crowd inventory, Gamma=0", _panels(
        "F2", "partial_E",
        [presets.partial_single_type(0.0, p, grid=grid) for p in phi_sweep],
        [f"phi={p}" for p in phi_sweep]))
    specs["F3"] = FigureSpec("F3", "profit difference vs lambdaH", (
        PanelSpec("F03a", "scan_lamH", None, "phi=10 Gamma=2",
                  ("partial", tuple(presets.lamH_scan_values()))),))
    specs["F4"] = FigureSpec("F4", "crowd inventory, switching types (0,0)/(10,2)", _panels(
        "F4", "partial_E",
        [presets.partial_two_type(phi=(0.0, 10.0), Gamma=(0.0, 2.0), x=x, y=y, grid=grid)
         for x, y in XY_GRID],
        [f"x={x} y={y}" for x, y in XY_GRID]))
    specs["F5"] = FigureSpec("F5", "crowd inventory, switching types (0,2)/(10,0)", _panels(
        "F5", "partial_E",
        [presets.partial_two_type(phi=(0.0, 10.0), Gamma=(2.0, 0.0), x=x, y=y, grid=grid)
         for x, y in XY_GRID],
        [f"x={x} y={y}" for x, y in XY_GRID]))
    specs["F6"] = FigureSpec("F6", "trade schedule, phi=0", _panels(
        "F6", "overall_xi",
        [presets.overall_single_type(g, 0.0, grid=grid) for g in gam_sweep],
        [f"Gamma={g}" for g in gam_sweep]))
    specs["F7"] = FigureSpec("F7", "trade schedule, Gamma=0", _panels(
        "F7", "overall_xi",
        [presets.overall_single_type(0.0, p, grid=grid) for p in phi_sweep_lt],
        [f"phi={p}" for p in phi_sweep_lt]))
    specs["F8"] = FigureSpec("F8", "crowd inventory under joint equilibrium, phi=0", _panels(
        "F8", "overall_E",
        [presets.overall_single_type(g, 0.0, grid=grid) for g in gam_sweep],
        [f"Gamma={g}" for g in gam_sweep]))
    specs["F9"] = FigureSpec("F9", "profit difference vs lambdaH, joint equilibrium", (
        PanelSpec("F09a", "scan_lamH", None, "phi=10 Gamma=2",
                  ("overall", tuple(presets.lamH_scan_values()))),))
    specs["F10"] = FigureSpec("F10", "crowd inventory under joint equilibrium, Gamma=0", _panels(
        "F10", "overall_E",
        [presets.overall_single_type(0.0, p, grid=grid) for p in phi_sweep_lt],
        [f"phi={p}" for p in phi_sweep_lt]))
    specs["F11"] = FigureSpec("F11", "trade schedule, switching types (0,2)/(10,0)", _panels(
        "F11", "overall_xi",
        [presets.overall_two_type(phi=(0.0, 10.0), Gamma=(2.0, 0.0), x=x, y=y, grid=grid)
         for x, y in XY_GRID],
        [f"x={x} y={y}" for x, y in XY_GRID]))
    specs["F12"] = FigureSpec("F12", "crowd inventory, switching types joint equilibrium", _panels(
        "F12", "overall_E",
        [presets.overall_two_type(phi=(0.0, 10.0), Gamma=(2.0, 0.0), x=x, y=y, grid=grid)
         for x, y in XY_GRID],
        [f"x={x} y={y}" for x, y in XY_GRID]))
    return specs


def profit_difference_scan(mode: str, lam_values, Gamma: float = 2.0, phi: float = 10.0,
                           grid: int = 1000):
    """Profit with/without the crowd across temporary-impact values."""
    rows = []
    for lam_h in lam_values:
        if mode == "partial":
            cfg = presets.partial_single_type(Gamma, phi, grid=grid,
                                              market_overrides={"lambdaH": float(lam_h)})
            sol = solve_partial(cfg)
            rep = lt_profit(cfg, cfg.schedule.quantities, sol)
        else:
            cfg = presets.overall_single_type(Gamma, phi, grid=grid,
                                              market_overrides={"lambdaH": float(lam_h)})
            eq = solve_overall(cfg)
            rep = lt_profit(cfg, eq.xi_star, eq.mean_field)
        rows.append([float(lam_h), rep.profit_no_hft, rep.profit_with_hft, rep.difference])
    return rows


def render_panel(panel: PanelSpec, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{panel.name}.csv")
    svg_path = os.path.join(out_dir, f"{panel.name}.svg")
    if panel.kind == "partial_E":
        sol = solve_partial(panel.cfg)
        write_equilibrium_csv(csv_path, sol, panel.cfg)
        plot_columns_from_csv(csv_path, svg_path, "time", ["E_agg"],
                              title=f"{panel.name} {panel.label}")
    elif panel.kind == "overall_E":
        eq = solve_overall(panel.cfg)
        write_equilibrium_csv(csv_path, eq.mean_field, panel.cfg)
        plot_columns_from_csv(csv_path, svg_path, "time", ["E_agg"],
                              title=f"{panel.name} {panel.label}")
    elif panel.kind == "overall_xi":
        eq = solve_overall(panel.cfg)
        times = panel.cfg.schedule.times
        rows = [[k + 1, float(times[k]), float(eq.xi_star[k])] for k in range(len(times))]
        write_csv(csv_path, ["k", "t_k", "xi_star_k"], rows, panel.cfg)
        plot_columns_from_csv(csv_path, svg_path, "t_k", ["xi_star_k"],
                              title=f"{panel.name} {panel.label}", kind="bar")
    elif panel.kind == "scan_lamH":
        mode, lam_values = panel.scan
        rows = profit_difference_scan(mode, lam_values)
        write_csv(csv_path, ["lambdaH", "profit_no_hft", "profit_with_hft", "difference"],
                  rows, None, scan=mode)
        plot_columns_from_csv(csv_path, svg_path, "lambdaH", ["difference"],
                              title=f"{panel.name} {panel.label}")
    else:
        raise ValueError(f"unknown panel kind {panel.kind!r}")
    return [csv_path, svg_path]
