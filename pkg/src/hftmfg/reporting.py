"""CSV and SVG emission.

Every CSV starts with a metadata comment line carrying the config hash and
grid resolution, so identical inputs reproduce byte-identical files.  All
writes go through a temp-file-plus-rename so parallel runs never interleave
partial output.  SVG plots are rendered from already-written CSV files, never
from solver internals.
"""

from __future__ import annotations

import csv
import io
import os
import threading

import numpy as np

from .config import ModelConfig, config_hash
from .meanfield import MeanFieldSolution

PALETTE = ("#1f6fb2", "#d1495b", "#2e933c", "#8338ec", "#e36414", "#118ab2")


def _atomic_write(path: str, data: str) -> None:
    tmp = f"{path}.tmp-{os.getpid()}-{threading.get_ident()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(data)
    os.replace(tmp, path)


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) or isinstance(x, np.floating):
        return repr(float(x))
    return str(x)


def meta_line(cfg: ModelConfig | None, **extra) -> str:
    parts = []
    if cfg is not None:
        parts.append(f"config_hash={config_hash(cfg)}")
        parts.append(f"grid_steps_per_unit_time={cfg.solver.grid_steps_per_unit_time}")
        parts.append(f"integrator={cfg.solver.integrator}")
    parts.extend(f"{k}={v}" for k, v in extra.items())
    return "# " + " ".join(parts)


def write_csv(path, header: list[str], rows, cfg: ModelConfig | None = None, **extra) -> None:
    buf = io.StringIO()
    buf.write(meta_line(cfg, **extra) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    _atomic_write(str(path), buf.getvalue())


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8") as fh:
        meta = fh.readline().rstrip("\n")
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    return meta, header, rows


def equilibrium_rows(sol: MeanFieldSolution) -> tuple[list[str], list[list]]:
    N = sol.E_by_state.dim
    header = (["time", "side"] + [f"E_{i+1}" for i in range(N)]
              + [f"mu_{i+1}" for i in range(N)] + ["E_agg", "mu_agg"])
    rows = []
    S = sol.grid.n_segments
    for s in range(S):
        times = sol.grid.level0_times(s)
        E = sol.E_by_state.node_values(s)
        mu = sol.mu_by_state.node_values(s)
        Ea = sol.E_agg.node_values(s)[:, 0]
        mua = sol.mu_agg.node_values(s)[:, 0]
        for i, t in enumerate(times):
            side = "L" if (i == len(times) - 1 and s < S - 1) else "R"
            rows.append([t, side, *E[i], *mu[i], Ea[i], mua[i]])
    return header, rows


def write_equilibrium_csv(path, sol: MeanFieldSolution, cfg: ModelConfig) -> None:
    header, rows = equilibrium_rows(sol)
    write_csv(path, header, rows, cfg)


def write_keyvalue_csv(path, pairs: dict, cfg: ModelConfig | None = None, **extra) -> None:
    write_csv(path, ["key", "value"], [[k, v] for k, v in pairs.items()], cfg, **extra)


# ---------------------------------------------------------------------------
# SVG rendering


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = np.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(float(t))
        t += step
    return ticks


def _fmt_tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000 or abs(v) < 0.01:
        return f"{v:.1e}"
    return f"{v:.4g}"


def svg_plot(path, series, title: str = "", xlabel: str = "", ylabel: str = "",
             kind: str = "line", width: int = 640, height: int = 420) -> None:
    """Render labelled series to a standalone SVG file.

    ``series`` is a list of (label, x array, y array); ``kind`` is "line" or
    "bar" (bars use the first series only).
    """
    ml, mr, mt, mb = 66, 16, 34, 48
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(ys.min()), float(ys.max())
    if kind == "bar":
        ylo = min(ylo, 0.0)
        yhi = max(yhi, 0.0)
    if xhi == xlo:
        xhi = xlo + 1.0
    pad = 0.05 * (yhi - ylo) if yhi > ylo else 1.0
    ylo, yhi = ylo - pad, yhi + pad

    def X(v):
        return ml + (v - xlo) / (xhi - xlo) * pw

    def Y(v):
        return mt + (yhi - v) / (yhi - ylo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="Helvetica,Arial,sans-serif">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
           f'stroke="#444" stroke-width="1"/>']
    for tx in _nice_ticks(xlo, xhi):
        if xlo <= tx <= xhi:
            px = round(X(tx), 2)
            out.append(f'<line x1="{px}" y1="{mt + ph}" x2="{px}" y2="{mt + ph + 4}" stroke="#444"/>')
            out.append(f'<text x="{px}" y="{mt + ph + 17}" font-size="11" '
                       f'text-anchor="middle" fill="#222">{_fmt_tick(tx)}</text>')
    for ty in _nice_ticks(ylo, yhi):
        if ylo <= ty <= yhi:
            py = round(Y(ty), 2)
            out.append(f'<line x1="{ml - 4}" y1="{py}" x2="{ml}" y2="{py}" stroke="#444"/>')
            out.append(f'<text x="{ml - 7}" y="{py + 4}" font-size="11" '
                       f'text-anchor="end" fill="#222">{_fmt_tick(ty)}</text>')
    if ylo < 0.0 < yhi:
        py = round(Y(0.0), 2)
        out.append(f'<line x1="{ml}" y1="{py}" x2="{ml + pw}" y2="{py}" '
                   f'stroke="#bbb" stroke-width="0.8"/>')

    if kind == "bar":
        _, bx, by = series[0]
        bw = 0.6 * pw / max(len(bx), 1) / 1.5
        for xv, yv in zip(bx, by):
            x0 = X(float(xv)) - bw / 2
            y0, y1 = sorted((Y(0.0), Y(float(yv))))
            out.append(f'<rect x="{round(x0, 2)}" y="{round(y0, 2)}" width="{round(bw, 2)}" '
                       f'height="{round(y1 - y0, 2)}" fill="{PALETTE[0]}"/>')
    else:
        for idx, (label, sx, sy) in enumerate(series):
            color = PALETTE[idx % len(PALETTE)]
            pts = " ".join(f"{round(X(float(a)), 2)},{round(Y(float(b)), 2)}"
                           for a, b in zip(sx, sy))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="1.6"/>')
        lx, ly = ml + 10, mt + 16
        for idx, (label, _, _) in enumerate(series):
            if not label:
                continue
            color = PALETTE[idx % len(PALETTE)]
            out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                       f'stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{lx + 23}" y="{ly}" font-size="11" fill="#222">{label}</text>')
            ly += 15

    if title:
        out.append(f'<text x="{ml + pw / 2}" y="20" font-size="13" text-anchor="middle" '
                   f'fill="#111">{title}</text>')
    if xlabel:
        out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" font-size="12" '
                   f'text-anchor="middle" fill="#111">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{mt + ph / 2}" font-size="12" text-anchor="middle" '
                   f'fill="#111" transform="rotate(-90 16 {mt + ph / 2})">{ylabel}</text>')
    out.append("</svg>")
    _atomic_write(str(path), "\n".join(out) + "\n")


def plot_columns_from_csv(csv_path, svg_path, xcol: str, ycols: list[str],
                          title: str = "", kind: str = "line") -> None:
    _, header, rows = read_csv(csv_path)
    xi = header.index(xcol)
    x = np.array([float(r[xi]) for r in rows])
    series = []
    for col in ycols:
        ci = header.index(col)
        series.append((col, x, np.array([float(r[ci]) for r in rows])))
    svg_plot(svg_path, series, title=title, xlabel=xcol,
             ylabel=ycols[0] if len(ycols) == 1 else "", kind=kind)
