"""CSV and small deterministic SVG plots for experiment rows.

SVG output is hand-written text: a fixed 640x420 canvas, linear axes with
five ticks each, one polyline or marker set per series, and series colors
keyed by architecture id so every figure uses the same palette.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=170, top=40, bottom=50)

PALETTE = {
    "transformer": "#1f77b4",
    "transformer_L4": "#1f77b4",
    "gla": "#2ca02c",
    "linear_transformer": "#ff7f0e",
    "mamba_N4": "#c7a0d8",
    "mamba_N8": "#b07cc6",
    "mamba_N16": "#9467bd",
    "mamba_N32": "#7a4ca5",
    "mamba_N64": "#5e2f8a",
    "mamba_N16_L4": "#9467bd",
    "hybrid": "#d62728",
    "bound": "#7f7f7f",
}
FALLBACK_COLORS = ("#8c564b", "#e377c2", "#17becf", "#bcbd22", "#393b79", "#637939")


class FigureDataError(ValueError):
    pass


def color_for(series: str) -> str:
    if series in PALETTE:
        return PALETTE[series]
    if series.startswith("hybrid"):
        return PALETTE["hybrid"]
    # stable across runs: depends only on the name
    return FALLBACK_COLORS[sum(map(ord, series)) % len(FALLBACK_COLORS)]


# --- CSV ------------------------------------------------------------------------


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    if not rows:
        raise FigureDataError("no rows to write")
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="raise")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


# --- SVG ------------------------------------------------------------------------


@dataclass
class Series:
    name: str
    xs: list[float]
    ys: list[float]
    style: str = "line"  # line | points | dashed

    def __post_init__(self):
        if len(self.xs) != len(self.ys):
            raise FigureDataError(f"series {self.name}: {len(self.xs)} x values vs {len(self.ys)} y values")
        if not self.xs:
            raise FigureDataError(f"series {self.name} is empty")


@dataclass
class Plot:
    title: str
    xlabel: str
    ylabel: str
    series: list[Series] = field(default_factory=list)
    diagonal: bool = False  # draw y = x and shade the region above it
    logx: bool = False
    logy: bool = False


def _nice_range(lo: float, hi: float) -> tuple[float, float]:
    if lo == hi:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _tx(v: float, log: bool) -> float:
    if log:
        if v <= 0:
            raise FigureDataError("log axis needs positive values")
        return math.log10(v)
    return v


def _num(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.2e}"
    return f"{v:.4g}"


def render_svg(plot: Plot) -> str:
    if not plot.series:
        raise FigureDataError(f"figure '{plot.title}' has no series")
    xs = [_tx(x, plot.logx) for s in plot.series for x in s.xs]
    ys = [_tx(y, plot.logy) for s in plot.series for y in s.ys]
    if plot.diagonal:
        lo, hi = min(xs + ys), max(xs + ys)
        x0, x1 = _nice_range(lo, hi)
        y0, y1 = x0, x1
    else:
        x0, x1 = _nice_range(min(xs), max(xs))
        y0, y1 = _nice_range(min(ys), max(ys))
    L, R, Tm, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def px(x):
        return L + (x - x0) / (x1 - x0) * (R - L)

    def py(y):
        return B - (y - y0) / (y1 - y0) * (B - Tm)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{_esc(plot.title)}</text>',
    ]
    if plot.diagonal:
        top = min(x1, y1)
        out.append(
            f'<polygon id="infeasible-region" points="{px(x0):.2f},{py(y0):.2f} {px(top):.2f},{py(top):.2f} '
            f'{px(x0):.2f},{py(y1):.2f}" fill="#f2dede" stroke="none"/>'
        )
        out.append(
            f'<line id="diagonal" x1="{px(x0):.2f}" y1="{py(y0):.2f}" x2="{px(top):.2f}" y2="{py(top):.2f}" '
            'stroke="#a94442" stroke-dasharray="6,4" stroke-width="1.5"/>'
        )
    out.append(f'<line x1="{L}" y1="{B}" x2="{R}" y2="{B}" stroke="black"/>')
    out.append(f'<line x1="{L}" y1="{B}" x2="{L}" y2="{Tm}" stroke="black"/>')
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        lx = 10**fx if plot.logx else fx
        ly = 10**fy if plot.logy else fy
        out.append(f'<line x1="{px(fx):.2f}" y1="{B}" x2="{px(fx):.2f}" y2="{B + 5}" stroke="black"/>')
        out.append(
            f'<text x="{px(fx):.2f}" y="{B + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{_num(lx)}</text>'
        )
        out.append(f'<line x1="{L - 5}" y1="{py(fy):.2f}" x2="{L}" y2="{py(fy):.2f}" stroke="black"/>')
        out.append(
            f'<text x="{L - 8}" y="{py(fy) + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{_num(ly)}</text>'
        )
    out.append(
        f'<text x="{(L + R) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="13">{_esc(plot.xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{(Tm + B) / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 16 {(Tm + B) / 2:.1f})">{_esc(plot.ylabel)}</text>'
    )
    for k, s in enumerate(plot.series):
        col = color_for(s.name)
        pts = [(px(_tx(x, plot.logx)), py(_tx(y, plot.logy))) for x, y in zip(s.xs, s.ys)]
        if s.style in ("line", "dashed") and len(pts) > 1:
            dash = ' stroke-dasharray="5,3"' if s.style == "dashed" else ""
            path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{col}" stroke-width="2"{dash}/>')
        for x, y in pts:
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3.5" fill="{col}"/>')
        ly = Tm + 10 + 18 * k
        out.append(f'<rect x="{R + 15}" y="{ly - 8}" width="12" height="12" fill="{col}"/>')
        out.append(f'<text x="{R + 32}" y="{ly + 2}" font-family="sans-serif" font-size="11">{_esc(s.name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(text: str) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# --- figure builders ------------------------------------------------------------------

FIGURES = ("1a", "1b", "3a", "3b", "3c", "4", "5a", "5b")
REQUIRED = {
    "1a": ("arch", "n", "accuracy"),
    "1b": ("arch", "state_bits", "n_star", "bound_n_star"),
    "3a": ("arch", "T", "step_flops"),
    "3b": ("arch", "T", "state_bits"),
    "3c": ("arch", "T", "r"),
    "4": ("r_attn", "n_star"),
    "5a": ("arch", "bound_n_star", "n_star"),
    "5b": ("arch", "utilization"),
}


def _group(rows, key):
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r)
    return groups


def _series_by_arch(rows, x, y, style="line"):
    out = []
    for arch, rs in _group(rows, "arch").items():
        pts = {}
        for r in rs:
            if r.get(y) is None or r.get(x) is None:
                continue
            pts[float(r[x])] = float(r[y])
        if not pts:
            continue
        xs = sorted(pts)
        out.append(Series(arch, xs, [pts[v] for v in xs], style))
    return out


def build_plot(rows: Sequence[dict], figure_id: str) -> Plot:
    """Plot spec for one figure from result rows (dicts with ResultRow fields)."""
    if not rows:
        raise FigureDataError(f"figure {figure_id}: no rows")
    if figure_id not in REQUIRED:
        raise FigureDataError(f"unknown figure id {figure_id!r}; expected one of {FIGURES}")
    missing = [c for c in REQUIRED[figure_id] if any(c not in r for r in rows)]
    if missing:
        raise FigureDataError(f"figure {figure_id}: rows lack columns {missing}")
    if figure_id == "1a":
        return Plot("Recall accuracy vs number of pairs (T=32)", "pairs n", "accuracy",
                    _series_by_arch([r for r in rows if r.get("accuracy") is not None], "n", "accuracy"))
    if figure_id == "1b":
        per = {r["arch"]: r for r in rows}
        pts = sorted((float(r["state_bits"]), float(r["n_star"]), a) for a, r in per.items())
        series = [Series(a, [x], [max(y, 0.5)], "points") for x, y, a in pts]
        bx = sorted({x for x, _, _ in pts})
        series.append(Series("bound", bx, [_bound_at(rows, x) for x in bx], "dashed"))
        return Plot("Recall capacity vs state size", "state bits", "n* (log)", series, logx=True, logy=True)
    if figure_id == "3a":
        return Plot("Per-step FLOPs vs sequence length", "T", "max step FLOPs", _series_by_arch(rows, "T", "step_flops"))
    if figure_id == "3b":
        return Plot("State bits vs sequence length", "T", "peak state bits", _series_by_arch(rows, "T", "state_bits"))
    if figure_id == "3c":
        return Plot("Recall ratio r = n*/T vs sequence length", "T", "r", _series_by_arch(rows, "T", "r"))
    if figure_id == "4":
        return Plot("Hybrid sweep (T=32)", "attention fraction r_attn", "n*",
                    [Series("hybrid", *_xy(rows, "r_attn", "n_star"))])
    if figure_id == "5a":
        series = []
        for arch, rs in _group(rows, "arch").items():
            series.append(Series(arch, [float(r["bound_n_star"]) for r in rs],
                                 [max(float(r["n_star"]), 0.5) for r in rs], "points"))
        return Plot("Empirical n* vs theoretical bound", "bound n* (log)", "empirical n* (log)", series,
                    diagonal=True, logx=True, logy=True)
    if figure_id == "5b":
        series = []
        for i, (arch, rs) in enumerate(_group(rows, "arch").items()):
            u = sum(float(r["utilization"]) for r in rs) / len(rs)
            series.append(Series(arch, [float(i)], [u], "points"))
        return Plot("Mean bound utilization n*/bound", "architecture index", "utilization", series)
    raise FigureDataError(f"unknown figure id {figure_id!r}; expected one of {FIGURES}")


def _bound_at(rows, x):
    for r in rows:
        if float(r["state_bits"]) == x:
            return max(float(r["bound_n_star"]), 0.5)
    raise FigureDataError(f"no bound for state bits {x}")


def _xy(rows, x, y):
    pts = {}
    for r in rows:
        pts[float(r[x])] = float(r[y])
    xs = sorted(pts)
    return xs, [pts[v] for v in xs]


def emit_figure_data(rows: Sequence[dict], figure_id: str, outdir, columns: Sequence[str] | None = None) -> tuple[Path, Path]:
    """Write ``fig_<id>.csv`` and ``fig_<id>.svg`` under ``outdir``; returns both paths."""
    if not rows:
        raise FigureDataError(f"figure {figure_id}: no rows")
    plot = build_plot(rows, figure_id)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"fig_{figure_id}.csv"
    svg_path = outdir / f"fig_{figure_id}.svg"
    csv_path.write_text(rows_to_csv(rows, columns))
    svg_path.write_text(render_svg(plot))
    return csv_path, svg_path
