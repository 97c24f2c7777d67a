"""CSV tables, SVG plots and content digests."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Table:
    """Column names carry units in parentheses, e.g. ``"M (gamma)"``."""

    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        rows = tuple(tuple(r) for r in self.rows)
        for k, r in enumerate(rows):
            if len(r) != len(self.columns):
                raise ValueError(f"row {k} has {len(r)} fields, expected {len(self.columns)}")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_columns(cls, **named) -> "Table":
        names = list(named)
        data = [np.asarray(v) for v in named.values()]
        return cls(tuple(names), tuple(zip(*[d.tolist() for d in data])))

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    text = str(value)
    if any(c in text for c in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def emit_csv(table: Table, path: Path, comments: Sequence[str] = (), allow_empty: bool = False) -> Path:
    """Write ``table`` with '#' comment lines, a header row and ``.17g`` floats.

    Event lists (e.g. detected crossings) may legitimately be empty; pass
    ``allow_empty`` to write the header alone.
    """
    if not table.rows and not allow_empty:
        raise ValueError("refusing to write an empty table")
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(table.columns))
    lines.extend(",".join(format_value(v) for v in row) for row in table.rows)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path: Path) -> tuple[list[str], list[str], list[list[str]]]:
    """(comments, header, rows) of a file written by :func:`emit_csv`."""
    comments, header, rows = [], None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    return comments, header, rows


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# SVG

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
_W, _H = 640, 420
_PAD_L, _PAD_R, _PAD_T, _PAD_B = 70, 20, 36, 50


@dataclass
class Series:
    x: Sequence[float]
    y: Sequence[float]
    label: str = ""
    color: str | None = None


@dataclass
class Plot:
    title: str
    xlabel: str
    ylabel: str
    series: list[Series] = field(default_factory=list)
    markers: list[tuple[float, float]] = field(default_factory=list)
    logy: bool = False


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=mag * 10)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def render_svg(plot: Plot) -> str:
    def yval(v):
        if plot.logy:
            return math.log10(v) if v > 0 else math.nan
        return v

    xs = [float(x) for s in plot.series for x in s.x]
    ys = [yval(float(y)) for s in plot.series for y in s.y]
    ys = [y for y in ys if math.isfinite(y)]
    if not xs or not ys:
        raise ValueError("nothing to plot")
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = _W - _PAD_L - _PAD_R, _H - _PAD_T - _PAD_B

    def px(x):
        return _PAD_L + (x - x0) / (x1 - x0) * pw

    def py(y):
        return _PAD_T + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(plot.title)}</text>',
        f'<rect x="{_PAD_L}" y="{_PAD_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{_PAD_T + ph}" x2="{px(t):.2f}" y2="{_PAD_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{_PAD_T + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        label = f"1e{t:g}" if plot.logy else f"{t:g}"
        out.append(f'<line x1="{_PAD_L - 5}" y1="{py(t):.2f}" x2="{_PAD_L}" y2="{py(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{_PAD_L - 8}" y="{py(t) + 4:.2f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{_PAD_L + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{escape(plot.xlabel)}</text>')
    out.append(
        f'<text x="16" y="{_PAD_T + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {_PAD_T + ph / 2:.1f})">{escape(plot.ylabel)}</text>'
    )
    for k, s in enumerate(plot.series):
        color = s.color or _PALETTE[k % len(_PALETTE)]
        pts = []
        for x, y in zip(s.x, s.y):
            yy = yval(float(y))
            if math.isfinite(yy):
                pts.append(f"{px(float(x)):.2f},{py(yy):.2f}")
        title = f"<title>{escape(s.label)}</title>" if s.label else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}">{title}</polyline>')
    for x, y in plot.markers:
        yy = yval(float(y))
        if math.isfinite(yy):
            out.append(f'<circle cx="{px(float(x)):.2f}" cy="{py(yy):.2f}" r="6" fill="none" stroke="black" stroke-width="1.5"/>')
    labelled = [(k, s) for k, s in enumerate(plot.series) if s.label]
    if 0 < len(labelled) <= 10:
        for row, (k, s) in enumerate(labelled):
            color = s.color or _PALETTE[k % len(_PALETTE)]
            y = _PAD_T + 14 + 16 * row
            out.append(f'<line x1="{_W - _PAD_R - 110}" y1="{y - 4}" x2="{_W - _PAD_R - 90}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{_W - _PAD_R - 85}" y="{y}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_heatmap(title: str, xlabels: Sequence[str], ylabel: str, values: np.ndarray, xlabel: str = "site") -> str:
    """Rows of ``values`` become horizontal bands, columns the x categories."""
    values = np.asarray(values, dtype=float)
    n_rows, n_cols = values.shape
    pw, ph = _W - _PAD_L - _PAD_R, _H - _PAD_T - _PAD_B
    cw, ch = pw / n_cols, ph / n_rows
    vmax = float(values.max()) or 1.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for r in range(n_rows):
        for c in range(n_cols):
            shade = int(round(255 * (1 - values[r, c] / vmax)))
            out.append(
                f'<rect x="{_PAD_L + c * cw:.2f}" y="{_PAD_T + r * ch:.2f}" width="{cw:.2f}" height="{ch:.2f}" fill="rgb({shade},{shade},255)"/>'
            )
    for c, lab in enumerate(xlabels):
        out.append(f'<text x="{_PAD_L + (c + 0.5) * cw:.2f}" y="{_PAD_T + ph + 18}" text-anchor="middle">{escape(str(lab))}</text>')
    out.append(f'<text x="{_PAD_L + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{_PAD_T + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {_PAD_T + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(plot: Plot, path: Path) -> Path:
    path = Path(path)
    path.write_text(render_svg(plot))
    return path
