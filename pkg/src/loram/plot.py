"""Minimal SVG line charts from CSV columns."""
from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=20, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


class PlotError(ValueError):
    pass


def read_columns(path, x: str, ys: list[str]):
    """Read the named numeric columns; rows sharing an x value are averaged.

    Returns ``(xs, {y: values})`` sorted by x.  Raises :class:`PlotError`
    naming the column or the (1-based, header = line 1) line at fault.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in [x, *ys]:
            if col not in header:
                raise PlotError(f"column {col!r} not in CSV header {header}")
        sums: dict[float, list] = {}
        for line, row in enumerate(reader, start=2):
            try:
                xv = float(row[x])
                vals = [float(row[c]) for c in ys]
            except (TypeError, ValueError):
                raise PlotError(f"non-numeric value on line {line}") from None
            acc = sums.setdefault(xv, [0, [0.0] * len(ys)])
            acc[0] += 1
            for i, v in enumerate(vals):
                acc[1][i] += v
    if not sums:
        raise PlotError("CSV has no data rows")
    xs = sorted(sums)
    series = {c: [sums[v][1][i] / sums[v][0] for v in xs] for i, c in enumerate(ys)}
    return xs, series


def check_log(path, x, ys):
    """Raise if any y value is not strictly positive, naming its line."""
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            for c in ys:
                if float(row[c]) <= 0:
                    raise PlotError(f"--logy: non-positive {c} = {row[c]} on line {line}")


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(v):
    return f"{v:.4g}"


def render_svg(xs, series: dict, xlabel: str, logy: bool = False) -> str:
    ys_all = [v for vals in series.values() for v in vals]
    tf = math.log10 if logy else (lambda v: v)
    ty = [tf(v) for v in ys_all]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ty), max(ty)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    L, R = MARGIN["left"], WIDTH - MARGIN["right"]
    T, B = MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def px(v):
        return L + (v - x0) / (x1 - x0) * (R - L)

    def py(v):
        return B - (tf(v) - y0) / (y1 - y0) * (B - T)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{L}" y1="{B}" x2="{R}" y2="{B}" stroke="black"/>',
        f'<line x1="{L}" y1="{B}" x2="{L}" y2="{T}" stroke="black"/>',
    ]
    for v in _ticks(x0, x1):
        x = px(v)
        out.append(f'<line x1="{x:.2f}" y1="{B}" x2="{x:.2f}" y2="{B + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{B + 16}" text-anchor="middle">{_fmt(v)}</text>')
    for v in _ticks(y0, y1):
        y = B - (v - y0) / (y1 - y0) * (B - T)
        label = _fmt(10**v) if logy else _fmt(v)
        out.append(f'<line x1="{L - 4}" y1="{y:.2f}" x2="{L}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{L - 6}" y="{y + 4:.2f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{(L + R) / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    for i, (name, vals) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, vals))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = T + 14 + 18 * i
        out.append(f'<line x1="{R + 12}" y1="{ly - 4}" x2="{R + 32}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{R + 38}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
