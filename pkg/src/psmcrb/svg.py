"""Minimal static SVG line charts.

Hand-assembled polylines and text only; output is deterministic
byte-for-byte for fixed input.  Supports log or linear scaling on either
axis and dashed/solid series for estimator-versus-bound styling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

WIDTH = 760
HEIGHT = 480
MARGIN_LEFT = 78
MARGIN_RIGHT = 210
MARGIN_TOP = 48
MARGIN_BOTTOM = 58

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#7f7f7f", "#9467bd",
    "#ff7f0e", "#17becf", "#8c564b", "#e377c2", "#bcbd22",
)


class ChartDataError(ValueError):
    """Chart input is empty or not plottable."""


@dataclass(frozen=True)
class Series:
    label: str
    x: tuple[float, ...]
    y: tuple[float, ...]
    dashed: bool = False


def _transform(values, log_scale, lo, hi, pix_lo, pix_hi):
    if log_scale:
        lo, hi = math.log10(lo), math.log10(hi)
        values = [math.log10(v) for v in values]
    span = hi - lo
    if span == 0.0:
        return [0.5 * (pix_lo + pix_hi) for _ in values]
    return [pix_lo + (v - lo) / span * (pix_hi - pix_lo) for v in values]


def _ticks(lo: float, hi: float, log_scale: bool) -> list[float]:
    if log_scale:
        d_lo = math.floor(math.log10(lo))
        d_hi = math.ceil(math.log10(hi))
        step = max(1, (d_hi - d_lo) // 6)
        return [10.0 ** d for d in range(d_lo, d_hi + 1, step)]
    if hi == lo:
        return [lo]
    raw = (hi - lo) / 5.0
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min(s for s in (mag, 2 * mag, 5 * mag, 10 * mag) if s >= raw)
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * step:
        out.append(t)
        t += step
    return out


def _fmt(v: float) -> str:
    if v == 0.0:
        return "0"
    a = abs(v)
    if 1e-3 <= a < 1e4:
        s = f"{v:.4g}"
    else:
        s = f"{v:.2e}"
    return s


def line_chart(series: list[Series], title: str, xlabel: str, ylabel: str,
               log_x: bool = False, log_y: bool = False) -> str:
    """Render one chart to an SVG string."""
    series = [s for s in series if len(s.x) > 0]
    if not series:
        raise ChartDataError("no data to plot")
    for s in series:
        if len(s.x) != len(s.y):
            raise ChartDataError(f"series {s.label!r} has mismatched x/y lengths")

    xs = [v for s in series for v in s.x]
    ys = [v for s in series for v in s.y]
    if log_x and min(xs) <= 0.0:
        raise ChartDataError("log x-axis needs positive abscissae")
    if log_y:
        floor = 1e-12
        ys = [max(v, floor) for v in ys]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_lo == x_hi:
        pad = abs(x_lo) * 0.5 + 1.0
        x_lo, x_hi = x_lo - (0.0 if log_x else pad), x_hi + pad
        if log_x:
            x_lo = x_hi / 10.0
    if y_lo == y_hi:
        pad = abs(y_lo) * 0.5 + 1.0
        y_lo, y_hi = y_lo - (0.0 if log_y else pad), y_hi + pad
        if log_y:
            y_lo = y_hi / 10.0

    px_lo, px_hi = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    py_lo, py_hi = HEIGHT - MARGIN_BOTTOM, MARGIN_TOP

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{(px_lo + px_hi) / 2:.2f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<rect x="{px_lo}" y="{py_hi}" width="{px_hi - px_lo}" '
        f'height="{py_lo - py_hi}" fill="none" stroke="#404040"/>',
    ]

    for t in _ticks(x_lo, x_hi, log_x):
        if not (x_lo <= t <= x_hi * (1 + 1e-12)):
            continue
        (px,) = _transform([t], log_x, x_lo, x_hi, px_lo, px_hi)
        parts.append(f'<line x1="{px:.2f}" y1="{py_lo}" x2="{px:.2f}" y2="{py_lo + 5}" stroke="#404040"/>')
        parts.append(f'<text x="{px:.2f}" y="{py_lo + 20}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>')
    for t in _ticks(y_lo, y_hi, log_y):
        if not (y_lo <= t <= y_hi * (1 + 1e-12)):
            continue
        (py,) = _transform([t], log_y, y_lo, y_hi, py_lo, py_hi)
        parts.append(f'<line x1="{px_lo - 5}" y1="{py:.2f}" x2="{px_lo}" y2="{py:.2f}" stroke="#404040"/>')
        parts.append(f'<text x="{px_lo - 9}" y="{py + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>')

    parts.append(f'<text x="{(px_lo + px_hi) / 2:.2f}" y="{HEIGHT - 16}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13">{xlabel}</text>')
    parts.append(f'<text x="20" y="{(py_lo + py_hi) / 2:.2f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" '
                 f'transform="rotate(-90 20 {(py_lo + py_hi) / 2:.2f})">{ylabel}</text>')

    for idx, s in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        ys_s = [max(v, 1e-12) if log_y else v for v in s.y]
        px = _transform(list(s.x), log_x, x_lo, x_hi, px_lo, px_hi)
        py = _transform(ys_s, log_y, y_lo, y_hi, py_lo, py_hi)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        dash = ' stroke-dasharray="7,4"' if s.dashed else ""
        if len(s.x) == 1:
            parts.append(f'<circle cx="{px[0]:.2f}" cy="{py[0]:.2f}" r="3.5" fill="{color}"/>')
        else:
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                         f'stroke-width="1.6"{dash}/>')
        ly = MARGIN_TOP + 16 * idx + 8
        lx = WIDTH - MARGIN_RIGHT + 14
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 26}" y2="{ly}" stroke="{color}" '
                     f'stroke-width="1.6"{dash}/>')
        parts.append(f'<text x="{lx + 32}" y="{ly + 4}" font-family="sans-serif" '
                     f'font-size="11">{s.label}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
