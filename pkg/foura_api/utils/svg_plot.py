"""
Minimal line charts written straight to SVG text (polylines with axis ticks).
"""
from typing import Dict, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = 60
COLORS = ('#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd', '#8c564b', '#e377c2', '#7f7f7f')
TICKS = 5


def _fmt(value: float) -> str:
    return f"{value:.4g}"


def line_plot(series: Dict[str, Sequence[float]], title: str = '', xlabel: str = '', ylabel: str = '',
              x: Sequence[float] = None) -> str:
    """
    Parameters:
        -series: dict
            -legend label -> y values (all of the same length as x)
        -x: sequence
            -shared x values; defaults to 1..n
    """
    lengths = {len(values) for values in series.values()}
    n = max(lengths) if lengths else 0
    xs = np.arange(1, n + 1, dtype=np.float64) if x is None else np.asarray(x, dtype=np.float64)
    ys = [np.asarray(values, dtype=np.float64) for values in series.values()]

    finite = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.array([])
    y_lo, y_hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    x_lo, x_hi = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5

    plot_w, plot_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def px(value):
        return MARGIN + (value - x_lo) / (x_hi - x_lo) * plot_w

    def py(value):
        return HEIGHT - MARGIN - (value - y_lo) / (y_hi - y_lo) * plot_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
           f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>']

    for i in range(TICKS + 1):
        xv = x_lo + (x_hi - x_lo) * i / TICKS
        yv = y_lo + (y_hi - y_lo) * i / TICKS
        out.append(f'<line x1="{px(xv):.2f}" y1="{HEIGHT - MARGIN}" x2="{px(xv):.2f}" '
                   f'y2="{HEIGHT - MARGIN + 5}" stroke="black"/>')
        out.append(f'<text x="{px(xv):.2f}" y="{HEIGHT - MARGIN + 18}" text-anchor="middle">{_fmt(xv)}</text>')
        out.append(f'<line x1="{MARGIN - 5}" y1="{py(yv):.2f}" x2="{MARGIN}" y2="{py(yv):.2f}" stroke="black"/>')
        out.append(f'<text x="{MARGIN - 8}" y="{py(yv) + 4:.2f}" text-anchor="end">{_fmt(yv)}</text>')

    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {HEIGHT / 2})">{escape(ylabel)}</text>')

    for ix, (label, y) in enumerate(zip(series, ys)):
        color = COLORS[ix % len(COLORS)]
        points = ' '.join(f"{px(xv):.2f},{py(yv):.2f}" for xv, yv in zip(xs, y) if np.isfinite(yv))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        legend_y = MARGIN + 16 * ix
        out.append(f'<line x1="{WIDTH - MARGIN - 110}" y1="{legend_y}" x2="{WIDTH - MARGIN - 90}" '
                   f'y2="{legend_y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 85}" y="{legend_y + 4}">{escape(str(label))}</text>')

    out.append('</svg>')
    return '\n'.join(out) + '\n'


def save_svg(path, text: str):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
