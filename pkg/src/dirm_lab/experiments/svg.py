"""Minimal standalone SVG line plots (polylines, axis ticks, legend)."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=55)


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def line_plot(series: dict, path, title: str = "", xlabel: str = "", ylabel: str = "") -> Path:
    """Write ``series`` (label -> (xs, ys)) as an SVG file and return its path."""
    path = Path(path)
    xs_all = np.concatenate([np.asarray(v[0], float) for v in series.values()]) if series else np.zeros(1)
    ys_all = np.concatenate([np.asarray(v[1], float) for v in series.values()]) if series else np.zeros(1)
    finite = np.isfinite(ys_all)
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = (float(ys_all[finite].min()), float(ys_all[finite].max())) if finite.any() else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2 - 60:.1f}" y="22" font-size="14">{escape(title)}</text>',
        f'<line x1="{px(x0):.1f}" y1="{py(y0):.1f}" x2="{px(x1):.1f}" y2="{py(y0):.1f}" stroke="black"/>',
        f'<line x1="{px(x0):.1f}" y1="{py(y0):.1f}" x2="{px(x0):.1f}" y2="{py(y1):.1f}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.1f}" y1="{py(y0):.1f}" x2="{px(t):.1f}" y2="{py(y0) + 5:.1f}" stroke="black"/>')
        out.append(f'<text x="{px(t) - 10:.1f}" y="{py(y0) + 20:.1f}">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{px(x0) - 5:.1f}" y1="{py(t):.1f}" x2="{px(x0):.1f}" y2="{py(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{px(x0) - 60:.1f}" y="{py(t) + 4:.1f}">{t:.3g}</text>')
    out.append(f'<text x="{px((x0 + x1) / 2) - 20:.1f}" y="{HEIGHT - 12}">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{MARGIN["top"] + ph / 2:.1f}" transform="rotate(-90 14 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(float(x)):.1f},{py(float(y)):.1f}" for x, y in zip(xs, ys) if np.isfinite(y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="2"/>')
        ly = MARGIN["top"] + 16 * i
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path
