"""Minimal deterministic SVG line plots for fairness curves.

Written by hand rather than through a plotting library so that the output
is byte-identical across runs and machines.
"""
from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

from .fairtest import FairnessCurve

WIDTH, HEIGHT = 480, 320
MARGIN = {"left": 56, "right": 16, "top": 32, "bottom": 44}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _nice_max(v: float) -> float:
    if v <= 0 or not math.isfinite(v):
        return 1.0
    mag = 10 ** math.floor(math.log10(v))
    for step in (1, 2, 2.5, 5, 10):
        if step * mag >= v:
            return step * mag
    return 10 * mag


def curves_svg(curves: Sequence[FairnessCurve], labels: Sequence[str], title: str = "") -> str:
    """Mean curve with a +/- 1 std band per series; x is the unmatched fraction."""
    if len(curves) != len(labels):
        raise ValueError("one label per curve")
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    top = 0.0
    for c in curves:
        for m, s in zip(c.mean, c.std):
            if math.isfinite(m):
                top = max(top, m + (s if math.isfinite(s) else 0.0))
    ymax = _nice_max(top)

    def sx(x):
        return MARGIN["left"] + x * pw

    def sy(y):
        return MARGIN["top"] + ph - min(max(y, 0.0), ymax) / ymax * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.0f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    # axes and ticks
    x0, y0 = sx(0), sy(0)
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(sx(1))}" y2="{_f(y0)}" stroke="black"/>')
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x0)}" y2="{_f(sy(ymax))}" stroke="black"/>')
    for i in range(6):
        fx = i / 5
        out.append(f'<text x="{_f(sx(fx))}" y="{_f(y0 + 16)}" text-anchor="middle">{fx * 100:.0f}%</text>')
        fy = ymax * i / 5
        out.append(f'<line x1="{_f(x0 - 4)}" y1="{_f(sy(fy))}" x2="{_f(x0)}" y2="{_f(sy(fy))}" stroke="black"/>')
        out.append(f'<text x="{_f(x0 - 6)}" y="{_f(sy(fy) + 4)}" text-anchor="end">{fy:g}</text>')
    out.append(
        f'<text x="{_f(sx(0.5))}" y="{HEIGHT - 8}" text-anchor="middle">share of unmatched test rows included</text>'
    )

    for idx, (c, label) in enumerate(zip(curves, labels)):
        color = PALETTE[idx % len(PALETTE)]
        pts = [(f, m, s) for f, m, s in zip(c.fractions, c.mean, c.std) if math.isfinite(m)]
        if not pts:
            continue
        upper = [f"{_f(sx(f))},{_f(sy(m + s))}" for f, m, s in pts]
        lower = [f"{_f(sx(f))},{_f(sy(m - s))}" for f, m, s in reversed(pts)]
        out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_f(sx(f))},{_f(sy(m))}" for f, m, _ in pts)
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        auc = "n/a" if c.f_auc is None else f"{c.f_auc:.2f}"
        ly = MARGIN["top"] + 14 * idx + 4
        out.append(f'<text x="{_f(sx(0.02))}" y="{ly}" fill="{color}">{escape(label)} (f-AUC {auc})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
