"""Minimal SVG writers for line plots and heatmaps (no plotting dependency)."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

W, H, PAD = 480, 360, 48


def _scale(v, lo, hi, a, b):
    if hi == lo:
        return (a + b) / 2
    return a + (v - lo) * (b - a) / (hi - lo)


def line_svg(path, series, *, title="", xlabel="", ylabel="", logy=False):
    """``series`` maps a label to (x, y) arrays."""
    pts = {}
    for label, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        if logy:
            ok = y > 0
            x, y = x[ok], np.log10(y[ok])
        pts[label] = (x, y)
    allx = np.concatenate([x for x, _ in pts.values()] or [np.zeros(1)])
    ally = np.concatenate([y for _, y in pts.values()] or [np.zeros(1)])
    x0, x1, y0, y1 = allx.min(), allx.max(), ally.min(), ally.max()
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
           f'<rect x="{PAD}" y="{PAD // 2}" width="{W - 1.5 * PAD}" height="{H - 1.5 * PAD}" '
           'fill="none" stroke="black"/>',
           f'<text x="{W / 2}" y="16" text-anchor="middle">{escape(title)}</text>',
           f'<text x="{W / 2}" y="{H - 6}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="12" y="{H / 2}" transform="rotate(-90 12 {H / 2})" text-anchor="middle">'
           f'{escape(("log10 " if logy else "") + ylabel)}</text>',
           f'<text x="{PAD}" y="{H - PAD + 14}" font-size="10">{x0:.3g}</text>',
           f'<text x="{W - PAD / 2}" y="{H - PAD + 14}" font-size="10" text-anchor="end">{x1:.3g}</text>',
           f'<text x="{PAD - 4}" y="{H - PAD}" font-size="10" text-anchor="end">{y0:.3g}</text>',
           f'<text x="{PAD - 4}" y="{PAD // 2 + 10}" font-size="10" text-anchor="end">{y1:.3g}</text>']
    for i, (label, (x, y)) in enumerate(pts.items()):
        c = colors[i % len(colors)]
        xy = " ".join(f"{_scale(a, x0, x1, PAD, W - PAD / 2):.2f},"
                      f"{_scale(b, y0, y1, H - PAD, PAD / 2):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{c}" points="{xy}"/>')
        out.append(f'<text x="{W - PAD}" y="{PAD + 14 * (i + 1)}" fill="{c}" font-size="11" '
                   f'text-anchor="end">{escape(str(label))}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)


def heatmap_svg(path, values, *, title=""):
    """Grayscale heatmap of a 2-D array (row 0 at the bottom)."""
    v = np.asarray(values, float)
    lo, hi = float(v.min()), float(v.max())
    n1, n2 = v.shape
    cw, ch = (W - 1.5 * PAD) / n1, (H - 1.5 * PAD) / n2
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
           f'<text x="{W / 2}" y="16" text-anchor="middle">{escape(title)}</text>']
    for i in range(n1):
        for j in range(n2):
            g = int(round(_scale(v[i, j], lo, hi, 255, 0)))
            out.append(f'<rect x="{PAD + i * cw:.2f}" y="{H - PAD - (j + 1) * ch:.2f}" '
                       f'width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" fill="rgb({g},{g},{g})"/>')
    out.append(f'<text x="{PAD}" y="{H - 8}" font-size="10">min {lo:.3g}, max {hi:.3g}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)
