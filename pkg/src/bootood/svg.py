"""Minimal SVG writer for overlaid step histograms (no plotting dependency)."""

from __future__ import annotations

from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728")


def _num(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def step_histogram_svg(series, title="", xlabel="", width=480, height=320, density=True) -> str:
    """Render ``[(label, Histogram), ...]`` as outlined step curves with a legend.

    All histograms should share bin edges; counts are normalised per series
    when ``density`` so differently sized sets overlay comparably.
    """
    ml, mr, mt, mb = 50, 15, 30, 40
    pw, ph = width - ml - mr, height - mt - mb
    curves = []
    x_lo = min(float(h.edges[0]) for _, h in series)
    x_hi = max(float(h.edges[-1]) for _, h in series)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    for label, h in series:
        counts = h.counts.astype(np.float64)
        if density and counts.sum() > 0:
            counts = counts / counts.sum()
        curves.append((label, h.edges, counts))
    y_hi = max((float(c.max()) for _, _, c in curves if c.size), default=1.0) or 1.0

    def sx(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return mt + ph - y / y_hi * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle" font-family="sans-serif" font-size="13">{escape(title)}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    for k in range(5):
        xv = x_lo + (x_hi - x_lo) * k / 4
        out.append(
            f'<text x="{_num(sx(xv))}" y="{mt + ph + 14}" text-anchor="middle" font-family="sans-serif" font-size="10">{xv:.3g}</text>'
        )
        yv = y_hi * k / 4
        out.append(
            f'<text x="{ml - 4}" y="{_num(sy(yv) + 3)}" text-anchor="end" font-family="sans-serif" font-size="10">{yv:.3g}</text>'
        )
    out.append(
        f'<text x="{ml + pw / 2}" y="{height - 6}" text-anchor="middle" font-family="sans-serif" font-size="11">{escape(xlabel)}</text>'
    )
    for n, (label, edges, counts) in enumerate(curves):
        color = PALETTE[n % len(PALETTE)]
        pts = [(sx(edges[0]), sy(0.0))]
        for i, c in enumerate(counts):
            pts.append((sx(edges[i]), sy(c)))
            pts.append((sx(edges[i + 1]), sy(c)))
        pts.append((sx(edges[-1]), sy(0.0)))
        d = " ".join(f"{_num(x)},{_num(y)}" for x, y in pts)
        out.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 12 + 16 * n
        out.append(f'<line x1="{ml + pw - 110}" y1="{ly}" x2="{ml + pw - 90}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(
            f'<text x="{ml + pw - 85}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_histogram_csv(path, series) -> None:
    """One row per (series, bin): label, left edge, right edge, count."""
    with open(path, "w") as fh:
        fh.write("series,left,right,count\n")
        for label, h in series:
            for i, c in enumerate(h.counts):
                fh.write(f"{label},{float(h.edges[i])!r},{float(h.edges[i + 1])!r},{int(c)}\n")
