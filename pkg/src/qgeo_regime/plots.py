"""Minimal static SVG line charts (score vs time with crisis shading)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

WIDTH, HEIGHT, PAD = 900, 300, 40


def svg_line_chart(values, shade=(), title: str = "", width: int = WIDTH, height: int = HEIGHT) -> str:
    """Return SVG text for one series; ``shade`` holds inclusive index ranges."""
    y = np.asarray(values, dtype=float)
    T = len(y)
    fin = np.isfinite(y)
    lo, hi = (float(y[fin].min()), float(y[fin].max())) if fin.any() else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    sx = (width - 2 * PAD) / max(T - 1, 1)
    sy = (height - 2 * PAD) / (hi - lo)

    def px(i):
        return PAD + i * sx

    def py(v):
        return height - PAD - (v - lo) * sy

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for a, b in shade:
        parts.append(
            f'<rect x="{px(a):.2f}" y="{PAD}" width="{max(px(b) - px(a), 1.0):.2f}" '
            f'height="{height - 2 * PAD}" fill="#f4c7c3" opacity="0.6"/>'
        )
    if lo < 0 < hi:
        parts.append(f'<line x1="{PAD}" x2="{width - PAD}" y1="{py(0):.2f}" y2="{py(0):.2f}" stroke="#999"/>')
    # break the line at undefined points
    seg = []
    for i in range(T):
        if fin[i]:
            seg.append(f"{px(i):.2f},{py(y[i]):.2f}")
        elif seg:
            parts.append(f'<polyline fill="none" stroke="#1f4e79" stroke-width="1" points="{" ".join(seg)}"/>')
            seg = []
    if seg:
        parts.append(f'<polyline fill="none" stroke="#1f4e79" stroke-width="1" points="{" ".join(seg)}"/>')
    parts.append(f'<text x="{PAD}" y="{PAD - 12}" font-family="sans-serif" font-size="14">{title}</text>')
    parts.append(f'<text x="4" y="{py(hi) + 4:.2f}" font-family="sans-serif" font-size="10">{hi:.3g}</text>')
    parts.append(f'<text x="4" y="{py(lo) + 4:.2f}" font-family="sans-serif" font-size="10">{lo:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, values, shade=(), title: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg_line_chart(values, shade, title))
