"""Minimal hand-rolled SVG line plots with ground-truth shading.

Output is deterministic text (no timestamps or generator metadata), so a
rerun with identical inputs is byte-identical.
"""
from __future__ import annotations

import numpy as np

from qtsad.errors import InputError


def render_line_svg(
    values: np.ndarray,
    truth_segments: list[tuple[int, int]] | None = None,
    flags: np.ndarray | None = None,
    title: str = "",
    width: int = 960,
    height: int = 280,
) -> str:
    """Polyline of a score trace with shaded truth bands and flag ticks."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise InputError("need a 1-D trace of at least two values")
    margin = 36
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0

    def sx(i: float) -> float:
        return margin + plot_w * i / (values.size - 1)

    def sy(v: float) -> float:
        return margin + plot_h * (1.0 - (v - lo) / span)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for start, end in truth_segments or []:
        x0, x1 = sx(start), sx(min(end + 1, values.size - 1))
        parts.append(
            f'<rect x="{x0:.2f}" y="{margin}" width="{max(x1 - x0, 1.0):.2f}" '
            f'height="{plot_h}" fill="#d62728" opacity="0.18"/>'
        )
    points = " ".join(f"{sx(i):.2f},{sy(v):.2f}" for i, v in enumerate(values))
    parts.append(
        f'<polyline points="{points}" fill="none" stroke="#1f77b4" stroke-width="1.2"/>'
    )
    if flags is not None:
        flags = np.asarray(flags, dtype=bool)
        y0, y1 = height - margin + 4, height - margin + 12
        for i in np.flatnonzero(flags):
            parts.append(
                f'<line x1="{sx(i):.2f}" y1="{y0}" x2="{sx(i):.2f}" y2="{y1}" '
                f'stroke="#d62728" stroke-width="1"/>'
            )
    parts.append(
        f'<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{margin}" y="{margin - 10}" font-family="monospace" '
        f'font-size="12">{title}</text>'
    )
    parts.append(
        f'<text x="{margin - 30}" y="{margin + 4}" font-family="monospace" '
        f'font-size="10">{hi:.3g}</text>'
    )
    parts.append(
        f'<text x="{margin - 30}" y="{height - margin}" font-family="monospace" '
        f'font-size="10">{lo:.3g}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(svg_text: str, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg_text)
