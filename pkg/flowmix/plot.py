"""Standalone SVG scatter of the 2-D PCA embedding."""

from __future__ import annotations

from enum import StrEnum
import logging
from pathlib import Path

import numpy as np

from .embedding import EmbeddingTable

_LOGGER = logging.getLogger(__name__)

WIDTH = 560
HEIGHT = 440
MARGIN = 56
LEGEND_WIDTH = 96
POINT_RADIUS = 3.5

CLUSTER_PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
)

# viridis-like stops at t = 0, 0.5, 1
RAMP_STOPS = ("#440154", "#21918c", "#fde725")


class ColorBy(StrEnum):
    RE = "re"
    CLUSTER = "cluster"


def _rgb(hex_color: str) -> tuple[int, int, int]:
    return tuple(int(hex_color[i:i + 2], 16) for i in (1, 3, 5))


def ramp_color(t: float) -> str:
    """Linear interpolation through ``RAMP_STOPS`` for t in [0, 1]."""
    t = min(max(float(t), 0.0), 1.0)
    segment = min(int(t * 2), 1)
    local = t * 2 - segment
    low, high = _rgb(RAMP_STOPS[segment]), _rgb(RAMP_STOPS[segment + 1])
    mixed = (round(a + (b - a) * local) for a, b in zip(low, high))
    return "#{:02x}{:02x}{:02x}".format(*mixed)


def cluster_color(label: int) -> str:
    return CLUSTER_PALETTE[int(label) % len(CLUSTER_PALETTE)]


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _scale(values: np.ndarray) -> tuple[float, float]:
    if len(values) == 0:
        return -1.0, 1.0
    vmin, vmax = float(values.min()), float(values.max())
    if vmax - vmin < 1e-12:
        return vmin - 1.0, vmax + 1.0
    pad = 0.05 * (vmax - vmin)
    return vmin - pad, vmax + pad


def render_svg(table: EmbeddingTable, color_by: ColorBy | str = ColorBy.CLUSTER) -> str:
    color_by = ColorBy(color_by)
    plot_right = WIDTH - MARGIN - LEGEND_WIDTH
    plot_bottom = HEIGHT - MARGIN
    x_lo, x_hi = _scale(table.pcs[:, 0])
    y_lo, y_hi = _scale(table.pcs[:, 1])

    def px(x: float) -> float:
        return MARGIN + (x - x_lo) / (x_hi - x_lo) * (plot_right - MARGIN)

    def py(y: float) -> float:
        return plot_bottom - (y - y_lo) / (y_hi - y_lo) * (plot_bottom - MARGIN)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<line x1="{MARGIN}" y1="{plot_bottom}" x2="{plot_right}" y2="{plot_bottom}" stroke="#000000"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{plot_bottom}" stroke="#000000"/>',
        f'<text x="{(MARGIN + plot_right) / 2:.1f}" y="{HEIGHT - 16}" text-anchor="middle">pc1</text>',
        f'<text x="16" y="{(MARGIN + plot_bottom) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(MARGIN + plot_bottom) / 2:.1f})">pc2</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        lines.append(f'<text x="{_fmt(px(xv))}" y="{plot_bottom + 16}" text-anchor="middle">{xv:.3g}</text>')
        lines.append(f'<text x="{MARGIN - 6}" y="{_fmt(py(yv) + 4)}" text-anchor="end">{yv:.3g}</text>')

    if color_by is ColorBy.RE and len(table):
        re_lo, re_hi = float(table.re.min()), float(table.re.max())
        span = re_hi - re_lo if re_hi > re_lo else 1.0
        colors = [ramp_color((r - re_lo) / span) for r in table.re]
    else:
        colors = [cluster_color(c) for c in table.cluster]

    for (x, y), color in zip(table.pcs, colors):
        lines.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="{POINT_RADIUS}" fill="{color}"/>')

    lines.extend(_legend(table, color_by, plot_right + 16))
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _legend(table: EmbeddingTable, color_by: ColorBy, left: float) -> list[str]:
    # squares and bars only, so the circle count equals the point count
    out = []
    if color_by is ColorBy.CLUSTER:
        out.append(f'<text x="{left}" y="{MARGIN}">cluster</text>')
        for row, label in enumerate(np.unique(table.cluster).tolist()):
            y = MARGIN + 12 + 16 * row
            out.append(f'<rect x="{left}" y="{y}" width="10" height="10" fill="{cluster_color(label)}"/>')
            out.append(f'<text x="{left + 16}" y="{y + 9}">{label}</text>')
        return out

    out.append(f'<text x="{left}" y="{MARGIN}">Re</text>')
    steps = 20
    for i in range(steps):
        y = MARGIN + 12 + 8 * (steps - 1 - i)
        out.append(f'<rect x="{left}" y="{y}" width="14" height="8" fill="{ramp_color(i / (steps - 1))}"/>')
    if len(table):
        out.append(f'<text x="{left + 20}" y="{MARGIN + 20}">{float(table.re.max()):.4g}</text>')
        out.append(f'<text x="{left + 20}" y="{MARGIN + 12 + 8 * steps}">{float(table.re.min()):.4g}</text>')
    return out


def write_svg(table: EmbeddingTable, path: str | Path, color_by: ColorBy | str = ColorBy.CLUSTER) -> None:
    Path(path).write_text(render_svg(table, color_by))
    _LOGGER.info(f"Wrote {len(table)}-point scatter to {path}")
