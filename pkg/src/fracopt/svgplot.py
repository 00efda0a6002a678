"""Minimal deterministic SVG renderer for trajectory panels.

Hand-rolled on purpose: the output must be byte-stable across runs and
machines, panels are simple polylines, and no plotting dependency is worth
that trade.  Flagged nodes break the polylines (their filler values are not
drawn).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

PANEL_W = 380
PANEL_H = 280
MARGIN_L = 52
MARGIN_R = 12
MARGIN_T = 30
MARGIN_B = 34

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass
class Series:
    label: str
    t: np.ndarray
    values: np.ndarray
    flags: np.ndarray | None = None


@dataclass
class Panel:
    title: str
    series: list[Series]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _panel_svg(panel: Panel, x0: int, y0: int) -> list[str]:
    out = [f'<g transform="translate({x0},{y0})">']
    out.append(
        f'<rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="white" stroke="#888"/>'
    )
    out.append(
        f'<text x="{PANEL_W // 2}" y="18" text-anchor="middle" '
        f'font-family="monospace" font-size="13">{panel.title}</text>'
    )
    iw = PANEL_W - MARGIN_L - MARGIN_R
    ih = PANEL_H - MARGIN_T - MARGIN_B

    tmin = min(float(s.t[0]) for s in panel.series)
    tmax = max(float(s.t[-1]) for s in panel.series)
    vals = []
    for s in panel.series:
        keep = ~s.flags if s.flags is not None else np.ones(s.values.shape, bool)
        if keep.any():
            vals.append(s.values[keep])
    allv = np.concatenate(vals) if vals else np.zeros(1)
    vmin, vmax = float(allv.min()), float(allv.max())
    if vmax - vmin < 1e-300:
        vmin -= 1.0
        vmax += 1.0
    pad = 0.05 * (vmax - vmin)
    vmin -= pad
    vmax += pad

    def px(t):
        return MARGIN_L + (t - tmin) / (tmax - tmin) * iw

    def py(v):
        return MARGIN_T + (vmax - v) / (vmax - vmin) * ih

    out.append(
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{iw}" height="{ih}" '
        'fill="none" stroke="#ccc"/>'
    )
    font = 'font-family="monospace" font-size="10"'
    out.append(f'<text x="{MARGIN_L}" y="{PANEL_H - 10}" {font}>{_fmt(tmin)}</text>')
    out.append(
        f'<text x="{MARGIN_L + iw}" y="{PANEL_H - 10}" text-anchor="end" {font}>{_fmt(tmax)}</text>'
    )
    out.append(
        f'<text x="{MARGIN_L - 4}" y="{MARGIN_T + 8}" text-anchor="end" {font}>{_fmt(vmax)}</text>'
    )
    out.append(
        f'<text x="{MARGIN_L - 4}" y="{MARGIN_T + ih}" text-anchor="end" {font}>{_fmt(vmin)}</text>'
    )

    for si, s in enumerate(panel.series):
        color = _PALETTE[si % len(_PALETTE)]
        keep = ~s.flags if s.flags is not None else np.ones(s.values.shape, bool)
        runs = []
        cur = []
        for k in range(len(s.t)):
            if keep[k]:
                cur.append(k)
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        for run in runs:
            pts = " ".join(
                f"{px(s.t[k]):.2f},{py(s.values[k]):.2f}" for k in run
            )
            out.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>'
            )
        out.append(
            f'<text x="{MARGIN_L + 6 + 70 * si}" y="{MARGIN_T - 4}" fill="{color}" {font}>'
            f"{s.label}</text>"
        )
    out.append("</g>")
    return out


def render_panels(panels: list[Panel], path: str | Path) -> None:
    """Write a 2-column grid of panels as a standalone SVG file."""
    cols = 2
    rows = (len(panels) + cols - 1) // cols
    width = cols * (PANEL_W + 10) + 10
    height = rows * (PANEL_H + 10) + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for i, panel in enumerate(panels):
        x0 = 10 + (i % cols) * (PANEL_W + 10)
        y0 = 10 + (i // cols) * (PANEL_H + 10)
        parts.extend(_panel_svg(panel, x0, y0))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
