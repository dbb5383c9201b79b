"""Minimal SVG line plots (no plotting library needed)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
WIDTH, HEIGHT = 640, 400
PAD_L, PAD_R, PAD_T, PAD_B = 70, 20, 30, 50


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def line_plot(series: Sequence[tuple[str, Sequence[float], Sequence[float]]], *, title: str = "",
              xlabel: str = "t", ylabel: str = "", log_y: bool = False) -> str:
    """SVG document with one polyline per (label, x, y) series.

    With ``log_y`` the curves show log10(y); nonpositive values are dropped.
    """
    prepared = []
    for label, xs, ys in series:
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        if log_y:
            keep = ys > 0
            xs, ys = xs[keep], np.log10(ys[keep])
        keep = np.isfinite(xs) & np.isfinite(ys)
        prepared.append((label, xs[keep], ys[keep]))
    allx = np.concatenate([p[1] for p in prepared]) if prepared else np.array([0.0, 1.0])
    ally = np.concatenate([p[2] for p in prepared]) if prepared else np.array([0.0, 1.0])
    if allx.size == 0:
        allx, ally = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = WIDTH - PAD_L - PAD_R, HEIGHT - PAD_T - PAD_B

    def sx(v):
        return PAD_L + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return PAD_T + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{PAD_L}" y="{PAD_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{sx(v):.2f}" y1="{PAD_T + ph}" x2="{sx(v):.2f}" y2="{PAD_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(v):.2f}" y="{PAD_T + ph + 18}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(y0, y1):
        text = f"1e{v:g}" if log_y else f"{v:g}"
        out.append(f'<line x1="{PAD_L - 5}" y1="{sy(v):.2f}" x2="{PAD_L}" y2="{sy(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{PAD_L - 8}" y="{sy(v) + 4:.2f}" text-anchor="end">{text}</text>')
    out.append(f'<text x="{PAD_L + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="15" y="{PAD_T + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 15 {PAD_T + ph / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{PAD_L + pw / 2}" y="18" text-anchor="middle">{escape(title)}</text>')
    for k, (label, xs, ys) in enumerate(prepared):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = PAD_T + 15 + 16 * k
        out.append(f'<line x1="{PAD_L + pw - 120}" y1="{ly - 4}" x2="{PAD_L + pw - 100}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{PAD_L + pw - 95}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_norm_plot(path, series, title: str = "") -> None:
    """log ||u(t)|| against t for one or more trajectories."""
    Path(path).write_text(line_plot([(lbl, tr.t, tr.l2) for lbl, tr in series], title=title,
                                    xlabel="t", ylabel="||u(t)||  (log scale)", log_y=True))
