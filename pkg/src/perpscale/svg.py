"""Minimal SVG writers for scatter panels and Monte Carlo distribution plots."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)
MAX_DISPLAY_POINTS = 20_000
PANEL = 260
MARGIN = 30


def color_for(label) -> str:
    if label is None:
        return "#333333"
    return PALETTE[int(label) % len(PALETTE)]


def _num(v: float) -> str:
    return f"{v:.2f}"


class _Doc:
    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.parts = []

    def add(self, s):
        self.parts.append(s)

    def text(self, x, y, s, size=12, anchor="middle", **attrs):
        extra = "".join(f' {k.replace("_", "-")}="{escape(str(v))}"' for k, v in attrs.items())
        self.add(f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" '
                 f'text-anchor="{anchor}" font-family="sans-serif"{extra}>{escape(str(s))}</text>')

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
                 f'stroke="{stroke}" stroke-width="{width}"{d}/>')

    def render(self) -> str:
        head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">\n'
                f'<rect width="100%" height="100%" fill="#ffffff"/>\n')
        return head + "\n".join(self.parts) + "\n</svg>\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.render(), encoding="utf-8")
        return path


def _display_rows(n, seed):
    if n <= MAX_DISPLAY_POINTS:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, MAX_DISPLAY_POINTS, replace=False))


def scatter_grid(panels, path, n_cols=1, title=None, seed=0) -> Path:
    """Write a grid of scatter panels; panels fill rows left to right.

    Each panel is a dict with ``title``, ``coords`` (``None`` marks an
    infeasible cell) and optional ``labels``. Panels in the same column
    share their axis ranges.
    """
    n_rows = max(1, math.ceil(len(panels) / n_cols))
    top = MARGIN + (20 if title else 0)
    doc = _Doc(n_cols * (PANEL + MARGIN) + MARGIN, n_rows * (PANEL + MARGIN) + top)
    if title:
        doc.text(doc.width / 2, 20, title, size=14)

    bounds = {}
    for i, p in enumerate(panels):
        if p.get("coords") is None:
            continue
        c = np.asarray(p["coords"])
        lo, hi = c[:, :2].min(axis=0), c[:, :2].max(axis=0)
        col = i % n_cols
        if col in bounds:
            lo = np.minimum(lo, bounds[col][0])
            hi = np.maximum(hi, bounds[col][1])
        bounds[col] = (lo, hi)

    for i, p in enumerate(panels):
        row, col = divmod(i, n_cols)
        x0 = MARGIN + col * (PANEL + MARGIN)
        y0 = top + row * (PANEL + MARGIN)
        doc.add(f'<g id="panel-{i}">')
        doc.add(f'<rect x="{x0}" y="{y0}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#999"/>')
        doc.text(x0 + PANEL / 2, y0 - 6, p.get("title", ""), size=11)
        coords = p.get("coords")
        if coords is None:
            doc.text(x0 + PANEL / 2, y0 + PANEL / 2, "infeasible", size=16, fill="#aa0000")
            doc.add("</g>")
            continue
        coords = np.asarray(coords)
        labels = p.get("labels")
        lo, hi = bounds[col]
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        rows = _display_rows(coords.shape[0], seed + i)
        pad = 8
        for r in rows:
            u = x0 + pad + (coords[r, 0] - lo[0]) / span[0] * (PANEL - 2 * pad)
            v = y0 + PANEL - pad - (coords[r, 1] - lo[1]) / span[1] * (PANEL - 2 * pad)
            fill = color_for(None if labels is None else labels[r])
            doc.add(f'<circle cx="{_num(u)}" cy="{_num(v)}" r="1.2" fill="{fill}"/>')
        doc.add("</g>")
    return doc.save(path)


def _density(values, grid):
    if values.size < 2 or np.ptp(values) == 0:
        out = np.zeros_like(grid)
        out[np.argmin(np.abs(grid - (values[0] if values.size else 0.0)))] = 1.0
        return out
    bw = 1.06 * values.std() * values.size ** (-0.2)
    bw = bw if bw > 0 else 1.0
    sample = values if values.size <= 4000 else np.quantile(values, np.linspace(0, 1, 4000))
    z = (grid[:, None] - sample[None, :]) / bw
    return np.exp(-0.5 * z * z).sum(axis=1)


def monte_carlo_plot(report, path) -> Path:
    """Per-rate violins of sample perplexities with medians and the anchored fit line."""
    rates = sorted(report.rates)
    per = report.perplexity
    W, H = 640, 420
    left, right, top, bottom = 60, 20, 40, 50
    doc = _Doc(W, H)
    doc.text(W / 2, 22, f"sample perplexity vs sampling rate (anchor {per:g})", size=14)

    all_vals = [report.values(r) for r in rates]
    ymax = max([per] + [float(v.max()) for v in all_vals if v.size]) * 1.05
    ymin = 0.0

    def X(r):
        return left + r * (W - left - right)

    def Y(v):
        return H - bottom - (v - ymin) / (ymax - ymin) * (H - top - bottom)

    doc.line(left, H - bottom, W - right, H - bottom)
    doc.line(left, top, left, H - bottom)
    for t in np.linspace(0, 1, 11):
        doc.line(X(t), H - bottom, X(t), H - bottom + 4)
        doc.text(X(t), H - bottom + 18, f"{t:.1f}", size=10)
    for t in np.linspace(ymin, ymax, 6):
        doc.line(left - 4, Y(t), left, Y(t))
        doc.text(left - 8, Y(t) + 4, f"{t:.0f}", size=10, anchor="end")
    doc.text((left + W - right) / 2, H - 12, "sampling rate", size=12)
    doc.text(16, (top + H - bottom) / 2, "perplexity", size=12, transform=f"rotate(-90 16 {(top + H - bottom) / 2:.1f})")

    half = 0.035 * (W - left - right)
    for r, vals in zip(rates, all_vals):
        if not vals.size:
            continue
        grid = np.linspace(vals.min(), vals.max(), 60)
        dens = _density(vals, grid)
        dens = dens / dens.max() * half
        pts_r = [f"{_num(X(r) + d)},{_num(Y(g))}" for g, d in zip(grid, dens)]
        pts_l = [f"{_num(X(r) - d)},{_num(Y(g))}" for g, d in zip(grid[::-1], dens[::-1])]
        doc.add(f'<polygon points="{" ".join(pts_r + pts_l)}" fill="#9ecae1" stroke="#3182bd" stroke-width="0.8"/>')
        med = report.medians[r]
        doc.add(f'<circle cx="{_num(X(r))}" cy="{_num(Y(med))}" r="3" fill="#d62728"/>')

    slope = report.fit_slope
    doc.line(X(0), Y(per - slope), X(1), Y(per), stroke="#d62728", width=1.5)
    doc.line(X(0), Y(0), X(1), Y(per), stroke="#555", width=1, dash="4,3")
    doc.add(f'<circle cx="{_num(X(1))}" cy="{_num(Y(per))}" r="4" fill="none" stroke="#d62728"/>')
    doc.text(W - right - 4, top + 14, f"slope {slope:.2f}, R2 {report.fit_r2:.3f}", size=11, anchor="end")
    return doc.save(path)
