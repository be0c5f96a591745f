"""Standalone SVG 1.1 figures: latent scatter, magnification heatmap and
matched-pair curves, side by side."""

from __future__ import annotations

import logging
import os
import xml.etree.ElementTree as ET

import numpy as np

from . import geodesic
from .metric import magnification_factor

log = logging.getLogger(__name__)

GRID = 100
PANEL = 320
MARGIN = 30
TREATED_COLOR = "#d62728"
CONTROL_COLOR = "#1f77b4"
# a few viridis stops; values in between are interpolated
_STOPS = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=np.float64)


def colormap(t):
    """Map values in [0, 1] to ``#rrggbb`` strings."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0) * (len(_STOPS) - 1)
    lo = np.minimum(np.floor(t).astype(int), len(_STOPS) - 2)
    f = (t - lo)[..., None]
    rgb = np.rint(_STOPS[lo] * (1 - f) + _STOPS[lo + 1] * f).astype(int)
    return np.array([f"#{r:02x}{g:02x}{b:02x}" for r, g, b in rgb.reshape(-1, 3)]).reshape(t.shape)


def bounding_box(points, pad=0.05):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return lo - pad * span, hi + pad * span


def magnification_grid(metric, lo, hi, size=GRID):
    """``size x size`` magnification factors at cell centres; row 0 is the bottom."""
    xs = lo[0] + (np.arange(size) + 0.5) * (hi[0] - lo[0]) / size
    ys = lo[1] + (np.arange(size) + 0.5) * (hi[1] - lo[1]) / size
    gx, gy = np.meshgrid(xs, ys)
    vals = magnification_factor(metric, np.column_stack([gx.ravel(), gy.ravel()]))
    return np.asarray(vals, dtype=np.float64).reshape(size, size)


def max_on_grid(grid, lo, hi, polyline):
    """Largest grid value over cells visited by a polyline, sampled every half cell."""
    size = grid.shape[0]
    P = np.asarray(polyline, dtype=np.float64)
    cell = (hi - lo) / size
    steps = np.abs(np.diff(P, axis=0)) / (0.5 * cell)
    counts = np.maximum(np.ceil(steps.max(axis=1)).astype(int), 1)
    pts = [P[-1:]]
    for k, c in enumerate(counts):
        r = (np.arange(c) / c)[:, None]
        pts.append(P[k] * (1 - r) + P[k + 1] * r)
    pts = np.vstack(pts)
    ij = np.clip(np.floor((pts - lo) / (hi - lo) * size).astype(int), 0, size - 1)
    return float(grid[ij[:, 1], ij[:, 0]].max())


def matched_pairs(assignment, treatment):
    """Unique ``(treated, control)`` pairs in the assignment, sorted."""
    pairs = set()
    for i, j in enumerate(assignment.match_index):
        if j < 0:
            continue
        pairs.add((i, int(j)) if treatment[i] == 1 else (int(j), i))
    return sorted(pairs)


def pair_curves(Z, pairs, metric, opts=None):
    """Polylines for matched pairs: geodesics for the LIV metric, chords otherwise."""
    opts = opts or geodesic.GeodesicOptions()
    if not pairs:
        return []
    a = np.array([Z[i] for i, _ in pairs])
    b = np.array([Z[j] for _, j in pairs])
    if metric is None or metric.is_constant:
        return [np.vstack([p, q]) for p, q in zip(a, b)]
    same = np.all(a == b, axis=1)
    curves = [np.vstack([p, q]) for p, q in zip(a, b)]
    todo = np.flatnonzero(~same)
    if todo.size:
        nodes = geodesic._solve_batch(a[todo], b[todo], metric, opts)[0]
        for k, idx in enumerate(todo):
            curves[idx] = nodes[k]
    return curves


class _Panel:
    def __init__(self, parent, x0, y0, lo, hi, title):
        self.g = ET.SubElement(parent, "g", transform=f"translate({x0},{y0})")
        self.lo, self.hi = lo, hi
        ET.SubElement(self.g, "rect", x="0", y="0", width=str(PANEL), height=str(PANEL),
                      fill="white", stroke="#444444")
        label = ET.SubElement(self.g, "text", x="0", y="-8", **{"font-size": "12", "font-family": "sans-serif"})
        label.text = title

    def xy(self, pts):
        pts = np.atleast_2d(pts)
        u = (pts[:, 0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * PANEL
        v = PANEL - (pts[:, 1] - self.lo[1]) / (self.hi[1] - self.lo[1]) * PANEL
        return u, v

    def scatter(self, pts, treatment, radius=2.5):
        u, v = self.xy(pts)
        for x, y, t in zip(u, v, treatment):
            ET.SubElement(self.g, "circle", cx=f"{x:.2f}", cy=f"{y:.2f}", r=str(radius),
                          fill=TREATED_COLOR if t == 1 else CONTROL_COLOR, **{"fill-opacity": "0.8"})

    def polyline(self, nodes, color="#333333", width="0.8"):
        u, v = self.xy(nodes)
        ET.SubElement(self.g, "polyline", points=" ".join(f"{x:.2f},{y:.2f}" for x, y in zip(u, v)),
                      fill="none", stroke=color, **{"stroke-width": width, "stroke-opacity": "0.7"})

    def heatmap(self, grid, levels=64):
        size = grid.shape[0]
        logv = np.log10(grid)
        span = logv.max() - logv.min()
        t = np.zeros_like(logv) if span <= 0 else (logv - logv.min()) / span
        q = np.rint(t * (levels - 1)).astype(int)
        colors = colormap(np.arange(levels) / (levels - 1))
        cell = PANEL / size
        for r in range(size):
            y = PANEL - (r + 1) * cell
            c = 0
            # merge horizontal runs of one colour level into one rect
            while c < size:
                e = c
                while e + 1 < size and q[r, e + 1] == q[r, c]:
                    e += 1
                ET.SubElement(self.g, "rect", x=f"{c * cell:.2f}", y=f"{y:.2f}",
                              width=f"{(e - c + 1) * cell + 0.05:.2f}", height=f"{cell + 0.05:.2f}",
                              fill=str(colors[q[r, c]]))
                c = e + 1
        return logv.min(), logv.max()

    def note(self, text):
        el = ET.SubElement(self.g, "text", x=str(PANEL / 2), y=str(PANEL / 2),
                           **{"text-anchor": "middle", "font-size": "12", "font-family": "sans-serif"})
        el.text = text


def emit_plots(latent, treatment, metric, assignment, outdir, filename, curves=None,
               opts=None, title=None):
    """Write one three-panel SVG and return its path.

    Panels: (a) latent points coloured by treatment, (b) log10
    magnification factor on a 100 x 100 grid over the bounding box, (c)
    matched-pair curves.  Only the first two latent coordinates are drawn;
    the heatmap is skipped unless K = 2.
    """
    Z = np.asarray(latent, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    K = Z.shape[1]
    Z2 = Z[:, :2] if K >= 2 else np.column_stack([Z[:, 0], np.zeros(Z.shape[0])])
    pairs = matched_pairs(assignment, treatment) if assignment is not None else []
    if curves is None:
        curves = pair_curves(Z, pairs, metric, opts)
    curves2 = [c[:, :2] if K >= 2 else np.column_stack([c[:, 0], np.zeros(len(c))]) for c in curves]
    allpts = np.vstack([Z2] + curves2) if curves2 else Z2
    lo, hi = bounding_box(allpts)

    width = 3 * PANEL + 4 * MARGIN
    height = PANEL + 3 * MARGIN
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", version="1.1",
                     width=str(width), height=str(height), viewBox=f"0 0 {width} {height}")
    if title:
        t = ET.SubElement(svg, "title")
        t.text = title
    y0 = 2 * MARGIN
    a = _Panel(svg, MARGIN, y0, lo, hi, "(a) latent points (red: treated)")
    a.scatter(Z2, treatment)
    b = _Panel(svg, 2 * MARGIN + PANEL, y0, lo, hi, "(b) log10 magnification factor")
    if K == 2 and metric is not None:
        vmin, vmax = b.heatmap(magnification_grid(metric, lo, hi))
        b.scatter(Z2, treatment, radius=1.5)
        cap = ET.SubElement(b.g, "text", x="0", y=str(PANEL + 16), **{"font-size": "11", "font-family": "sans-serif"})
        cap.text = f"range {vmin:.3g} .. {vmax:.3g}"
    else:
        reason = "no metric" if metric is None else f"heatmap skipped: K = {K} (2-D only)"
        b.note(reason)
        log.info("%s: %s", filename, reason)
    c = _Panel(svg, 3 * MARGIN + 2 * PANEL, y0, lo, hi, "(c) matched pairs")
    for poly in curves2:
        c.polyline(poly)
    c.scatter(Z2, treatment, radius=1.8)
    if title:
        head = ET.SubElement(svg, "text", x=str(MARGIN), y=str(MARGIN - 8),
                             **{"font-size": "14", "font-family": "sans-serif"})
        head.text = title
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, filename)
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
    return path
