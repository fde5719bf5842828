"""Triangle rasterization in UV space.

Pixel coordinates: ``x = u * W`` and ``y = (1 - v) * H``, so image row 0
is the top edge ``v = 1``. Texel ``(row, col)`` has samples at
``col + ox, row + oy`` with offsets ``{0.5}`` (1 sample) or
``{0.25, 0.75}^2`` (4 samples, row-major).
"""

from __future__ import annotations

import numpy as np
from numba import njit


def sample_offsets(supersampling: int) -> np.ndarray:
    if supersampling == 1:
        return np.array([[0.5, 0.5]])
    if supersampling == 4:
        return np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    raise ValueError("supersampling must be 1 or 4")


def to_pixels(uv: np.ndarray, width: int, height: int) -> np.ndarray:
    px = np.empty(uv.shape, dtype=np.float64)
    px[..., 0] = uv[..., 0] * width
    px[..., 1] = (1.0 - uv[..., 1]) * height
    return px


@njit(cache=True)
def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


@njit(cache=True)
def rasterize(tri_px, width, height, offsets, face_id, strict_eps):
    """Assign each sample to the first face (by index) covering it.

    ``face_id`` has shape (height, width, n_samples) and is filled in place
    (-1 = uncovered). Returns ``(f, g)`` for the first pair of faces that
    both strictly contain a sample, else ``(-1, -1)``.
    """
    ns = offsets.shape[0]
    bad_f = -1
    bad_g = -1
    for f in range(tri_px.shape[0]):
        ax, ay = tri_px[f, 0, 0], tri_px[f, 0, 1]
        bx, by = tri_px[f, 1, 0], tri_px[f, 1, 1]
        cx, cy = tri_px[f, 2, 0], tri_px[f, 2, 1]
        area = _edge(ax, ay, bx, by, cx, cy)
        if area == 0.0 or not np.isfinite(area):
            continue
        sgn = 1.0 if area > 0 else -1.0
        eps = strict_eps * abs(area)
        x0 = max(int(np.floor(min(ax, bx, cx))) - 1, 0)
        x1 = min(int(np.floor(max(ax, bx, cx))) + 1, width - 1)
        y0 = max(int(np.floor(min(ay, by, cy))) - 1, 0)
        y1 = min(int(np.floor(max(ay, by, cy))) + 1, height - 1)
        for row in range(y0, y1 + 1):
            for col in range(x0, x1 + 1):
                for s in range(ns):
                    px = col + offsets[s, 0]
                    py = row + offsets[s, 1]
                    w0 = sgn * _edge(bx, by, cx, cy, px, py)
                    w1 = sgn * _edge(cx, cy, ax, ay, px, py)
                    w2 = sgn * _edge(ax, ay, bx, by, px, py)
                    if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                        continue
                    g = face_id[row, col, s]
                    if g < 0:
                        face_id[row, col, s] = f
                    elif bad_f < 0 and w0 > eps and w1 > eps and w2 > eps:
                        # does the earlier face also strictly contain it?
                        gax, gay = tri_px[g, 0, 0], tri_px[g, 0, 1]
                        gbx, gby = tri_px[g, 1, 0], tri_px[g, 1, 1]
                        gcx, gcy = tri_px[g, 2, 0], tri_px[g, 2, 1]
                        garea = _edge(gax, gay, gbx, gby, gcx, gcy)
                        gs = 1.0 if garea > 0 else -1.0
                        geps = strict_eps * abs(garea)
                        v0 = gs * _edge(gbx, gby, gcx, gcy, px, py)
                        v1 = gs * _edge(gcx, gcy, gax, gay, px, py)
                        v2 = gs * _edge(gax, gay, gbx, gby, px, py)
                        if v0 > geps and v1 > geps and v2 > geps:
                            bad_f = g
                            bad_g = f
    return bad_f, bad_g


def rasterize_uvs(uvs: np.ndarray, width: int, height: int, supersampling: int = 1,
                  strict_eps: float = 1e-9):
    """Per-sample face ids for per-corner UVs of shape (F, 3, 2)."""
    tri = np.ascontiguousarray(to_pixels(np.asarray(uvs, dtype=np.float64), width, height))
    offs = sample_offsets(supersampling)
    face_id = np.full((height, width, len(offs)), -1, dtype=np.int32)
    pair = rasterize(tri, width, height, offs, face_id, strict_eps)
    return face_id, (int(pair[0]), int(pair[1]))


@njit(cache=True)
def _conflicts(label, radius):
    h, w = label.shape
    n = 0
    for r in range(h):
        for c in range(w):
            a = label[r, c]
            if a < 0:
                continue
            hit = False
            for rr in range(max(r - radius, 0), min(r + radius, h - 1) + 1):
                for cc in range(max(c - radius, 0), min(c + radius, w - 1) + 1):
                    b = label[rr, cc]
                    if b >= 0 and b != a:
                        hit = True
            if hit:
                n += 1
    return n


def chart_footprints(uvs, chart_of_face, resolution: int, supersampling: int = 4) -> np.ndarray:
    """Texel -> chart id (-1 empty; -2 where two charts cover one texel)."""
    face_id, _ = rasterize_uvs(uvs, resolution, resolution, supersampling)
    charts = np.where(face_id >= 0, np.asarray(chart_of_face)[np.maximum(face_id, 0)], -1)
    label = charts.max(axis=2)
    lo = np.where(charts >= 0, charts, np.iinfo(np.int64).max).min(axis=2)
    mixed = (label >= 0) & (lo != label)
    label[mixed] = -2
    return label


def dilated_overlap_count(uvs, chart_of_face, resolution: int, gutter: int) -> int:
    """Texels whose chart lies within Chebyshev distance 2*gutter of another
    chart's footprint (after dilating both footprints by ``gutter`` they would
    collide). 0 means the gutter is respected."""
    label = chart_footprints(uvs, chart_of_face, resolution)
    n_mixed = int((label == -2).sum())
    label = np.where(label == -2, np.iinfo(np.int64).max, label).astype(np.int64)
    return n_mixed + int(_conflicts(label, 2 * int(gutter)))
