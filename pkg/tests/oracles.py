"""Brute-force numpy references, written without the library's kernels."""

import numpy as np


def _segment_dist2(p, a, b):
    ab = b - a
    t = np.clip(((p - a) * ab).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-300), 0.0, 1.0)
    d = p - (a + t[..., None] * ab)
    return (d * d).sum(-1)


def point_triangle_dist2(points, tris):
    """Squared distance from every point to every triangle, shape (P, T).

    Plane projection when the foot lies inside, otherwise the nearest of the
    three edges.
    """
    p = np.asarray(points, dtype=np.float64)[:, None, :]
    a, b, c = (np.asarray(tris, dtype=np.float64)[None, :, k, :] for k in range(3))
    n = np.cross(b - a, c - a)
    nn = (n * n).sum(-1)
    h = ((p - a) * n).sum(-1) / np.where(nn > 0, nn, 1.0)
    foot = p - h[..., None] * n
    inside = np.broadcast_to(nn > 0, h.shape).copy()
    for u, v in ((a, b), (b, c), (c, a)):
        inside &= (np.cross(v - u, foot - u) * n).sum(-1) >= 0
    plane = np.where(inside, h * h * nn, np.inf)
    edges = np.minimum(np.minimum(_segment_dist2(p, a, b), _segment_dist2(p, b, c)), _segment_dist2(p, c, a))
    return np.minimum(plane, edges)


def nearest_distances(points, tris, chunk=256):
    """Per-point unsigned distance to the closest triangle."""
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        out[s:s + chunk] = np.sqrt(point_triangle_dist2(points[s:s + chunk], tris).min(1))
    return out


def ray_hits(origins, directions, tris):
    """Ray parameter t of every (ray, triangle) hit, NaN for a miss, (R, T).

    Plane intersection followed by a same-side test against each edge.
    """
    o = np.asarray(origins, dtype=np.float64)[:, None, :]
    d = np.asarray(directions, dtype=np.float64)[:, None, :]
    a, b, c = (np.asarray(tris, dtype=np.float64)[None, :, k, :] for k in range(3))
    n = np.cross(b - a, c - a)
    denom = (n * d).sum(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((a - o) * n).sum(-1) / denom
    x = o + t[..., None] * d
    ok = np.abs(denom) > 1e-300
    for u, v in ((a, b), (b, c), (c, a)):
        ok &= (np.cross(v - u, x - u) * n).sum(-1) >= 0
    return np.where(ok, t, np.nan)


def nearest_hit(origins, directions, tris, tmin=0.0, tmax=np.inf):
    """Index and t of the hit with the smallest |t| in [tmin, tmax]; -1 on miss."""
    t = ray_hits(origins, directions, tris)
    t = np.where((t >= tmin) & (t <= tmax), t, np.nan)
    key = np.where(np.isnan(t), np.inf, np.abs(t))
    face = key.argmin(1)
    best = key[np.arange(len(key)), face]
    face = np.where(np.isfinite(best), face, -1)
    return face, np.where(face >= 0, t[np.arange(len(t)), np.maximum(face, 0)], np.nan)


def directed_hausdorff(points, tris):
    return float(nearest_distances(points, tris).max())
