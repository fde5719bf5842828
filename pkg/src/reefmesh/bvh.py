"""Axis-aligned bounding-volume hierarchy over triangles.

Construction splits at the centroid median of the longest centroid axis
(stable sort, so the tree is deterministic). Queries are numba kernels that
run in parallel over query points; each query is a pure function of the
immutable tree, so results do not depend on the thread count.

Ties are broken toward the smaller face index, which makes the answers
identical to a linear scan over all triangles.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .errors import MeshError
from .mesh import TriangleMesh

LEAF_SIZE = 4


def configure_threads() -> int:
    """Apply ``REEF_THREADS`` (0 or unset = all cores) to numba."""
    want = int(os.environ.get("REEF_THREADS", "0") or 0)
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if want <= 0 else min(want, limit)
    numba.set_num_threads(n)
    return n


@njit(cache=True)
def closest_point_triangle(px, py, pz, tri):
    """Closest point on triangle ``tri`` (3x3) to p, by Voronoi-region tests."""
    ax, ay, az = tri[0, 0], tri[0, 1], tri[0, 2]
    abx, aby, abz = tri[1, 0] - ax, tri[1, 1] - ay, tri[1, 2] - az
    acx, acy, acz = tri[2, 0] - ax, tri[2, 1] - ay, tri[2, 2] - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az
    bpx, bpy, bpz = px - tri[1, 0], py - tri[1, 1], pz - tri[1, 2]
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return tri[1, 0], tri[1, 1], tri[1, 2]
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz
    cpx, cpy, cpz = px - tri[2, 0], py - tri[2, 1], pz - tri[2, 2]
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return tri[2, 0], tri[2, 1], tri[2, 2]
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        bx, by, bz = tri[1, 0], tri[1, 1], tri[1, 2]
        return bx + w * (tri[2, 0] - bx), by + w * (tri[2, 1] - by), bz + w * (tri[2, 2] - bz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w


@njit(cache=True)
def ray_triangle(ox, oy, oz, dx, dy, dz, tri):
    """Moller-Trumbore, two-sided. Returns (hit, t, u, v)."""
    e1x, e1y, e1z = tri[1, 0] - tri[0, 0], tri[1, 1] - tri[0, 1], tri[1, 2] - tri[0, 2]
    e2x, e2y, e2z = tri[2, 0] - tri[0, 0], tri[2, 1] - tri[0, 1], tri[2, 2] - tri[0, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return False, 0.0, 0.0, 0.0
    inv = 1.0 / det
    tx, ty, tz = ox - tri[0, 0], oy - tri[0, 1], oz - tri[0, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return False, 0.0, 0.0, 0.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return False, 0.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return True, t, u, v


@njit(cache=True)
def _build(tri, leaf_size):
    nf = tri.shape[0]
    cent = np.empty((nf, 3))
    for i in range(nf):
        for k in range(3):
            cent[i, k] = (tri[i, 0, k] + tri[i, 1, k] + tri[i, 2, k]) / 3.0
    order = np.arange(nf)
    cap = 2 * nf + 1
    lo = np.empty((cap, 3))
    hi = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    stack = np.empty((cap, 3), np.int64)
    stack[0, 0], stack[0, 1], stack[0, 2] = 0, 0, nf
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node, s, e = stack[sp, 0], stack[sp, 1], stack[sp, 2]
        bl = np.full(3, np.inf)
        bh = np.full(3, -np.inf)
        cl = np.full(3, np.inf)
        ch = np.full(3, -np.inf)
        for i in range(s, e):
            f = order[i]
            for k in range(3):
                for c in range(3):
                    x = tri[f, c, k]
                    if x < bl[k]:
                        bl[k] = x
                    if x > bh[k]:
                        bh[k] = x
                x = cent[f, k]
                if x < cl[k]:
                    cl[k] = x
                if x > ch[k]:
                    ch[k] = x
        lo[node] = bl
        hi[node] = bh
        axis = 0
        ext = ch[0] - cl[0]
        for k in range(1, 3):
            if ch[k] - cl[k] > ext:
                ext = ch[k] - cl[k]
                axis = k
        if e - s <= leaf_size or ext <= 0.0:
            start[node] = s
            count[node] = e - s
            continue
        idx = order[s:e].copy()
        keys = cent[idx, axis]
        perm = np.argsort(keys, kind="mergesort")
        order[s:e] = idx[perm]
        mid = (s + e) // 2
        l, r = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = l, r
        stack[sp, 0], stack[sp, 1], stack[sp, 2] = r, mid, e
        sp += 1
        stack[sp, 0], stack[sp, 1], stack[sp, 2] = l, s, mid
        sp += 1
    return lo[:n_nodes].copy(), hi[:n_nodes].copy(), left[:n_nodes].copy(), right[:n_nodes].copy(), \
        start[:n_nodes].copy(), count[:n_nodes].copy(), order


@njit(cache=True)
def _box_dist2(lo, hi, n, px, py, pz):
    d = 0.0
    if px < lo[n, 0]:
        d += (lo[n, 0] - px) ** 2
    elif px > hi[n, 0]:
        d += (px - hi[n, 0]) ** 2
    if py < lo[n, 1]:
        d += (lo[n, 1] - py) ** 2
    elif py > hi[n, 1]:
        d += (py - hi[n, 1]) ** 2
    if pz < lo[n, 2]:
        d += (lo[n, 2] - pz) ** 2
    elif pz > hi[n, 2]:
        d += (pz - hi[n, 2]) ** 2
    return d


@njit(cache=True)
def closest_one(tri, lo, hi, left, right, start, count, order, px, py, pz, stack, hint):
    """Nearest triangle to p. ``hint`` (a face id or -1) only seeds the
    pruning bound; the answer is the same for any hint."""
    best = np.inf
    best_f = -1
    bx = by = bz = 0.0
    if hint >= 0:
        bx, by, bz = closest_point_triangle(px, py, pz, tri[hint])
        best = (bx - px) ** 2 + (by - py) ** 2 + (bz - pz) ** 2
        best_f = hint
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        n = stack[sp]
        if _box_dist2(lo, hi, n, px, py, pz) > best:
            continue
        if left[n] < 0:
            for i in range(start[n], start[n] + count[n]):
                f = order[i]
                cx, cy, cz = closest_point_triangle(px, py, pz, tri[f])
                d = (cx - px) ** 2 + (cy - py) ** 2 + (cz - pz) ** 2
                if d < best or (d == best and f < best_f):
                    best, best_f = d, f
                    bx, by, bz = cx, cy, cz
            continue
        a, b = left[n], right[n]
        da = _box_dist2(lo, hi, a, px, py, pz)
        db = _box_dist2(lo, hi, b, px, py, pz)
        if da <= db:
            if db <= best:
                stack[sp] = b
                sp += 1
            if da <= best:
                stack[sp] = a
                sp += 1
        else:
            if da <= best:
                stack[sp] = a
                sp += 1
            if db <= best:
                stack[sp] = b
                sp += 1
    return best, best_f, bx, by, bz


_BLOCK = 64


@njit(cache=True, parallel=True)
def _closest_many(tri, lo, hi, left, right, start, count, order, pts, depth):
    n = pts.shape[0]
    dist = np.empty(n)
    face = np.empty(n, np.int64)
    cp = np.empty((n, 3))
    n_blocks = (n + _BLOCK - 1) // _BLOCK
    for blk in prange(n_blocks):
        stack = np.empty(depth, np.int64)
        hint = -1
        for i in range(blk * _BLOCK, min(n, (blk + 1) * _BLOCK)):
            d, f, x, y, z = closest_one(tri, lo, hi, left, right, start, count, order,
                                        pts[i, 0], pts[i, 1], pts[i, 2], stack, hint)
            hint = f
            dist[i] = np.sqrt(d)
            face[i] = f
            cp[i, 0], cp[i, 1], cp[i, 2] = x, y, z
    return dist, face, cp


@njit(cache=True)
def _slab(lo, hi, n, ox, oy, oz, idx, idy, idz, tmin, tmax):
    t0, t1 = tmin, tmax
    for k in range(3):
        o = ox if k == 0 else (oy if k == 1 else oz)
        inv = idx if k == 0 else (idy if k == 1 else idz)
        if np.isinf(inv):
            if o < lo[n, k] or o > hi[n, k]:
                return False, 0.0, 0.0
            continue
        a = (lo[n, k] - o) * inv
        b = (hi[n, k] - o) * inv
        if a > b:
            a, b = b, a
        if a > t0:
            t0 = a
        if b < t1:
            t1 = b
        if t0 > t1:
            return False, 0.0, 0.0
    return True, t0, t1


@njit(cache=True)
def intersect_one(tri, lo, hi, left, right, start, count, order,
                  ox, oy, oz, dx, dy, dz, tmin, tmax, stack):
    """Hit with the smallest |t| inside [tmin, tmax]; face -1 on a miss."""
    idx = 1.0 / dx if dx != 0.0 else np.inf
    idy = 1.0 / dy if dy != 0.0 else np.inf
    idz = 1.0 / dz if dz != 0.0 else np.inf
    best = np.inf
    best_t = 0.0
    best_f = -1
    bu = bv = 0.0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        n = stack[sp]
        ok, t0, t1 = _slab(lo, hi, n, ox, oy, oz, idx, idy, idz, tmin, tmax)
        if not ok:
            continue
        near = 0.0 if (t0 <= 0.0 <= t1) else min(abs(t0), abs(t1))
        if near > best:
            continue
        if left[n] < 0:
            for i in range(start[n], start[n] + count[n]):
                f = order[i]
                hit, t, u, v = ray_triangle(ox, oy, oz, dx, dy, dz, tri[f])
                if hit and tmin <= t <= tmax:
                    at = abs(t)
                    if at < best or (at == best and f < best_f):
                        best, best_t, best_f, bu, bv = at, t, f, u, v
            continue
        stack[sp] = right[n]
        sp += 1
        stack[sp] = left[n]
        sp += 1
    return best_f, best_t, bu, bv


@njit(cache=True, parallel=True)
def _intersect_many(tri, lo, hi, left, right, start, count, order, orig, dirs, tmin, tmax, depth):
    n = orig.shape[0]
    face = np.empty(n, np.int64)
    tt = np.empty(n)
    uv = np.empty((n, 2))
    for i in prange(n):
        stack = np.empty(depth, np.int64)
        f, t, u, v = intersect_one(tri, lo, hi, left, right, start, count, order,
                                   orig[i, 0], orig[i, 1], orig[i, 2],
                                   dirs[i, 0], dirs[i, 1], dirs[i, 2], tmin, tmax, stack)
        face[i], tt[i], uv[i, 0], uv[i, 1] = f, t, u, v
    return face, tt, uv


@njit(cache=True)
def _tree_depth(left, right):
    n = left.shape[0]
    depth = np.zeros(n, np.int64)
    best = 1
    for i in range(n):
        if left[i] >= 0:
            depth[left[i]] = depth[i] + 1
            depth[right[i]] = depth[i] + 1
            if depth[i] + 2 > best:
                best = depth[i] + 2
    return best


@dataclass(frozen=True, eq=False)
class Bvh:
    triangles: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    depth: int

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def arrays(self):
        return (self.triangles, self.lo, self.hi, self.left, self.right, self.start, self.count, self.order)

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)

    def closest_points(self, points):
        """Return (distance, face index, closest point) per query point."""
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        return _closest_many(*self.arrays, pts, 2 * self.depth + 4)

    def intersect(self, origins, directions, tmin=0.0, tmax=np.inf):
        """Nearest |t| hit per ray within ``[tmin, tmax]``.

        Returns (face, t, barycentric (u, v)); ``face == -1`` marks a miss.
        With ``tmin = -d, tmax = d`` this probes both directions along the
        ray and keeps the closer side.
        """
        o = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
        d = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
        return _intersect_many(*self.arrays, o, d, float(tmin), float(tmax), 2 * self.depth + 4)


def build_bvh(mesh: TriangleMesh) -> Bvh:
    if mesh.n_faces == 0:
        raise MeshError("cannot build a BVH over an empty mesh")
    tri = np.ascontiguousarray(mesh.triangles())
    lo, hi, left, right, start, count, order = _build(tri, LEAF_SIZE)
    # pad boxes so flat (zero-thickness) nodes survive slab-test rounding
    pad = 1e-12 * max(1.0, float(np.abs(tri).max()))
    lo -= pad
    hi += pad
    depth = int(_tree_depth(left, right))
    for arr in (tri, lo, hi, left, right, start, count, order):
        arr.setflags(write=False)
    return Bvh(tri, lo, hi, left, right, start, count, order, depth)
