"""Quadric-error edge-collapse decimation to a face budget.

Quadrics are stored as their 10 upper-triangle coefficients
``(a2, ab, ac, ad, b2, bc, bd, c2, cd, d2)`` of the plane outer product.
The candidate queue is a binary heap keyed by ``(error, a, b)`` with
``a < b``; stale entries are detected with per-vertex version stamps.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .mesh import TriangleMesh, degenerate_faces, require_manifold

COND_LIMIT = 1e8


class Quadric:
    """Symmetric 4x4 matrix summing squared point-plane distances."""

    def __init__(self, matrix=None):
        self.matrix = np.zeros((4, 4)) if matrix is None else np.array(matrix, dtype=np.float64)

    @classmethod
    def from_plane(cls, normal, point, weight: float = 1.0) -> "Quadric":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        p = np.append(n, -n @ np.asarray(point, dtype=np.float64))
        return cls(weight * np.outer(p, p))

    @classmethod
    def from_coefficients(cls, c) -> "Quadric":
        return cls(_coeffs_to_matrix(np.asarray(c, dtype=np.float64)))

    def coefficients(self) -> np.ndarray:
        return self.matrix[np.triu_indices(4)]

    def __add__(self, other: "Quadric") -> "Quadric":
        return Quadric(self.matrix + other.matrix)

    def evaluate(self, point) -> float:
        v = np.append(np.asarray(point, dtype=np.float64), 1.0)
        return float(v @ self.matrix @ v)

    def __repr__(self):
        return f"Quadric({self.matrix.tolist()})"


def _coeffs_to_matrix(c):
    m = np.zeros(c.shape[:-1] + (4, 4))
    iu = np.triu_indices(4)
    m[..., iu[0], iu[1]] = c
    m[..., iu[1], iu[0]] = c
    return m


def _plane_coeffs(n, d, w):
    a, b, c = n[:, 0], n[:, 1], n[:, 2]
    return w[:, None] * np.stack([a * a, a * b, a * c, a * d, b * b, b * c, b * d, c * c, c * d, d * d], 1)


def _quadric_coeffs(mesh: TriangleMesh, boundary_weight: float, preserve_boundary: bool):
    """(V, 10) coefficients and the number of skipped degenerate faces."""
    nv = mesh.n_vertices
    tri = mesh.triangles()
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(cross, axis=1)
    bad = degenerate_faces(mesh)
    good = ~bad
    n = np.zeros_like(cross)
    n[good] = cross[good] / norm[good, None]
    d = -np.einsum("ij,ij->i", n, tri[:, 0])
    area = np.where(good, 0.5 * norm, 0.0)
    fc = _plane_coeffs(n, d, area)

    idx = [mesh.faces[:, 0], mesh.faces[:, 1], mesh.faces[:, 2]]
    weights = [fc, fc, fc]
    if preserve_boundary and boundary_weight > 0:
        heads = mesh.faces.reshape(-1)
        tails = mesh.faces[:, [1, 2, 0]].reshape(-1)
        key = np.minimum(heads, tails) * nv + np.maximum(heads, tails)
        uk, inv, cnt = np.unique(key, return_inverse=True, return_counts=True)
        on_b = (cnt[inv.reshape(-1)] == 1) & np.repeat(good, 3)
        if on_b.any():
            hf = np.flatnonzero(on_b) // 3
            u, v = heads[on_b], tails[on_b]
            e = mesh.positions[v] - mesh.positions[u]
            m = np.cross(e, n[hf])
            mn = np.linalg.norm(m, axis=1)
            ok = mn > 0
            m = m[ok] / mn[ok, None]
            u, v, e = u[ok], v[ok], e[ok]
            bd = -np.einsum("ij,ij->i", m, mesh.positions[u])
            bc = _plane_coeffs(m, bd, boundary_weight * np.einsum("ij,ij->i", e, e))
            idx += [u, v]
            weights += [bc, bc]
    allidx = np.concatenate(idx)
    allw = np.concatenate(weights)
    out = np.empty((nv, 10))
    for k in range(10):
        out[:, k] = np.bincount(allidx, weights=allw[:, k], minlength=nv)
    return out, int(bad.sum())


def compute_vertex_quadrics(mesh: TriangleMesh, boundary_weight: float = 1000.0,
                            preserve_boundary: bool = True) -> np.ndarray:
    """Per-vertex quadrics as a (V, 4, 4) array.

    Face planes are weighted by triangle area; each boundary edge adds a
    plane through the edge perpendicular to its face, weighted by
    ``boundary_weight * |edge|^2``. Degenerate faces contribute nothing.
    """
    c, _ = _quadric_coeffs(mesh, boundary_weight, preserve_boundary)
    return _coeffs_to_matrix(c)


# ---------------------------------------------------------------- numba core

@njit(cache=True)
def _qeval(q, x, y, z):
    return (q[0] * x * x + 2 * q[1] * x * y + 2 * q[2] * x * z + 2 * q[3] * x
            + q[4] * y * y + 2 * q[5] * y * z + 2 * q[6] * y
            + q[7] * z * z + 2 * q[8] * z + q[9])


@njit(cache=True)
def _sym3_eig_extremes(a, b, c, d, e, f):
    # eigenvalues of [[a b c] [b d e] [c e f]] in closed form
    p1 = b * b + c * c + e * e
    tr = a + d + f
    if p1 == 0.0:
        return min(a, d, f), max(a, d, f)
    qm = tr / 3.0
    p2 = (a - qm) ** 2 + (d - qm) ** 2 + (f - qm) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    if p == 0.0:
        return qm, qm
    ba, bd, bf = (a - qm) / p, (d - qm) / p, (f - qm) / p
    bb, bc, be = b / p, c / p, e / p
    r = 0.5 * (ba * (bd * bf - be * be) - bb * (bb * bf - be * bc) + bc * (bb * be - bd * bc))
    if r <= -1.0:
        phi = np.pi / 3.0
    elif r >= 1.0:
        phi = 0.0
    else:
        phi = np.arccos(r) / 3.0
    l1 = qm + 2.0 * p * np.cos(phi)
    l3 = qm + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    return l3, l1


@njit(cache=True)
def _optimal(q, ax, ay, az, bx, by, bz, out):
    """Write the optimal point into ``out``; return (error, used_fallback)."""
    a, b, c, d, e, f = q[0], q[1], q[2], q[4], q[5], q[7]
    lmin, lmax = _sym3_eig_extremes(a, b, c, d, e, f)
    if lmax > 0.0 and lmin > 0.0 and lmax <= COND_LIMIT * lmin:
        # solve A x = -g by the adjugate
        c00 = d * f - e * e
        c01 = c * e - b * f
        c02 = b * e - c * d
        c11 = a * f - c * c
        c12 = b * c - a * e
        c22 = a * d - b * b
        det = a * c00 + b * c01 + c * c02
        if det != 0.0:
            gx, gy, gz = -q[3], -q[6], -q[8]
            x = (c00 * gx + c01 * gy + c02 * gz) / det
            y = (c01 * gx + c11 * gy + c12 * gz) / det
            z = (c02 * gx + c12 * gy + c22 * gz) / det
            if np.isfinite(x) and np.isfinite(y) and np.isfinite(z):
                out[0], out[1], out[2] = x, y, z
                return max(_qeval(q, x, y, z), 0.0), False
    ea = _qeval(q, ax, ay, az)
    eb = _qeval(q, bx, by, bz)
    mx, my, mz = 0.5 * (ax + bx), 0.5 * (ay + by), 0.5 * (az + bz)
    em = _qeval(q, mx, my, mz)
    # ties prefer A, then B, then the midpoint
    if ea <= eb and ea <= em:
        out[0], out[1], out[2] = ax, ay, az
        return max(ea, 0.0), True
    if eb <= em:
        out[0], out[1], out[2] = bx, by, bz
        return max(eb, 0.0), True
    out[0], out[1], out[2] = mx, my, mz
    return max(em, 0.0), True


@njit(cache=True)
def _heap_less(he, ha, hb, i, j):
    if he[i] != he[j]:
        return he[i] < he[j]
    if ha[i] != ha[j]:
        return ha[i] < ha[j]
    return hb[i] < hb[j]


@njit(cache=True)
def _heap_swap(he, ha, hb, hva, hvb, i, j):
    he[i], he[j] = he[j], he[i]
    ha[i], ha[j] = ha[j], ha[i]
    hb[i], hb[j] = hb[j], hb[i]
    hva[i], hva[j] = hva[j], hva[i]
    hvb[i], hvb[j] = hvb[j], hvb[i]


@njit(cache=True)
def _heap_up(he, ha, hb, hva, hvb, i):
    while i > 0:
        p = (i - 1) >> 1
        if _heap_less(he, ha, hb, i, p):
            _heap_swap(he, ha, hb, hva, hvb, i, p)
            i = p
        else:
            break


@njit(cache=True)
def _heap_down(he, ha, hb, hva, hvb, i, n):
    while True:
        l = 2 * i + 1
        if l >= n:
            break
        m = l
        r = l + 1
        if r < n and _heap_less(he, ha, hb, r, l):
            m = r
        if _heap_less(he, ha, hb, m, i):
            _heap_swap(he, ha, hb, hva, hvb, i, m)
            i = m
        else:
            break


@njit(cache=True)
def _collect(v, head, tail, nface, nnext, falive, buf):
    """Alive faces around v into buf; drops dead nodes from the list."""
    n = 0
    prev = -1
    k = head[v]
    while k != -1:
        nx = nnext[k]
        if falive[nface[k]]:
            buf[n] = nface[k]
            n += 1
            if prev == -1:
                head[v] = k
            else:
                nnext[prev] = k
            prev = k
        k = nx
    if prev == -1:
        head[v] = -1
        tail[v] = -1
    else:
        nnext[prev] = -1
        tail[v] = prev
    return n


@njit(cache=True)
def _edge_faces(u, w, head, nface, nnext, falive, faces):
    """Number of alive faces around u that also contain w."""
    n = 0
    k = head[u]
    while k != -1:
        g = nface[k]
        if falive[g] and (faces[g, 0] == w or faces[g, 1] == w or faces[g, 2] == w):
            n += 1
        k = nnext[k]
    return n


@njit(cache=True)
def _moved(i, a, b, p, pos, t):
    if i == a or i == b:
        return p[t]
    return pos[i, t]


@njit(cache=True)
def _core(pos, faces, Q, vboundary, target, prevent_flips, max_passes):
    nv = pos.shape[0]
    nf = faces.shape[0]
    falive = np.ones(nf, dtype=np.bool_)
    valive = np.ones(nv, dtype=np.bool_)
    version = np.zeros(nv, dtype=np.int64)

    nface = np.empty(3 * nf, dtype=np.int64)
    nnext = np.full(3 * nf, -1, dtype=np.int64)
    head = np.full(nv, -1, dtype=np.int64)
    tail = np.full(nv, -1, dtype=np.int64)
    for f in range(nf):
        for j in range(3):
            k = 3 * f + j
            v = faces[f, j]
            nface[k] = f
            if head[v] == -1:
                head[v] = k
            else:
                nnext[tail[v]] = k
            tail[v] = k

    cap = 4 * nf + 64
    he = np.empty(cap)
    ha = np.empty(cap, dtype=np.int64)
    hb = np.empty(cap, dtype=np.int64)
    hva = np.empty(cap, dtype=np.int64)
    hvb = np.empty(cap, dtype=np.int64)

    bufa = np.empty(nf, dtype=np.int64)
    bufb = np.empty(nf, dtype=np.int64)
    mark = np.zeros(nv, dtype=np.int64)
    mark2 = np.zeros(nv, dtype=np.int64)
    stamp = 0
    qs = np.empty(10)
    p = np.empty(3)

    errors = np.empty(nf)
    passes_of = np.empty(nf, dtype=np.int64)
    n_acc = 0
    rejected = 0
    face_count = nf
    passes = 0

    while face_count > target and passes < max_passes:
        passes += 1
        # fill the queue with every live edge once: u -> w with u < w, plus
        # boundary edges that only occur as u > w
        hn = 0
        for f in range(nf):
            if not falive[f]:
                continue
            for j in range(3):
                u = faces[f, j]
                w = faces[f, (j + 1) % 3]
                if u > w and _edge_faces(u, w, head, nface, nnext, falive, faces) > 1:
                    continue
                a = min(u, w)
                b = max(u, w)
                for t in range(10):
                    qs[t] = Q[a, t] + Q[b, t]
                err, _ = _optimal(qs, pos[a, 0], pos[a, 1], pos[a, 2], pos[b, 0], pos[b, 1], pos[b, 2], p)
                he[hn] = err
                ha[hn] = a
                hb[hn] = b
                hva[hn] = version[a]
                hvb[hn] = version[b]
                hn += 1
        for i in range(hn // 2 - 1, -1, -1):
            _heap_down(he, ha, hb, hva, hvb, i, hn)

        progressed = False
        while hn > 0 and face_count > target:
            err = he[0]
            a = ha[0]
            b = hb[0]
            va = hva[0]
            vb = hvb[0]
            hn -= 1
            if hn > 0:
                _heap_swap(he, ha, hb, hva, hvb, 0, hn)
                _heap_down(he, ha, hb, hva, hvb, 0, hn)
            if not (valive[a] and valive[b]) or version[a] != va or version[b] != vb:
                continue

            na = _collect(a, head, tail, nface, nnext, falive, bufa)
            nb = _collect(b, head, tail, nface, nnext, falive, bufb)
            # shared faces and the link condition
            stamp += 1
            for i in range(na):
                g = bufa[i]
                for jj in range(3):
                    mark[faces[g, jj]] = stamp
            shared = 0
            for i in range(nb):
                g = bufb[i]
                if faces[g, 0] == a or faces[g, 1] == a or faces[g, 2] == a:
                    shared += 1
            if shared == 0:
                continue
            common = 0
            for i in range(nb):
                g = bufb[i]
                for jj in range(3):
                    x = faces[g, jj]
                    if x != a and x != b and mark[x] == stamp and mark2[x] != stamp:
                        mark2[x] = stamp
                        common += 1
            ok = common == shared
            if ok and shared == 2 and vboundary[a] and vboundary[b]:
                ok = False
            if ok:
                # each opposite vertex must keep enough faces
                for i in range(nb):
                    g = bufb[i]
                    if faces[g, 0] == a or faces[g, 1] == a or faces[g, 2] == a:
                        for jj in range(3):
                            x = faces[g, jj]
                            if x != a and x != b:
                                k = head[x]
                                cnt = 0
                                while k != -1 and cnt < 4:
                                    if falive[nface[k]]:
                                        cnt += 1
                                    k = nnext[k]
                                need = 2 if vboundary[x] else 4
                                if cnt < need:
                                    ok = False
            if ok:
                remaining = na + nb - 2 * shared
                if remaining < (1 if (vboundary[a] or vboundary[b]) else 3):
                    ok = False
            if not ok:
                rejected += 1
                continue

            for t in range(10):
                qs[t] = Q[a, t] + Q[b, t]
            err2, _ = _optimal(qs, pos[a, 0], pos[a, 1], pos[a, 2], pos[b, 0], pos[b, 1], pos[b, 2], p)

            if prevent_flips:
                flip = False
                for side in range(2):
                    n_s = na if side == 0 else nb
                    for i in range(n_s):
                        g = bufa[i] if side == 0 else bufb[i]
                        has_a = faces[g, 0] == a or faces[g, 1] == a or faces[g, 2] == a
                        has_b = faces[g, 0] == b or faces[g, 1] == b or faces[g, 2] == b
                        if has_a and has_b:
                            continue
                        i0 = faces[g, 0]
                        i1 = faces[g, 1]
                        i2 = faces[g, 2]
                        e1x = pos[i1, 0] - pos[i0, 0]
                        e1y = pos[i1, 1] - pos[i0, 1]
                        e1z = pos[i1, 2] - pos[i0, 2]
                        e2x = pos[i2, 0] - pos[i0, 0]
                        e2y = pos[i2, 1] - pos[i0, 1]
                        e2z = pos[i2, 2] - pos[i0, 2]
                        ox = e1y * e2z - e1z * e2y
                        oy = e1z * e2x - e1x * e2z
                        oz = e1x * e2y - e1y * e2x
                        f1x = _moved(i1, a, b, p, pos, 0) - _moved(i0, a, b, p, pos, 0)
                        f1y = _moved(i1, a, b, p, pos, 1) - _moved(i0, a, b, p, pos, 1)
                        f1z = _moved(i1, a, b, p, pos, 2) - _moved(i0, a, b, p, pos, 2)
                        f2x = _moved(i2, a, b, p, pos, 0) - _moved(i0, a, b, p, pos, 0)
                        f2y = _moved(i2, a, b, p, pos, 1) - _moved(i0, a, b, p, pos, 1)
                        f2z = _moved(i2, a, b, p, pos, 2) - _moved(i0, a, b, p, pos, 2)
                        nx = f1y * f2z - f1z * f2y
                        ny = f1z * f2x - f1x * f2z
                        nz = f1x * f2y - f1y * f2x
                        if ox * nx + oy * ny + oz * nz <= 0.0:
                            flip = True
                            break
                    if flip:
                        break
                if flip:
                    rejected += 1
                    continue

            # apply: a survives at p, b dies
            for i in range(nb):
                g = bufb[i]
                if faces[g, 0] == a or faces[g, 1] == a or faces[g, 2] == a:
                    falive[g] = False
                else:
                    for jj in range(3):
                        if faces[g, jj] == b:
                            faces[g, jj] = a
            if head[b] != -1:
                if head[a] == -1:
                    head[a] = head[b]
                else:
                    nnext[tail[a]] = head[b]
                tail[a] = tail[b]
            head[b] = -1
            tail[b] = -1
            valive[b] = False
            pos[a, 0], pos[a, 1], pos[a, 2] = p[0], p[1], p[2]
            for t in range(10):
                Q[a, t] += Q[b, t]
            vboundary[a] = vboundary[a] or vboundary[b]
            version[a] += 1
            face_count -= shared
            errors[n_acc] = err2
            passes_of[n_acc] = passes
            n_acc += 1
            progressed = True

            # requeue edges around a
            na = _collect(a, head, tail, nface, nnext, falive, bufa)
            stamp += 1
            mark[a] = stamp
            for i in range(na):
                g = bufa[i]
                for jj in range(3):
                    x = faces[g, jj]
                    if mark[x] == stamp:
                        continue
                    mark[x] = stamp
                    lo = min(a, x)
                    hi = max(a, x)
                    for t in range(10):
                        qs[t] = Q[lo, t] + Q[hi, t]
                    e3, _ = _optimal(qs, pos[lo, 0], pos[lo, 1], pos[lo, 2], pos[hi, 0], pos[hi, 1], pos[hi, 2], p)
                    if hn >= cap:
                        ncap = 2 * cap
                        he2 = np.empty(ncap)
                        ha2 = np.empty(ncap, dtype=np.int64)
                        hb2 = np.empty(ncap, dtype=np.int64)
                        hva2 = np.empty(ncap, dtype=np.int64)
                        hvb2 = np.empty(ncap, dtype=np.int64)
                        he2[:hn] = he[:hn]
                        ha2[:hn] = ha[:hn]
                        hb2[:hn] = hb[:hn]
                        hva2[:hn] = hva[:hn]
                        hvb2[:hn] = hvb[:hn]
                        he, ha, hb, hva, hvb = he2, ha2, hb2, hva2, hvb2
                        cap = ncap
                    he[hn] = e3
                    ha[hn] = lo
                    hb[hn] = hi
                    hva[hn] = version[lo]
                    hvb[hn] = version[hi]
                    hn += 1
                    _heap_up(he, ha, hb, hva, hvb, hn - 1)
        if not progressed:
            break

    return falive, valive, n_acc, errors[:n_acc].copy(), passes_of[:n_acc].copy(), rejected, face_count, passes


# ------------------------------------------------------------------ public API

def optimal_collapse_position(q, endpoint_a, endpoint_b) -> tuple[np.ndarray, float]:
    """Minimizer of a summed quadric and its error.

    Solves the 3x3 system when its condition number is at most 1e8;
    otherwise returns whichever of ``endpoint_a``, ``endpoint_b`` and their
    midpoint has the least error (ties go to A, then B).
    """
    if isinstance(q, Quadric):
        coeffs = q.coefficients()
    else:
        q = np.asarray(q, dtype=np.float64)
        coeffs = q[np.triu_indices(4)] if q.shape == (4, 4) else q
    a = np.asarray(endpoint_a, dtype=np.float64)
    b = np.asarray(endpoint_b, dtype=np.float64)
    out = np.empty(3)
    err, _ = _optimal(np.ascontiguousarray(coeffs, dtype=np.float64), a[0], a[1], a[2], b[0], b[1], b[2], out)
    return out, float(err)


@dataclass(frozen=True)
class DecimationOptions:
    target_faces: int
    preserve_boundary: bool = True
    prevent_normal_flips: bool = True
    boundary_weight: float = 1000.0
    max_passes: int = 8

    def __post_init__(self):
        if int(self.target_faces) != self.target_faces or self.target_faces < 1:
            raise ValueError("target_faces must be a positive integer")
        if self.boundary_weight < 0:
            raise ValueError("boundary_weight must be >= 0")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")


@dataclass
class DecimationReport:
    input_faces: int
    output_faces: int
    collapses: int = 0
    rejected_collapses: int = 0
    max_error: float = 0.0
    wall_time_ms: float = 0.0
    passes: int = 0
    reached_target: bool = True
    degenerate_faces: int = 0
    warning: str | None = None
    # per accepted collapse, in order; not serialized
    collapse_errors: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    collapse_passes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64), repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("collapse_errors")
        d.pop("collapse_passes")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def decimate(mesh: TriangleMesh, opts: DecimationOptions) -> tuple[TriangleMesh, DecimationReport]:
    """Collapse edges in order of quadric error until ``opts.target_faces``.

    Surviving vertices and faces keep their relative order. The optional
    attributes (normals, UVs, tangents) are dropped since they no longer
    match the new surface.
    """
    t0 = time.perf_counter()
    report = require_manifold(mesh, "decimate")
    nf = mesh.n_faces
    target = int(opts.target_faces)
    if report.is_closed and target < 4:
        raise ValueError("target_faces must be >= 4 for a closed mesh")
    if target >= nf:
        rep = DecimationReport(nf, nf, wall_time_ms=(time.perf_counter() - t0) * 1e3,
                               warning=f"target {target} is not below the current face count {nf}; mesh unchanged")
        return mesh, rep

    Q, n_degenerate = _quadric_coeffs(mesh, opts.boundary_weight, opts.preserve_boundary)
    heads = mesh.faces.reshape(-1)
    tails = mesh.faces[:, [1, 2, 0]].reshape(-1)
    nv = mesh.n_vertices
    key = np.minimum(heads, tails) * nv + np.maximum(heads, tails)
    uk, cnt = np.unique(key, return_counts=True)
    bkeys = uk[cnt == 1]
    vboundary = np.zeros(nv, dtype=np.bool_)
    vboundary[bkeys // nv] = True
    vboundary[bkeys % nv] = True

    pos = np.array(mesh.positions, dtype=np.float64)
    faces = np.array(mesh.faces, dtype=np.int64)
    falive, valive, n_acc, errors, passes_of, rejected, face_count, passes = _core(
        pos, faces, Q, vboundary, target, bool(opts.prevent_normal_flips), int(opts.max_passes))

    used = np.zeros(nv, dtype=bool)
    used[faces[falive].ravel()] = True
    # keep input vertices that had no faces to begin with
    isolated = np.ones(nv, dtype=bool)
    isolated[mesh.faces.ravel()] = False
    keep = valive & (used | isolated)
    remap = np.full(nv, -1, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    out = TriangleMesh(pos[keep], remap[faces[falive]])

    reached = face_count <= target
    rep = DecimationReport(
        input_faces=nf,
        output_faces=out.n_faces,
        collapses=int(n_acc),
        rejected_collapses=int(rejected),
        max_error=float(errors.max()) if n_acc else 0.0,
        wall_time_ms=(time.perf_counter() - t0) * 1e3,
        passes=int(passes),
        reached_target=bool(reached),
        degenerate_faces=n_degenerate,
        warning=None if reached else f"stopped at {out.n_faces} faces; no further collapse keeps the mesh manifold",
        collapse_errors=errors,
        collapse_passes=passes_of,
    )
    return out, rep
