"""Chart segmentation, conformal flattening and shelf packing."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import AtlasError
from .halfedge import build_halfedge
from .mesh import TriangleMesh, require_manifold
from .raster import rasterize_uvs

MIN_RESOLUTION = 64


@dataclass(frozen=True, eq=False)
class ChartAssignment:
    chart_of_face: np.ndarray
    n_charts: int

    def faces_of(self, chart: int) -> np.ndarray:
        return np.flatnonzero(self.chart_of_face == chart)

    def charts(self) -> list[np.ndarray]:
        order = np.argsort(self.chart_of_face, kind="stable")
        bounds = np.searchsorted(self.chart_of_face[order], np.arange(self.n_charts + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(self.n_charts)]


def face_neighbors(mesh: TriangleMesh) -> np.ndarray:
    """(F, 3) face across edge k (faces[f,k] -> faces[f,k+1]), -1 on boundary."""
    he = build_halfedge(mesh)
    nbr = np.where(he.twin >= 0, he.twin // 3, -1)
    return nbr.reshape(-1, 3)


@njit(cache=True)
def _grow(faces, nbr, normals, cos_t, allowed, chart, next_id, n_vertices):
    nf = faces.shape[0]
    vowner = np.full(n_vertices, -1, dtype=np.int64)
    queue = np.empty(3 * nf + 3, dtype=np.int64)
    for seed in range(nf):
        if not allowed[seed] or chart[seed] >= 0:
            continue
        cid = next_id
        next_id += 1
        chart[seed] = cid
        for j in range(3):
            vowner[faces[seed, j]] = cid
        n0x, n0y, n0z = normals[seed, 0], normals[seed, 1], normals[seed, 2]
        head = 0
        tail = 0
        for j in range(3):
            g = nbr[seed, j]
            if g >= 0 and allowed[g] and chart[g] < 0:
                queue[tail] = g
                tail += 1
        while head < tail:
            g = queue[head]
            head += 1
            if chart[g] >= 0:
                continue
            if normals[g, 0] * n0x + normals[g, 1] * n0y + normals[g, 2] * n0z < cos_t:
                continue
            k = 0
            shared = -1
            for j in range(3):
                h = nbr[g, j]
                if h >= 0 and chart[h] == cid:
                    k += 1
                    shared = j
            if k == 1:
                # sharing one edge: the opposite vertex must be new to the chart
                if vowner[faces[g, (shared + 2) % 3]] == cid:
                    continue
            elif k != 2:
                continue
            chart[g] = cid
            for j in range(3):
                vowner[faces[g, j]] = cid
            for j in range(3):
                h = nbr[g, j]
                if h >= 0 and allowed[h] and chart[h] < 0:
                    if tail >= queue.shape[0]:
                        # compact the consumed prefix
                        queue[: tail - head] = queue[head:tail]
                        tail -= head
                        head = 0
                    queue[tail] = h
                    tail += 1
    return next_id


def _segment(mesh, threshold_deg, nbr, subset=None, start_id=0, chart=None):
    nf = mesh.n_faces
    normals = mesh.face_normals()
    allowed = np.ones(nf, dtype=np.bool_) if subset is None else np.zeros(nf, dtype=np.bool_)
    if subset is not None:
        allowed[subset] = True
    if chart is None:
        chart = np.full(nf, -1, dtype=np.int64)
    cos_t = math.cos(math.radians(threshold_deg))
    end = _grow(mesh.faces, nbr, np.ascontiguousarray(normals), cos_t, allowed, chart, start_id, mesh.n_vertices)
    return chart, int(end)


def segment_charts(mesh: TriangleMesh, normal_angle_threshold_deg: float = 60.0) -> ChartAssignment:
    """Greedy region growing over edge-adjacent faces.

    The lowest-index unassigned face seeds each chart. A face joins when its
    normal is within the threshold of the seed normal and it shares either
    one edge with a new third vertex or two edges, which keeps every chart a
    topological disk.
    """
    require_manifold(mesh, "segment_charts")
    chart, n = _segment(mesh, normal_angle_threshold_deg, face_neighbors(mesh))
    return ChartAssignment(chart, n)


def chart_euler_characteristic(mesh: TriangleMesh, faces: np.ndarray) -> int:
    f = mesh.faces[faces]
    e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    return len(np.unique(f)) - len(np.unique(e, axis=0)) + len(f)


# ---------------------------------------------------------------- LSCM

def _local_frames(tri):
    """Per-triangle 2D coordinates (F, 3, 2) in the triangle's own plane."""
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    l1 = np.linalg.norm(e1, axis=1)
    n = np.cross(e1, e2)
    nn = np.linalg.norm(n, axis=1)
    ok = (l1 > 0) & (nn > 0)
    x = np.zeros_like(e1)
    x[ok] = e1[ok] / l1[ok, None]
    nrm = np.zeros_like(n)
    nrm[ok] = n[ok] / nn[ok, None]
    y = np.cross(nrm, x)
    q = np.zeros((len(tri), 3, 2))
    q[:, 1, 0] = l1
    q[:, 2, 0] = np.einsum("ij,ij->i", e2, x)
    q[:, 2, 1] = np.einsum("ij,ij->i", e2, y)
    return q, ok


def _conformal_rows(q, ok):
    """Gradient weights g (F, 3, 2) and sqrt(area) (F,) of each triangle."""
    area = 0.5 * (q[:, 1, 0] * q[:, 2, 1] - q[:, 2, 0] * q[:, 1, 1])
    g = np.zeros((len(q), 3, 2))
    for j in range(3):
        e = q[:, (j + 2) % 3] - q[:, (j + 1) % 3]
        with np.errstate(divide="ignore", invalid="ignore"):
            g[:, j, 0] = -e[:, 1] / (2 * area)
            g[:, j, 1] = e[:, 0] / (2 * area)
    good = ok & (area > 0)
    g[~good] = 0.0
    return g, np.sqrt(np.where(good, area, 0.0))


def conformal_energy(mesh: TriangleMesh, faces: np.ndarray, uv: np.ndarray) -> float:
    """Sum over triangles of area * |grad u - rot(grad v)|^2 (0 for conformal maps)."""
    q, ok = _local_frames(mesh.triangles()[faces])
    g, w = _conformal_rows(q, ok)
    u, v = uv[..., 0], uv[..., 1]
    r1 = np.einsum("fj,fj->f", g[..., 0], u) - np.einsum("fj,fj->f", g[..., 1], v)
    r2 = np.einsum("fj,fj->f", g[..., 1], u) + np.einsum("fj,fj->f", g[..., 0], v)
    return float(np.sum((w * r1) ** 2 + (w * r2) ** 2))


def pin_vertices(mesh: TriangleMesh, faces: np.ndarray) -> tuple[int, int]:
    """Extreme chart vertices along the longest bounding-box axis (lowest index on ties)."""
    verts = np.unique(mesh.faces[faces])
    p = mesh.positions[verts]
    axis = int(np.argmax(p.max(0) - p.min(0)))
    return int(verts[np.argmin(p[:, axis])]), int(verts[np.argmax(p[:, axis])])


def _solve_charts(mesh, chart_of_face, chart_ids):
    """LSCM for every chart in ``chart_ids`` as one block-diagonal system.

    Returns per-corner UVs (F, 3, 2) (NaN outside the charts) and the set of
    charts whose solve failed.
    """
    nv = mesh.n_vertices
    sel = np.flatnonzero(np.isin(chart_of_face, chart_ids))
    cf = chart_of_face[sel]
    corner_key = (cf[:, None] * nv + mesh.faces[sel]).ravel()
    keys, corner_var = np.unique(corner_key, return_inverse=True)
    corner_var = corner_var.reshape(-1, 3)
    n = len(keys)

    q, ok = _local_frames(mesh.triangles()[sel])
    g, w = _conformal_rows(q, ok)
    rows = np.arange(len(sel))
    r = np.repeat(rows, 3)
    c = corner_var.ravel()
    gx = (w[:, None] * g[..., 0]).ravel()
    gy = (w[:, None] * g[..., 1]).ravel()
    # unknowns: u -> [0, n), v -> [n, 2n); two residual rows per triangle
    m = len(sel)
    M = sparse.coo_matrix(
        (np.concatenate([gx, -gy, gy, gx]),
         (np.concatenate([r, r, r + m, r + m]), np.concatenate([c, c + n, c, c + n]))),
        shape=(2 * m, 2 * n)).tocsc()

    pinned = np.zeros(2 * n, dtype=bool)
    values = np.zeros(2 * n)
    key_chart = keys // nv
    for cid in np.unique(cf):
        p0, p1 = pin_vertices(mesh, sel[cf == cid])
        i0 = np.searchsorted(keys, cid * nv + p0)
        i1 = np.searchsorted(keys, cid * nv + p1)
        pinned[[i0, n + i0, i1, n + i1]] = True
        values[i1] = 1.0
    free = ~pinned
    Mf = M[:, free]
    A = (Mf.T @ Mf).tocsc()
    b = -(Mf.T @ (M[:, pinned] @ values[pinned]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        x = spsolve(A, b) if A.shape[0] else np.zeros(0)
    sol = values.copy()
    sol[free] = x
    uv_var = np.stack([sol[:n], sol[n:]], axis=1)
    bad = set(np.unique(key_chart[~np.isfinite(uv_var).all(1)]).tolist())
    # a chart with zero total area has no conformal energy to minimize
    area = mesh.face_areas()[sel]
    for cid in np.unique(cf):
        if not area[cf == cid].sum() > 0:
            bad.add(int(cid))
    out = np.full((mesh.n_faces, 3, 2), np.nan)
    out[sel] = uv_var[corner_var]
    return out, bad


def parameterize_chart(mesh: TriangleMesh, chart, chart_id: int = 0) -> np.ndarray:
    """Least-squares conformal UVs (len(chart), 3, 2) for one disk chart.

    Pins the extreme vertices along the chart's longest axis at (0, 0) and
    (1, 0). Raises :class:`AtlasError` for charts with degenerate geometry.
    """
    faces = np.asarray(chart, dtype=np.int64)
    cof = np.full(mesh.n_faces, -1, dtype=np.int64)
    cof[faces] = 0
    uv, bad = _solve_charts(mesh, cof, np.array([0]))
    if bad:
        raise AtlasError(f"chart {chart_id}: conformal system is singular (degenerate geometry)")
    return uv[faces]


def uv_signed_areas(uv: np.ndarray) -> np.ndarray:
    a, b, c = uv[:, 0], uv[:, 1], uv[:, 2]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


@njit(cache=True)
def _boundary_crossings(seg, verts, owner, bad):
    """Mark charts in which two boundary segments properly cross.

    ``seg`` rows are (x0, y0, x1, y1), sorted by (owner, min x).
    """
    n = seg.shape[0]
    for i in range(n):
        ax, ay, bx, by = seg[i, 0], seg[i, 1], seg[i, 2], seg[i, 3]
        if bad[owner[i]]:
            continue
        hix = max(ax, bx)
        loy, hiy = min(ay, by), max(ay, by)
        for j in range(i + 1, n):
            if owner[j] != owner[i]:
                break
            cx, cy, dx, dy = seg[j, 0], seg[j, 1], seg[j, 2], seg[j, 3]
            if min(cx, dx) > hix:
                break
            if max(cy, dy) < loy or min(cy, dy) > hiy:
                continue
            if (verts[j, 0] == verts[i, 0] or verts[j, 0] == verts[i, 1]
                    or verts[j, 1] == verts[i, 0] or verts[j, 1] == verts[i, 1]):
                continue
            d1 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            d2 = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
            d3 = (dx - cx) * (ay - cy) - (dy - cy) * (ax - cx)
            d4 = (dx - cx) * (by - cy) - (dy - cy) * (bx - cx)
            if d1 * d2 < 0.0 and d3 * d4 < 0.0:
                bad[owner[i]] = True
                break


def corner_angles(uv: np.ndarray) -> np.ndarray:
    """Interior angle at each corner of each UV triangle, (F, 3)."""
    e1 = np.roll(uv, -1, axis=1) - uv
    e2 = np.roll(uv, -2, axis=1) - uv
    cross = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    dot = (e1 * e2).sum(-1)
    return np.arctan2(np.abs(cross), dot)


def non_injective_charts(mesh: TriangleMesh, nbr: np.ndarray, chart_of_face: np.ndarray,
                         uv: np.ndarray, chart_ids) -> np.ndarray:
    """Charts among ``chart_ids`` whose flattening overlaps itself.

    Assumes every triangle of those charts has positive UV area. Such a map
    is one-to-one when interior vertices see a full turn of angle, the
    boundary turns by exactly 2*pi*chi, and no two boundary edges cross.
    """
    chart_ids = np.asarray(chart_ids, dtype=np.int64)
    sel = np.flatnonzero(np.isin(chart_of_face, chart_ids))
    if len(sel) == 0:
        return np.zeros(0, dtype=np.int64)
    nv = mesh.n_vertices
    cf = chart_of_face[sel]
    f = mesh.faces[sel]
    g = nbr[sel]
    on_rim = (g < 0) | (chart_of_face[np.maximum(g, 0)] != cf[:, None])
    keys, inv = np.unique((cf[:, None] * nv + f).ravel(), return_inverse=True)
    theta = np.bincount(inv, weights=corner_angles(uv[sel]).ravel(), minlength=len(keys))
    rim = np.bincount(inv, weights=on_rim.ravel().astype(np.float64), minlength=len(keys))
    key_chart = keys // nv

    bad = np.zeros(int(chart_of_face.max()) + 1, dtype=np.bool_)
    interior = rim == 0
    bad[key_chart[interior & (np.abs(theta - 2 * np.pi) > np.pi)]] = True
    # discrete Gauss-Bonnet for a flat surface: sum of exterior turning = 2 pi chi
    turning = np.bincount(key_chart, weights=np.where(interior, 0.0, rim * np.pi - theta), minlength=len(bad))
    n_vert = np.bincount(key_chart, minlength=len(bad))
    n_face = np.bincount(cf, minlength=len(bad))
    n_rim = np.bincount(cf, weights=on_rim.sum(1), minlength=len(bad))
    chi = n_vert - (3 * n_face + n_rim) / 2 + n_face
    wrong = np.abs(turning - 2 * np.pi * chi) > np.pi
    bad[chart_ids[wrong[chart_ids]]] = True

    fi, ki = np.nonzero(on_rim)
    a = uv[sel[fi], ki]
    b = uv[sel[fi], (ki + 1) % 3]
    owner = cf[fi]
    order = np.lexsort((np.minimum(a[:, 0], b[:, 0]), owner))
    seg = np.ascontiguousarray(np.concatenate([a, b], axis=1)[order])
    verts = np.ascontiguousarray(np.stack([f[fi, ki], f[fi, (ki + 1) % 3]], axis=1)[order])
    _boundary_crossings(seg, verts, np.ascontiguousarray(owner[order]), bad)
    return np.intersect1d(np.flatnonzero(bad), chart_ids)


# ---------------------------------------------------------------- packing

@dataclass
class ParameterizedChart:
    chart_id: int
    faces: np.ndarray
    uv: np.ndarray
    area_3d: float


@dataclass(eq=False)
class UVAtlas:
    uvs: np.ndarray
    chart_of_face: np.ndarray
    n_charts: int
    chart_bboxes: np.ndarray
    chart_scales: np.ndarray
    chart_rotations: np.ndarray
    resolution: int
    gutter: int
    efficiency: float = 0.0
    layout: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "gutter": self.gutter,
            "efficiency": self.efficiency,
            "charts": {
                str(i): {
                    "bbox": [float(x) for x in self.chart_bboxes[i]],
                    "scale": float(self.chart_scales[i]),
                    "rotation_deg": int(self.chart_rotations[i]),
                }
                for i in range(self.n_charts)
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _cells(charts, scale, gutter, rot):
    """Cell sizes in texels for a global scale."""
    size = np.empty((len(charts), 2), dtype=np.int64)
    for i, ch in enumerate(charts):
        w, h = ch["extent"] * scale
        if rot[i]:
            w, h = h, w
        size[i] = (math.ceil(w) + 2 * gutter + 2, math.ceil(h) + 2 * gutter + 2)
    return size


def _shelf(size, resolution):
    """Decreasing-height shelf placement; None if it does not fit."""
    order = sorted(range(len(size)), key=lambda i: (-int(size[i, 1]), i))
    pos = np.zeros((len(size), 2), dtype=np.int64)
    x = y = shelf_h = 0
    for i in order:
        w, h = int(size[i, 0]), int(size[i, 1])
        if w > resolution:
            return None
        if x + w > resolution:
            y += shelf_h
            x = shelf_h = 0
        if shelf_h == 0:
            shelf_h = h
        pos[i] = (x, y)
        x += w
        if y + h > resolution:
            return None
    return pos


def pack_atlas(charts: list[ParameterizedChart], resolution: int = 2048, gutter: int = 4,
               n_faces: int | None = None) -> UVAtlas:
    """Scale, rotate (by 0 or 90 degrees) and shelf-pack charts into [0, 1]^2.

    Every chart is first scaled so that its UV area equals its 3D area, then
    one global scale (the largest that fits, found by bisection) is applied.
    Each chart sits ``gutter + 1`` texels inside its cell, so footprints of
    neighbours stay at least ``2 * gutter + 2`` texels apart.
    """
    if resolution < MIN_RESOLUTION:
        raise AtlasError(f"atlas resolution must be >= {MIN_RESOLUTION}")
    if gutter < 0:
        raise AtlasError("gutter must be >= 0")
    if not charts:
        raise AtlasError("no charts to pack")
    info = []
    for ch in charts:
        a_uv = float(np.abs(uv_signed_areas(ch.uv)).sum())
        if not (a_uv > 0 and ch.area_3d > 0):
            raise AtlasError(f"chart {ch.chart_id} has zero area")
        s = math.sqrt(ch.area_3d / a_uv)
        uv = ch.uv * s
        lo = uv.reshape(-1, 2).min(0)
        hi = uv.reshape(-1, 2).max(0)
        info.append({"uv": uv - lo, "extent": hi - lo, "norm_scale": s})
    rot = [bool(c["extent"][1] > c["extent"][0]) for c in info]

    total = sum(ch.area_3d for ch in charts)
    lo_s, hi_s = 0.0, 2.0 * resolution / math.sqrt(total)
    while _shelf(_cells(info, hi_s, gutter, rot), resolution) is not None:
        hi_s *= 2.0
    if _shelf(_cells(info, 0.0, gutter, rot), resolution) is None:
        raise AtlasError(f"{len(charts)} charts do not fit a {resolution}^2 atlas with gutter {gutter}; "
                         "use a higher resolution")
    for _ in range(60):
        mid = 0.5 * (lo_s + hi_s)
        if _shelf(_cells(info, mid, gutter, rot), resolution) is None:
            hi_s = mid
        else:
            lo_s = mid
    scale = lo_s
    pos = _shelf(_cells(info, scale, gutter, rot), resolution)

    nf = n_faces if n_faces is not None else 1 + max(int(ch.faces.max()) for ch in charts)
    uvs = np.full((nf, 3, 2), np.nan)
    chart_of_face = np.full(nf, -1, dtype=np.int64)
    bboxes = np.zeros((len(charts), 4))
    scales = np.zeros(len(charts))
    rotations = np.zeros(len(charts), dtype=np.int64)
    for i, (ch, c) in enumerate(zip(charts, info)):
        px = c["uv"] * scale
        w, h = c["extent"] * scale
        if rot[i]:
            # +90 degrees: (x, y) -> (h - y, x) keeps orientation
            px = np.stack([h - px[..., 1], px[..., 0]], axis=-1)
        px = px + (pos[i] + gutter + 1)
        uv = px / resolution
        uvs[ch.faces] = uv
        chart_of_face[ch.faces] = i
        flat = uv.reshape(-1, 2)
        bboxes[i] = (*flat.min(0), *flat.max(0))
        scales[i] = c["norm_scale"] * scale / resolution
        rotations[i] = 90 if rot[i] else 0

    covered = np.flatnonzero(chart_of_face >= 0)
    face_id, _ = rasterize_uvs(uvs[covered], resolution, resolution, 1)
    efficiency = float((face_id >= 0).sum()) / float(resolution * resolution)
    return UVAtlas(uvs, chart_of_face, len(charts), bboxes, scales, rotations,
                   int(resolution), int(gutter), efficiency)


def unwrap(mesh: TriangleMesh, angle_deg: float = 60.0, resolution: int = 2048, gutter: int = 4,
           max_splits: int = 8) -> tuple[TriangleMesh, UVAtlas]:
    """Segment, flatten and pack; returns the mesh with per-corner UVs.

    A chart whose conformal map has a flipped or zero-area triangle, or
    overlaps itself, is re-segmented with half the angle threshold, up to
    ``max_splits`` times.
    """
    require_manifold(mesh, "unwrap")
    if mesh.n_faces == 0:
        raise AtlasError("cannot unwrap an empty mesh")
    nbr = face_neighbors(mesh)
    chart, n = _segment(mesh, angle_deg, nbr)
    uv = np.full((mesh.n_faces, 3, 2), np.nan)
    pending = np.arange(n)
    threshold = angle_deg
    for depth in range(max_splits + 1):
        solved, bad = _solve_charts(mesh, chart, pending)
        sel = np.isin(chart, pending)
        uv[sel] = solved[sel]
        sa = uv_signed_areas(uv[sel])
        flipped = np.unique(chart[sel][~(sa > 0)])
        retry = np.union1d(flipped, np.array(sorted(bad), dtype=np.int64))
        clean = np.setdiff1d(pending, retry)
        retry = np.union1d(retry, non_injective_charts(mesh, nbr, chart, uv, clean))
        if len(retry) == 0:
            break
        if depth == max_splits:
            raise AtlasError(f"chart {int(retry[0])} still folds over after {max_splits} splits")
        threshold *= 0.5
        redo = np.flatnonzero(np.isin(chart, retry))
        if len(retry) == len(redo):
            # single-face charts cannot be split further
            raise AtlasError(f"chart {int(retry[0])} is degenerate and cannot be flattened")
        chart[redo] = -1
        chart, n_new = _segment(mesh, threshold, nbr, subset=redo, start_id=n, chart=chart)
        pending = np.arange(n, n_new)
        n = n_new

    # renumber charts by first face so ids are dense and ordered
    _, first = np.unique(chart, return_index=True)
    order = np.argsort(first, kind="stable")
    old_ids = np.unique(chart)[order]
    remap = np.empty(int(chart.max()) + 1, dtype=np.int64)
    remap[old_ids] = np.arange(len(old_ids))
    chart = remap[chart]
    assignment = ChartAssignment(chart, len(old_ids))
    areas = mesh.face_areas()
    charts = [ParameterizedChart(i, f, uv[f], float(areas[f].sum())) for i, f in enumerate(assignment.charts())]
    atlas = pack_atlas(charts, resolution, gutter, mesh.n_faces)
    return mesh.replace(uvs=atlas.uvs, tangents=None), atlas
