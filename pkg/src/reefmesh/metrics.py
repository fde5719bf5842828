"""Sampled surface distances and bake quality statistics."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .bvh import build_bvh
from .errors import MeshError
from .mesh import TriangleMesh

SCHEMA_VERSION = 1
SAMPLES_PER_FACE = 10

_U64 = np.uint64


def _seed64(seed) -> np.uint64:
    # typed explicitly: numba would read a Python int >= 2**63 as an overflowing int64
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


@njit(cache=True)
def _mix(x):
    # splitmix64 finalizer
    x = x + _U64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> _U64(27))) * _U64(0x94D049BB133111EB)
    return x ^ (x >> _U64(31))


@njit(cache=True)
def _uniform(seed, face, k):
    h = _mix(_mix(_mix(_U64(seed)) ^ _U64(face)) ^ _U64(k))
    return (h >> _U64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _face_counts(areas, density, seed):
    n = np.empty(len(areas), dtype=np.int64)
    for f in range(len(areas)):
        n[f] = int(np.floor(areas[f] * density + _uniform(seed, f, 0)))
    return n


@njit(cache=True)
def _fill_samples(tri, counts, seed, out, out_face):
    j = 0
    for f in range(len(counts)):
        for k in range(counts[f]):
            s = np.sqrt(_uniform(seed, f, 2 * k + 1))
            r = _uniform(seed, f, 2 * k + 2)
            wa, wb, wc = 1.0 - s, s * (1.0 - r), s * r
            for t in range(3):
                out[j, t] = wa * tri[f, 0, t] + wb * tri[f, 1, t] + wc * tri[f, 2, t]
            out_face[j] = f
            j += 1


def face_sample_counts(mesh: TriangleMesh, density: float, seed: int = 0) -> np.ndarray:
    """Per-face sample counts ``floor(area * density + u_f)`` with a fixed
    per-face offset ``u_f``, so raising the density only ever adds samples."""
    return _face_counts(mesh.face_areas(), float(density), _seed64(seed))


def surface_samples(mesh: TriangleMesh, density: float, seed: int = 0, include_vertices: bool = True):
    """Deterministic surface points: all referenced vertices, then area-proportional face samples.

    Returns ``(points, face)`` where ``face`` is -1 for vertex samples.
    Sample ``k`` of face ``f`` depends only on ``(seed, f, k)``; the sample
    set at a lower density is a subset of the set at a higher one.
    """
    seed = _seed64(seed)
    counts = face_sample_counts(mesh, density, seed)
    pts = np.empty((int(counts.sum()), 3))
    fidx = np.empty(len(pts), dtype=np.int64)
    _fill_samples(np.ascontiguousarray(mesh.triangles()), counts, seed, pts, fidx)
    if not include_vertices:
        return pts, fidx
    used = np.unique(mesh.faces)
    return np.concatenate([mesh.positions[used], pts]), np.concatenate([np.full(len(used), -1), fidx])


def default_density(a: TriangleMesh, b: TriangleMesh) -> float:
    """Samples per unit area giving about 10 * max(face counts) face samples in total."""
    area = a.face_areas().sum() + b.face_areas().sum()
    if area <= 0:
        return 0.0
    return SAMPLES_PER_FACE * max(a.n_faces, b.n_faces) / area


def _union_diagonal(a, b):
    lo = np.minimum(a.positions.min(0), b.positions.min(0))
    hi = np.maximum(a.positions.max(0), b.positions.max(0))
    return float(np.linalg.norm(hi - lo))


@dataclass
class HausdorffResult:
    a_to_b: float
    b_to_a: float
    mean: float
    rms: float
    diagonal: float
    samples_a: int
    samples_b: int
    elapsed_ms: float = field(default=0.0, compare=False)

    @property
    def symmetric(self) -> float:
        return max(self.a_to_b, self.b_to_a)

    def percent(self, value: float) -> float:
        return 100.0 * value / self.diagonal if self.diagonal > 0 else 0.0

    @property
    def symmetric_pct(self) -> float:
        return self.percent(self.symmetric)


def directed_distances(points: np.ndarray, target: TriangleMesh, bvh=None) -> np.ndarray:
    bvh = build_bvh(target) if bvh is None else bvh
    dist, _, _ = bvh.closest_points(points)
    return dist


def hausdorff(a: TriangleMesh, b: TriangleMesh, samples_per_area: float | None = None,
              seed: int = 0, bvh_a=None, bvh_b=None) -> HausdorffResult:
    """Sampled symmetric Hausdorff distance between two surfaces.

    Samples are all vertices plus seeded area-proportional face samples; each
    sample's distance to the other surface is exact. Percentages are taken
    against the diagonal of the union bounding box.
    """
    if a.n_faces == 0 or b.n_faces == 0:
        raise MeshError("hausdorff needs two non-empty meshes")
    t0 = time.perf_counter()
    density = default_density(a, b) if samples_per_area is None else float(samples_per_area)
    if density < 0:
        raise ValueError("samples_per_area must be >= 0")
    pa, _ = surface_samples(a, density, seed)
    pb, _ = surface_samples(b, density, seed + 1)
    da = directed_distances(pa, b, bvh_b)
    db = directed_distances(pb, a, bvh_a)
    both = np.concatenate([da, db])
    return HausdorffResult(
        a_to_b=float(da.max()),
        b_to_a=float(db.max()),
        mean=float(both.mean()),
        rms=float(np.sqrt(np.mean(both * both))),
        diagonal=_union_diagonal(a, b),
        samples_a=len(pa),
        samples_b=len(pb),
        elapsed_ms=(time.perf_counter() - t0) * 1e3,
    )


@dataclass
class QualityReport:
    hausdorff: HausdorffResult
    faces: tuple[int, int]
    vertices: tuple[int, int]
    timings_ms: dict = field(default_factory=dict)
    normal_mean_deg: float | None = None
    normal_p95_deg: float | None = None
    seed: int = 0

    def to_dict(self, include_wall_time: bool = False) -> dict:
        h = self.hausdorff
        d = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "hausdorff_a_to_b": h.a_to_b,
            "hausdorff_b_to_a": h.b_to_a,
            "hausdorff": h.symmetric,
            "hausdorff_a_to_b_pct_bbox": h.percent(h.a_to_b),
            "hausdorff_b_to_a_pct_bbox": h.percent(h.b_to_a),
            "hausdorff_pct_bbox": h.symmetric_pct,
            "mean_distance": h.mean,
            "rms_distance": h.rms,
            "bbox_diagonal": h.diagonal,
            "faces_a": self.faces[0],
            "faces_b": self.faces[1],
            "vertices_a": self.vertices[0],
            "vertices_b": self.vertices[1],
            "samples_a": h.samples_a,
            "samples_b": h.samples_b,
            "normal_deviation_mean_deg": self.normal_mean_deg,
            "normal_deviation_p95_deg": self.normal_p95_deg,
            "timings_ms": dict(self.timings_ms),
        }
        if include_wall_time:
            d["timings_ms"]["hausdorff"] = h.elapsed_ms
        return d

    def to_json(self, include_wall_time: bool = False) -> str:
        return json.dumps(self.to_dict(include_wall_time), indent=2, sort_keys=True)


def quality_report(before: TriangleMesh, after: TriangleMesh, timings: dict | None = None,
                   samples_per_area: float | None = None, seed: int = 0) -> QualityReport:
    """Distances and counts between two stages of a mesh.

    The measurement's own wall time is kept on the result but left out of the
    JSON by default so that reports for equal inputs are byte-identical.
    """
    h = hausdorff(before, after, samples_per_area, seed)
    return QualityReport(
        hausdorff=h,
        faces=(before.n_faces, after.n_faces),
        vertices=(before.n_vertices, after.n_vertices),
        timings_ms=dict(timings or {}),
        seed=int(seed),
    )


@dataclass
class NormalDeviation:
    mean_deg: float
    p95_deg: float
    used: int
    excluded: int
    angles_deg: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


@njit(cache=True)
def _pick_faces(cdf, n, seed):
    face = np.empty(n, dtype=np.int64)
    bary = np.empty((n, 3))
    total = cdf[-1]
    for i in range(n):
        face[i] = min(np.searchsorted(cdf, _uniform(seed, i, 0) * total, side="right"), len(cdf) - 1)
        s = np.sqrt(_uniform(seed, i, 1))
        r = _uniform(seed, i, 2)
        bary[i, 0], bary[i, 1], bary[i, 2] = 1.0 - s, s * (1.0 - r), s * r
    return face, bary


def bilinear(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample an (H, W, C) float image at UVs with texel centers at half-integers."""
    H, W = image.shape[:2]
    x = uv[:, 0] * W - 0.5
    y = (1.0 - uv[:, 1]) * H - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    xa, xb = np.clip(x0, 0, W - 1), np.clip(x0 + 1, 0, W - 1)
    ya, yb = np.clip(y0, 0, H - 1), np.clip(y0 + 1, 0, H - 1)
    top = image[ya, xa] * (1 - fx) + image[ya, xb] * fx
    bot = image[yb, xa] * (1 - fx) + image[yb, xb] * fx
    return top * (1 - fy) + bot * fy


def normal_deviation(low: TriangleMesh, normal_map, high: TriangleMesh, sample_count: int,
                     seed: int = 0, coverage=None, max_ray_distance: float | None = None,
                     bvh=None) -> NormalDeviation:
    """Angle between the mapped normal on ``low`` and the true normal of ``high``.

    Samples are seeded and area-uniform on ``low``. The mapped normal is
    bilinearly sampled and lifted out of tangent space; the reference is the
    normal of the nearest ``high`` hit along the same two-sided ray the baker
    uses. Samples whose nearest texel is not in ``coverage`` (a boolean
    raster or a correspondence map) or whose ray misses are excluded.
    """
    from .baker import SENTINEL, decode_normals, low_poly_frames, smooth_normals

    if sample_count <= 0:
        raise ValueError("sample_count must be positive")
    nrm, tan, _ = low_poly_frames(low)
    areas = low.face_areas()
    face, bary = _pick_faces(np.cumsum(areas), int(sample_count), _seed64(seed))
    w = bary[:, :, None]
    P = (w * low.triangles()[face]).sum(1)
    uv = (w * low.uvs[face]).sum(1)
    N = (w * nrm[face]).sum(1)
    N /= np.linalg.norm(N, axis=1, keepdims=True)
    T = (w * tan[face, :, :3]).sum(1)
    T -= N * np.einsum("ij,ij->i", T, N)[:, None]
    T /= np.linalg.norm(T, axis=1, keepdims=True)
    B = tan[face, 0, 3][:, None] * np.cross(N, T)

    data = normal_map.data if hasattr(normal_map, "data") else np.asarray(normal_map)
    H, W = data.shape[:2]
    keep = np.ones(len(face), dtype=bool)
    if coverage is not None:
        cov = coverage.data[:, :, 0] != SENTINEL if hasattr(coverage, "data") else np.asarray(coverage, bool)
        col = np.clip(np.floor(uv[:, 0] * W).astype(np.int64), 0, W - 1)
        row = np.clip(np.floor((1.0 - uv[:, 1]) * H).astype(np.int64), 0, H - 1)
        keep &= cov[row, col]
    ts = bilinear(decode_normals(data[:, :, :3]), uv)
    mapped = ts[:, :1] * T + ts[:, 1:2] * B + ts[:, 2:3] * N
    mapped /= np.linalg.norm(mapped, axis=1, keepdims=True)

    maxd = 0.01 * low.diagonal() if max_ray_distance is None else float(max_ray_distance)
    bvh = build_bvh(high) if bvh is None else bvh
    g, _, buv = bvh.intersect(P, N, -maxd, maxd)
    keep &= g >= 0
    gi = np.maximum(g, 0)
    if high.normals is not None:
        hn = smooth_normals(high)[high.faces[gi]]
        bw = np.stack([1 - buv[:, 0] - buv[:, 1], buv[:, 0], buv[:, 1]], 1)[:, :, None]
        ref = (bw * hn).sum(1)
    else:
        ref = high.face_cross()[gi]
    ref /= np.linalg.norm(ref, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", mapped, ref), -1.0, 1.0)))[keep]
    if len(ang) == 0:
        raise ValueError("no sample landed on a covered texel")
    return NormalDeviation(float(ang.mean()), float(np.percentile(ang, 95)), int(keep.sum()),
                           int((~keep).sum()), ang)
