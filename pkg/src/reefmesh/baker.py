"""Tangent frames and high-to-low normal-map baking.

Tangent-space convention: ``T = dP/du``, ``B = dP/dv`` (v points up in
texture space), ``N`` the interpolated smooth normal; ``w`` is the sign of
``det[T, B, N]`` and the shader-side bitangent is ``w * cross(N, T)``.
"""

from __future__ import annotations

import io
import struct
import time
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from PIL import Image

from .bvh import build_bvh, intersect_one
from .errors import BakeError, MeshError
from .mesh import TriangleMesh, area_weighted_normals
from .raster import rasterize_uvs, sample_offsets, to_pixels

SENTINEL = 0xFFFFFFFF
FLAT = (128, 128, 255)
CMAP_MAGIC = b"CMAP"
CMAP_VERSION = 1


@dataclass(eq=False)
class TextureImage:
    """Row-major raster with a top-left origin, shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or not 1 <= d.shape[2] <= 4:
            raise ValueError("texture data must have shape (height, width, 1..4)")
        if d.dtype not in (np.uint8, np.uint32):
            raise ValueError("texture data must be uint8 or uint32")
        self.data = np.ascontiguousarray(d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_png(self) -> bytes:
        if self.data.dtype != np.uint8:
            raise ValueError("only 8-bit textures can be written as PNG")
        mode = {1: "L", 2: "LA", 3: "RGB", 4: "RGBA"}[self.channels]
        arr = self.data[:, :, 0] if self.channels == 1 else self.data
        buf = io.BytesIO()
        Image.fromarray(arr, mode=mode).save(buf, format="PNG", compress_level=6)
        return buf.getvalue()

    @classmethod
    def from_png(cls, blob: bytes) -> "TextureImage":
        return cls(np.array(Image.open(io.BytesIO(blob))))


def write_cmap(image: TextureImage) -> bytes:
    """Correspondence raster: 16-byte header (magic, width, height, version) + u32 texels."""
    if image.data.dtype != np.uint32 or image.channels != 1:
        raise ValueError("correspondence maps are single-channel uint32")
    header = CMAP_MAGIC + struct.pack("<III", image.width, image.height, CMAP_VERSION)
    return header + image.data.astype("<u4").tobytes()


def read_cmap(blob: bytes) -> TextureImage:
    if len(blob) < 16 or blob[:4] != CMAP_MAGIC:
        raise ValueError("not a CMAP raster")
    w, h, _version = struct.unpack_from("<III", blob, 4)
    if len(blob) != 16 + 4 * w * h:
        raise ValueError("CMAP payload length does not match its header")
    return TextureImage(np.frombuffer(blob, dtype="<u4", offset=16).reshape(h, w).astype(np.uint32))


def false_color(cmap: TextureImage) -> TextureImage:
    """RGB rendering of a correspondence map; misses are black."""
    ids = cmap.data[:, :, 0].astype(np.uint64)
    x = ids * np.uint64(0x9E3779B97F4A7C15)
    x ^= x >> np.uint64(29)
    rgb = np.stack([(x >> np.uint64(s)) & np.uint64(0x7F) for s in (0, 8, 16)], axis=-1).astype(np.uint8) + 64
    rgb[cmap.data[:, :, 0] == SENTINEL] = 0
    return TextureImage(rgb)


# ---------------------------------------------------------------- tangents

@dataclass(eq=False)
class TangentFrames:
    tangents: np.ndarray
    skipped_faces: int


def smooth_normals(mesh: TriangleMesh) -> np.ndarray:
    return mesh.normals if mesh.normals is not None else area_weighted_normals(mesh.positions, mesh.faces)


def compute_tangent_frames(mesh: TriangleMesh) -> TangentFrames:
    """Per-corner (T, w) from UV derivatives, averaged over corners that share
    vertex and UV, orthogonalized against the vertex normal."""
    if mesh.uvs is None:
        raise MeshError("tangent frames need texture coordinates")
    tri = mesh.triangles()
    uv = mesh.uvs
    dp1, dp2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    du1, dv1 = uv[:, 1, 0] - uv[:, 0, 0], uv[:, 1, 1] - uv[:, 0, 1]
    du2, dv2 = uv[:, 2, 0] - uv[:, 0, 0], uv[:, 2, 1] - uv[:, 0, 1]
    r = du1 * dv2 - du2 * dv1
    scale = np.maximum.reduce([np.abs(du1), np.abs(dv1), np.abs(du2), np.abs(dv2)])
    valid = np.isfinite(r) & (np.abs(r) > 1e-12 * scale * scale)
    rs = np.where(valid, r, 1.0)
    T = (dp1 * dv2[:, None] - dp2 * dv1[:, None]) / rs[:, None]
    B = (dp2 * du1[:, None] - dp1 * du2[:, None]) / rs[:, None]
    tl = np.linalg.norm(T, axis=1)
    bl = np.linalg.norm(B, axis=1)
    valid &= (tl > 0) & (bl > 0)
    area = 0.5 * np.linalg.norm(np.cross(dp1, dp2), axis=1)
    wT = np.where(valid, area / np.where(tl > 0, tl, 1.0), 0.0)[:, None] * T
    wB = np.where(valid, area / np.where(bl > 0, bl, 1.0), 0.0)[:, None] * B

    # corners sharing vertex and exact UV pool their face contributions
    key = np.concatenate([mesh.faces.reshape(-1, 1).astype(np.int64),
                          uv.reshape(-1, 2).view(np.int64)], axis=1)
    _, group = np.unique(key, axis=0, return_inverse=True)
    group = group.reshape(-1)
    ng = int(group.max()) + 1
    sumT = np.zeros((ng, 3))
    sumB = np.zeros((ng, 3))
    contrib = np.zeros(ng)
    rep = lambda a: np.repeat(a, 3, axis=0)
    np.add.at(sumT, group, rep(wT))
    np.add.at(sumB, group, rep(wB))
    np.add.at(contrib, group, rep(valid.astype(np.float64)))
    if (contrib == 0).any():
        c = int(np.flatnonzero(contrib[group] == 0)[0])
        raise MeshError(f"corner {c % 3} of face {c // 3} has no face with non-degenerate UVs")

    N = smooth_normals(mesh)[mesh.faces.reshape(-1)]
    t = sumT[group]
    t = t - N * np.einsum("ij,ij->i", t, N)[:, None]
    tn = np.linalg.norm(t, axis=1)
    weak = ~(tn > 1e-12)
    if weak.any():
        # tangent parallel to the normal: any perpendicular will do
        axis = np.where(np.abs(N[weak, 0:1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
        alt = np.cross(N[weak], axis)
        t[weak] = alt
        tn[weak] = np.linalg.norm(alt, axis=1)
    t /= tn[:, None]
    w = np.where(np.einsum("ij,ij->i", np.cross(N, t), sumB[group]) >= 0, 1.0, -1.0)
    tangents = np.concatenate([t, w[:, None]], axis=1).reshape(-1, 3, 4)
    return TangentFrames(tangents, int((~valid).sum()))


# ---------------------------------------------------------------- baking

@dataclass(frozen=True)
class BakeOptions:
    resolution: int = 2048
    max_ray_distance: float | None = None
    supersampling: int = 4
    gutter: int = 4

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("resolution must be positive")
        if self.max_ray_distance is not None and not self.max_ray_distance > 0:
            raise ValueError("max_ray_distance must be > 0")
        if self.supersampling not in (1, 4):
            raise ValueError("supersampling must be 1 or 4")
        if self.gutter < 0:
            raise ValueError("gutter must be >= 0")


@dataclass
class BakeReport:
    resolution: int
    covered: int
    missed: int
    skipped_uv_faces: int
    max_ray_distance: float
    wall_time_ms: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@njit(cache=True)
def _frame_at(f, b0, b1, b2, tri, nrm, tan):
    """Interpolated position, unit normal, tangent and bitangent on low face f."""
    P = b0 * tri[f, 0] + b1 * tri[f, 1] + b2 * tri[f, 2]
    N = b0 * nrm[f, 0] + b1 * nrm[f, 1] + b2 * nrm[f, 2]
    N = N / np.sqrt(np.sum(N * N))
    T = b0 * tan[f, 0, :3] + b1 * tan[f, 1, :3] + b2 * tan[f, 2, :3]
    T = T - N * np.sum(T * N)
    tl = np.sqrt(np.sum(T * T))
    if tl > 0:
        T = T / tl
    w = tan[f, 0, 3]
    B = w * np.cross(N, T)
    return P, N, T, B


@njit(cache=True)
def _high_normal(g, u, v, htri, hnrm, has_normals):
    if has_normals:
        n = (1.0 - u - v) * hnrm[g, 0] + u * hnrm[g, 1] + v * hnrm[g, 2]
    else:
        n = np.cross(htri[g, 1] - htri[g, 0], htri[g, 2] - htri[g, 0])
    return n / np.sqrt(np.sum(n * n))


@njit(cache=True)
def _bary(px, py, t):
    ax, ay = t[0, 0], t[0, 1]
    bx, by = t[1, 0], t[1, 1]
    cx, cy = t[2, 0], t[2, 1]
    d = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
    b1 = ((px - ax) * (cy - ay) - (cx - ax) * (py - ay)) / d
    b2 = ((bx - ax) * (py - ay) - (px - ax) * (by - ay)) / d
    return 1.0 - b1 - b2, b1, b2


@njit(cache=True, parallel=True)
def _bake_kernel(face_id, offsets, tri_px, tri, nrm, tan,
                 htri, lo, hi, left, right, start, count, order, hnrm, has_normals,
                 maxd, depth, out_n, out_state, out_face):
    H, W, S = face_id.shape
    for row in prange(H):
        stack = np.empty(depth, np.int64)
        hits = np.empty(S, np.int64)
        for col in range(W):
            acc = np.zeros(3)
            nh = 0
            covered = False
            for s in range(S):
                f = face_id[row, col, s]
                if f < 0:
                    continue
                covered = True
                b0, b1, b2 = _bary(col + offsets[s, 0], row + offsets[s, 1], tri_px[f])
                P, N, T, B = _frame_at(f, b0, b1, b2, tri, nrm, tan)
                g, t, u, v = intersect_one(htri, lo, hi, left, right, start, count, order,
                                           P[0], P[1], P[2], N[0], N[1], N[2], -maxd, maxd, stack)
                if g < 0:
                    continue
                n = _high_normal(g, u, v, htri, hnrm, has_normals)
                acc[0] += np.sum(n * T)
                acc[1] += np.sum(n * B)
                acc[2] += np.sum(n * N)
                hits[nh] = g
                nh += 1
            if not covered:
                out_state[row, col] = 0
                continue
            if nh == 0:
                out_state[row, col] = 2
                continue
            out_state[row, col] = 1
            l = np.sqrt(np.sum(acc * acc))
            for k in range(3):
                out_n[row, col, k] = acc[k] / l if l > 0 else (1.0 if k == 2 else 0.0)
            # most frequent hit face, smallest index on ties
            best = -1
            best_c = 0
            for i in range(nh):
                c = 0
                for j in range(nh):
                    if hits[j] == hits[i]:
                        c += 1
                if c > best_c or (c == best_c and hits[i] < best):
                    best, best_c = hits[i], c
            out_face[row, col] = best


def encode_normals(n: np.ndarray) -> np.ndarray:
    """channel = round(255 * (n * 0.5 + 0.5)), rounding halves up."""
    return np.clip(np.floor(255.0 * (n * 0.5 + 0.5) + 0.5), 0, 255).astype(np.uint8)


def decode_normals(rgb: np.ndarray) -> np.ndarray:
    return rgb.astype(np.float64) / 255.0 * 2.0 - 1.0


@njit(cache=True)
def _dilate(n, filled, passes):
    H, W = filled.shape
    for _ in range(passes):
        new = filled.copy()
        src = n.copy()
        for r in range(H):
            for c in range(W):
                if filled[r, c]:
                    continue
                ax = ay = az = 0.0
                k = 0
                for dr in range(-1, 2):
                    for dc in range(-1, 2):
                        rr, cc = r + dr, c + dc
                        if 0 <= rr < H and 0 <= cc < W and filled[rr, cc]:
                            ax += src[rr, cc, 0]
                            ay += src[rr, cc, 1]
                            az += src[rr, cc, 2]
                            k += 1
                if k:
                    l = np.sqrt(ax * ax + ay * ay + az * az)
                    if l > 0:
                        n[r, c, 0], n[r, c, 1], n[r, c, 2] = ax / l, ay / l, az / l
                    else:
                        n[r, c, 0], n[r, c, 1], n[r, c, 2] = 0.0, 0.0, 1.0
                    new[r, c] = True
        filled[:, :] = new


def low_poly_frames(low: TriangleMesh):
    """Per-corner smooth normals and tangents used for baking and sampling."""
    if low.uvs is None:
        raise BakeError("the low-poly mesh has no UV atlas")
    tangents = low.tangents
    skipped = 0
    if tangents is None:
        frames = compute_tangent_frames(low)
        tangents, skipped = frames.tangents, frames.skipped_faces
    nrm = smooth_normals(low)[low.faces]
    return np.ascontiguousarray(nrm), np.ascontiguousarray(tangents), skipped


def bake_normal_map(low: TriangleMesh, high: TriangleMesh, opts: BakeOptions | None = None, bvh=None):
    """Bake the high mesh's normals into the low mesh's atlas.

    Returns ``(normal_map, correspondence_map, report)``. Every sample ray
    starts on the low surface and runs along the interpolated smooth normal
    in both directions up to ``max_ray_distance``; the nearest hit wins.
    """
    opts = opts or BakeOptions()
    t0 = time.perf_counter()
    R = int(opts.resolution)
    maxd = float(opts.max_ray_distance) if opts.max_ray_distance is not None else 0.01 * low.diagonal()
    nrm, tan, skipped = low_poly_frames(low)

    face_id, pair = rasterize_uvs(low.uvs, R, R, opts.supersampling)
    if pair[0] >= 0:
        raise BakeError(f"UV atlas overlap between faces {pair[0]} and {pair[1]}")
    if not (face_id >= 0).any():
        raise BakeError("no texel is covered by the UV atlas")

    bvh = build_bvh(high) if bvh is None else bvh
    has_n = high.normals is not None
    hnrm = np.ascontiguousarray(high.normals[high.faces]) if has_n else np.zeros((1, 3, 3))
    tri_px = np.ascontiguousarray(to_pixels(low.uvs, R, R))
    out_n = np.zeros((R, R, 3))
    state = np.zeros((R, R), dtype=np.int8)
    face = np.full((R, R), SENTINEL, dtype=np.int64)
    _bake_kernel(face_id, sample_offsets(opts.supersampling), tri_px, np.ascontiguousarray(low.triangles()),
                 nrm, tan, *bvh.arrays, hnrm, has_n, maxd, 2 * bvh.depth + 4, out_n, state, face)

    covered = state > 0
    hit = state == 1
    out_n[state == 2] = (0.0, 0.0, 1.0)
    filled = covered.copy()
    _dilate(out_n, filled, int(opts.gutter))
    rgb = encode_normals(out_n)
    rgb[~filled] = FLAT
    rgb[state == 2] = FLAT
    normal_map = TextureImage(rgb)
    cmap = TextureImage(np.where(hit, face, SENTINEL).astype(np.uint32))
    report = BakeReport(R, int(covered.sum()), int((state == 2).sum()), skipped, maxd,
                        (time.perf_counter() - t0) * 1e3)
    return normal_map, cmap, report
