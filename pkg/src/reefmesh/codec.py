"""CLM1: quantized, delta + zigzag + LEB128 coded triangle meshes.

Layout (little-endian)::

    "CLM1" | version u8 = 1 | position_bits u8 | uv_bits u8 | flags u8 (bit0: UVs)
    | vertex_count u32 | face_count u32 | bbox_min 3 x f32 | bbox_max 3 x f32
    | position varints (3 per vertex) | index varints (3 per face)
    | UV varints (6 per face, only with bit0)

Each axis of the float32 bounding box (rounded outward) is split into
``2**position_bits`` cells and a coordinate decodes to its cell center, so
the error per axis is at most half a cell.
"""

from __future__ import annotations

import struct

import numpy as np
from numba import njit

from .errors import DecodeError, MeshError
from .mesh import TriangleMesh, require_valid

MAGIC = b"CLM1"
VERSION = 1
HEADER = struct.Struct("<4sBBBBII3f3f")
FLAG_UV = 1


def zigzag(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.int64)
    return ((v << 1) ^ (v >> 63)).astype(np.uint64)


def unzigzag(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64)
    return ((z >> np.uint64(1)).astype(np.int64)) ^ (-(z & np.uint64(1)).astype(np.int64))


def encode_varints(values: np.ndarray) -> bytes:
    """LEB128 for non-negative integers (uint64)."""
    z = np.asarray(values, dtype=np.uint64).ravel()
    if len(z) == 0:
        return b""
    nbytes = np.ones(len(z), dtype=np.int64)
    for k in range(1, 10):
        nbytes += (z >> np.uint64(7 * k)) > 0
    width = int(nbytes.max())
    grid = np.zeros((len(z), width), dtype=np.uint8)
    for k in range(width):
        chunk = ((z >> np.uint64(7 * k)) & np.uint64(0x7F)).astype(np.uint8)
        more = (nbytes > k + 1).astype(np.uint8) << 7
        grid[:, k] = chunk | more
    keep = np.arange(width)[None, :] < nbytes[:, None]
    return grid[keep].tobytes()


@njit(cache=True)
def _read_varints(buf, pos, n, out):
    """Decode n LEB128 values starting at pos; returns the new offset or
    -1 (truncated) / -2 (value wider than 64 bits)."""
    size = buf.shape[0]
    for i in range(n):
        value = np.uint64(0)
        shift = 0
        while True:
            if pos >= size:
                return -1
            b = buf[pos]
            pos += 1
            if shift == 63 and (b & 0x7E) != 0:
                return -2
            value |= np.uint64(b & 0x7F) << np.uint64(shift)
            if b < 0x80:
                break
            shift += 7
            if shift > 63:
                return -2
        out[i] = value
    return pos


def _outward_f32(lo: np.ndarray, hi: np.ndarray):
    lo32 = lo.astype(np.float32)
    hi32 = hi.astype(np.float32)
    down = lo32.astype(np.float64) > lo
    up = hi32.astype(np.float64) < hi
    lo32[down] = np.nextafter(lo32[down], np.float32(-np.inf))
    hi32[up] = np.nextafter(hi32[up], np.float32(np.inf))
    return lo32, hi32


def quantization_step(bbox_min, bbox_max, bits: int) -> np.ndarray:
    return (np.asarray(bbox_max, np.float64) - np.asarray(bbox_min, np.float64)) / float(1 << bits)


def compress(mesh: TriangleMesh, position_bits: int = 14, uv_bits: int = 12) -> bytes:
    """Encode a mesh as CLM1 bytes; normals and tangents are dropped."""
    if not 8 <= position_bits <= 24:
        raise ValueError("position_bits must lie in [8, 24]")
    if not 8 <= uv_bits <= 16:
        raise ValueError("uv_bits must lie in [8, 16]")
    require_valid(mesh, "compress")
    nv, nf = mesh.n_vertices, mesh.n_faces
    if nv:
        lo32, hi32 = _outward_f32(mesh.positions.min(0), mesh.positions.max(0))
    else:
        lo32 = hi32 = np.zeros(3, dtype=np.float32)
    lo, hi = lo32.astype(np.float64), hi32.astype(np.float64)
    cells = 1 << position_bits
    step = quantization_step(lo, hi, position_bits)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(step > 0, np.floor((mesh.positions - lo) / np.where(step > 0, step, 1.0)), 0.0)
    q = np.clip(q, 0, cells - 1).astype(np.int64)

    flags = 0
    streams = []
    dq = np.diff(q, axis=0, prepend=np.zeros((1, 3), dtype=np.int64))
    streams.append(encode_varints(zigzag(dq.ravel())))
    f = mesh.faces.astype(np.int64)
    prev_first = np.concatenate([[0], f[:-1, 0]]) if nf else np.zeros(0, dtype=np.int64)
    streams.append(encode_varints(zigzag((f - prev_first[:, None]).ravel())))
    if mesh.uvs is not None:
        uv = mesh.uvs.reshape(-1, 2)
        if (uv < 0).any() or (uv > 1).any():
            raise ValueError("UVs must lie in [0, 1] to be compressed")
        ucells = 1 << uv_bits
        qu = np.clip(np.floor(uv * ucells), 0, ucells - 1).astype(np.int64)
        du = np.diff(qu, axis=0, prepend=np.zeros((1, 2), dtype=np.int64))
        streams.append(encode_varints(zigzag(du.ravel())))
        flags |= FLAG_UV
    header = HEADER.pack(MAGIC, VERSION, position_bits, uv_bits, flags, nv, nf, *lo32.tolist(), *hi32.tolist())
    return header + b"".join(streams)


def read_header(blob: bytes) -> dict:
    if not isinstance(blob, (bytes, bytearray, memoryview)):
        raise DecodeError("input must be bytes")
    if len(blob) < HEADER.size:
        raise DecodeError(f"truncated header: {len(blob)} of {HEADER.size} bytes")
    magic, version, pbits, ubits, flags, nv, nf, *box = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DecodeError(f"unsupported version {version}")
    if not 8 <= pbits <= 24:
        raise DecodeError(f"position_bits {pbits} out of range")
    if not 8 <= ubits <= 16:
        raise DecodeError(f"uv_bits {ubits} out of range")
    if flags & ~FLAG_UV:
        raise DecodeError(f"unknown flags {flags:#x}")
    lo = np.array(box[:3], dtype=np.float64)
    hi = np.array(box[3:], dtype=np.float64)
    if not (np.isfinite(lo).all() and np.isfinite(hi).all() and (lo <= hi).all()):
        raise DecodeError("invalid bounding box")
    return {"position_bits": pbits, "uv_bits": ubits, "has_uvs": bool(flags & FLAG_UV),
            "vertex_count": nv, "face_count": nf, "bbox_min": lo, "bbox_max": hi}


def decompress(blob: bytes) -> TriangleMesh:
    """Decode CLM1 bytes; every malformed input raises :class:`DecodeError`."""
    h = read_header(blob)
    nv, nf = h["vertex_count"], h["face_count"]
    body = np.frombuffer(bytes(blob), dtype=np.uint8, offset=HEADER.size)
    need = 3 * nv + 3 * nf + (6 * nf if h["has_uvs"] else 0)
    if len(body) < need:
        raise DecodeError(f"truncated payload: at least {need} bytes expected, {len(body)} present")

    def read(pos, n, what):
        out = np.empty(n, dtype=np.uint64)
        end = _read_varints(body, pos, n, out)
        if end == -1:
            raise DecodeError(f"truncated {what} stream")
        if end == -2:
            raise DecodeError(f"malformed varint in {what} stream")
        return out, end

    zpos, p = read(0, 3 * nv, "position")
    zidx, p = read(p, 3 * nf, "index")
    zuv = None
    if h["has_uvs"]:
        zuv, p = read(p, 6 * nf, "uv")
    if p != len(body):
        raise DecodeError(f"{len(body) - p} trailing bytes after the payload")

    cells = 1 << h["position_bits"]
    dq = unzigzag(zpos).reshape(-1, 3)
    # bound the deltas before summing so the running sums cannot wrap
    if (np.abs(dq) >= cells).any():
        raise DecodeError("position delta out of range")
    q = np.cumsum(dq, axis=0)
    if ((q < 0) | (q >= cells)).any():
        raise DecodeError("quantized position out of range")
    lo, hi = h["bbox_min"], h["bbox_max"]
    step = quantization_step(lo, hi, h["position_bits"])
    pos = lo + (q + 0.5) * step
    pos = np.minimum(np.maximum(pos, lo), hi)

    d = unzigzag(zidx).reshape(-1, 3)
    if (np.abs(d) > max(nv, 1)).any():
        raise DecodeError("index delta out of range")
    faces = np.empty((nf, 3), dtype=np.int64)
    if nf:
        first = np.cumsum(d[:, 0])
        prev_first = np.concatenate([[0], first[:-1]])
        faces[:, 0] = first
        faces[:, 1:] = d[:, 1:] + prev_first[:, None]
    if nf and ((faces < 0) | (faces >= nv)).any():
        raise DecodeError("face index out of range")

    uvs = None
    if zuv is not None:
        ucells = 1 << h["uv_bits"]
        du = unzigzag(zuv).reshape(-1, 2)
        if (np.abs(du) >= ucells).any():
            raise DecodeError("uv delta out of range")
        qu = np.cumsum(du, axis=0)
        if ((qu < 0) | (qu >= ucells)).any():
            raise DecodeError("quantized uv out of range")
        uvs = ((qu + 0.5) / ucells).reshape(-1, 3, 2)
    try:
        return TriangleMesh(pos, faces, uvs=uvs)
    except (MeshError, ValueError) as exc:
        raise DecodeError(f"decoded mesh is invalid: {exc}") from None


def raw_size(mesh: TriangleMesh) -> int:
    """Uncompressed binary size: 12 bytes per vertex plus 12 per face."""
    return 12 * mesh.n_vertices + 12 * mesh.n_faces
