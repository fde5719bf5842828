"""Wavefront OBJ reading/writing and binary glTF 2.0 export."""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .errors import MeshError, ObjParseError
from .mesh import TriangleMesh, area_weighted_normals


def _index(token: str, count_hint: str, lineno: int) -> int:
    try:
        i = int(token)
    except ValueError:
        raise ObjParseError(f"bad {count_hint} index {token!r}", lineno) from None
    if i < 0:
        raise ObjParseError(f"relative (negative) {count_hint} indices are not supported", lineno)
    if i == 0:
        raise ObjParseError(f"{count_hint} index 0 is invalid (OBJ indices start at 1)", lineno)
    return i - 1


def load_obj(data: bytes | str) -> TriangleMesh:
    """Parse OBJ text into a mesh.

    Only ``v``, ``vt``, ``vn`` and ``f`` records are read. Polygons are
    fan-triangulated from their first corner. Normals referenced by faces
    are assigned per vertex (averaged if a vertex references several).
    """
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    verts, tex, norms = [], [], []
    faces, face_vt, face_vn, face_lines = [], [], [], []
    uses_vt = uses_vn = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "v":
                if len(parts) < 4:
                    raise ObjParseError("vertex needs 3 coordinates", lineno)
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif tag == "vt":
                if len(parts) < 3:
                    raise ObjParseError("texture coordinate needs 2 values", lineno)
                tex.append((float(parts[1]), float(parts[2])))
            elif tag == "vn":
                if len(parts) < 4:
                    raise ObjParseError("normal needs 3 values", lineno)
                norms.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif tag == "f":
                corners = parts[1:]
                if len(corners) < 3:
                    raise ObjParseError("face needs at least 3 corners", lineno)
                vi, ti, ni = [], [], []
                for c in corners:
                    fields = c.split("/")
                    if len(fields) > 3:
                        raise ObjParseError(f"bad face corner {c!r}", lineno)
                    vi.append(_index(fields[0], "vertex", lineno))
                    has_t = len(fields) > 1 and fields[1] != ""
                    has_n = len(fields) > 2 and fields[2] != ""
                    if uses_vt is None:
                        uses_vt, uses_vn = has_t, has_n
                    if has_t != uses_vt or has_n != uses_vn:
                        raise ObjParseError("faces mix corner formats (v, v/vt, v//vn, v/vt/vn)", lineno)
                    if has_t:
                        ti.append(_index(fields[1], "texture", lineno))
                    if has_n:
                        ni.append(_index(fields[2], "normal", lineno))
                for k in range(1, len(vi) - 1):
                    faces.append((vi[0], vi[k], vi[k + 1]))
                    face_lines.append(lineno)
                    if uses_vt:
                        face_vt.append((ti[0], ti[k], ti[k + 1]))
                    if uses_vn:
                        face_vn.append((ni[0], ni[k], ni[k + 1]))
        except ValueError as exc:
            raise ObjParseError(str(exc), lineno) from None

    pos = np.array(verts, dtype=np.float64).reshape(-1, 3)
    fa = np.array(faces, dtype=np.int64).reshape(-1, 3)
    for arr, n, what, idx_lines in ((fa, len(pos), "vertex", face_lines),):
        if len(arr) and arr.max() >= n:
            bad = int(np.flatnonzero((arr >= n).any(1))[0])
            raise ObjParseError(f"{what} index {int(arr[bad].max()) + 1} out of range (have {n})", idx_lines[bad])
    uvs = normals = None
    if uses_vt and len(fa):
        tvt = np.array(face_vt, dtype=np.int64)
        if tvt.max() >= len(tex):
            bad = int(np.flatnonzero((tvt >= len(tex)).any(1))[0])
            raise ObjParseError("texture index out of range", face_lines[bad])
        uvs = np.array(tex, dtype=np.float64)[tvt]
    if uses_vn and len(fa):
        tvn = np.array(face_vn, dtype=np.int64)
        if tvn.max() >= len(norms):
            bad = int(np.flatnonzero((tvn >= len(norms)).any(1))[0])
            raise ObjParseError("normal index out of range", face_lines[bad])
        nrm = np.array(norms, dtype=np.float64)
        acc = np.zeros_like(pos)
        np.add.at(acc, fa.ravel(), nrm[tvn.ravel()])
        length = np.linalg.norm(acc, axis=1, keepdims=True)
        normals = np.where(length > 0, acc / np.where(length > 0, length, 1.0), area_weighted_normals(pos, fa))
    try:
        return TriangleMesh(pos, fa, normals=normals, uvs=uvs)
    except MeshError as exc:
        bad = None
        if len(fa):
            rep = (fa[:, 0] == fa[:, 1]) | (fa[:, 1] == fa[:, 2]) | (fa[:, 0] == fa[:, 2])
            if rep.any():
                bad = face_lines[int(np.flatnonzero(rep)[0])]
        raise ObjParseError(str(exc), bad) from None


def save_obj(mesh: TriangleMesh) -> bytes:
    """Serialize to OBJ. Floats use shortest round-trip form, so reload is exact."""
    out = io.StringIO()
    out.write("# reefmesh OBJ\n")
    out.write("".join(f"v {x!r} {y!r} {z!r}\n" for x, y, z in mesh.positions.tolist()))
    has_t = mesh.uvs is not None
    has_n = mesh.normals is not None
    if has_t:
        out.write("".join(f"vt {u!r} {v!r}\n" for u, v in mesh.uvs.reshape(-1, 2).tolist()))
    if has_n:
        out.write("".join(f"vn {x!r} {y!r} {z!r}\n" for x, y, z in mesh.normals.tolist()))
    f1 = (mesh.faces + 1).tolist()
    if has_t and has_n:
        t = (np.arange(mesh.n_faces * 3).reshape(-1, 3) + 1).tolist()
        lines = (f"f {a}/{ta}/{a} {b}/{tb}/{b} {c}/{tc}/{c}\n" for (a, b, c), (ta, tb, tc) in zip(f1, t))
    elif has_t:
        t = (np.arange(mesh.n_faces * 3).reshape(-1, 3) + 1).tolist()
        lines = (f"f {a}/{ta} {b}/{tb} {c}/{tc}\n" for (a, b, c), (ta, tb, tc) in zip(f1, t))
    elif has_n:
        lines = (f"f {a}//{a} {b}//{b} {c}//{c}\n" for a, b, c in f1)
    else:
        lines = (f"f {a} {b} {c}\n" for a, b, c in f1)
    out.write("".join(lines))
    return out.getvalue().encode("utf-8")


def read_mesh(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        return load_obj(fh.read())


def write_mesh(path, mesh: TriangleMesh) -> None:
    with open(path, "wb") as fh:
        fh.write(save_obj(mesh))


# -- glTF ---------------------------------------------------------------------

_FLOAT, _UINT = 5126, 5125
_ARRAY_BUFFER, _ELEMENT_ARRAY_BUFFER = 34962, 34963


def _pad4(b: bytes, fill: bytes = b"\0") -> bytes:
    return b + fill * (-len(b) % 4)


def _split_corners(mesh: TriangleMesh, with_texture: bool):
    """Weld per-corner attributes into glTF per-vertex arrays."""
    normals = mesh.vertex_normals()
    if not with_texture:
        return mesh.positions, normals, None, None, mesh.faces
    corner_v = mesh.faces.reshape(-1)
    uv = mesh.uvs.reshape(-1, 2)
    tan = mesh.tangents.reshape(-1, 4)
    key = np.concatenate([corner_v[:, None].astype(np.float64), uv, tan], axis=1)
    uniq, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    # keep first-appearance order so the output does not depend on sort order of floats
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    src = first[order]
    v = corner_v[src]
    return mesh.positions[v], normals[v], uv[src], tan[src], rank[inv.reshape(-1)].reshape(-1, 3)


def export_glb(mesh: TriangleMesh, normal_map=None) -> bytes:
    """Pack the mesh (and optional tangent-space normal map) into a GLB file.

    ``normal_map`` is a :class:`reefmesh.baker.TextureImage`. Texture
    coordinates are flipped to glTF's top-left convention on the way out.
    """
    if mesh.n_faces == 0:
        raise MeshError("cannot export a mesh with zero faces")
    if normal_map is not None:
        if mesh.uvs is None:
            raise MeshError("a normal map requires texture coordinates")
        if mesh.tangents is None:
            from .baker import compute_tangent_frames

            mesh = mesh.replace(tangents=compute_tangent_frames(mesh).tangents)
    with_tex = normal_map is not None
    pos, nrm, uv, tan, idx = _split_corners(mesh, with_tex)

    chunks: list[bytes] = []
    views, accessors = [], []

    def add_view(data: bytes, target=None):
        offset = sum(len(c) for c in chunks)
        chunks.append(_pad4(data))
        view = {"buffer": 0, "byteOffset": offset, "byteLength": len(data)}
        if target is not None:
            view["target"] = target
        views.append(view)
        return len(views) - 1

    def add_accessor(arr, ctype, kind, target, minmax=False):
        data = np.ascontiguousarray(arr, dtype="<f4" if ctype == _FLOAT else "<u4").tobytes()
        acc = {"bufferView": add_view(data, target), "componentType": ctype,
               "count": int(len(arr)), "type": kind}
        if minmax:
            a32 = np.asarray(arr, dtype=np.float32)
            acc["min"] = [float(x) for x in a32.min(0)]
            acc["max"] = [float(x) for x in a32.max(0)]
        accessors.append(acc)
        return len(accessors) - 1

    attributes = {
        "POSITION": add_accessor(pos, _FLOAT, "VEC3", _ARRAY_BUFFER, minmax=True),
        "NORMAL": add_accessor(nrm / np.linalg.norm(nrm, axis=1, keepdims=True), _FLOAT, "VEC3", _ARRAY_BUFFER),
    }
    if with_tex:
        attributes["TEXCOORD_0"] = add_accessor(np.stack([uv[:, 0], 1.0 - uv[:, 1]], 1), _FLOAT, "VEC2", _ARRAY_BUFFER)
        attributes["TANGENT"] = add_accessor(tan, _FLOAT, "VEC4", _ARRAY_BUFFER)
    primitive = {"attributes": attributes,
                 "indices": add_accessor(idx.reshape(-1), _UINT, "SCALAR", _ELEMENT_ARRAY_BUFFER),
                 "mode": 4}
    doc = {
        "asset": {"version": "2.0", "generator": "reefmesh"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0}],
        "meshes": [{"primitives": [primitive]}],
    }
    if with_tex:
        image_view = add_view(normal_map.to_png())
        doc["images"] = [{"bufferView": image_view, "mimeType": "image/png"}]
        doc["samplers"] = [{"magFilter": 9729, "minFilter": 9987, "wrapS": 33071, "wrapT": 33071}]
        doc["textures"] = [{"sampler": 0, "source": 0}]
        doc["materials"] = [{"normalTexture": {"index": 0, "texCoord": 0},
                             "pbrMetallicRoughness": {"metallicFactor": 0.0, "roughnessFactor": 0.8}}]
        primitive["material"] = 0
    doc["bufferViews"] = views
    doc["accessors"] = accessors
    binary = b"".join(chunks)
    doc["buffers"] = [{"byteLength": len(binary)}]

    js = _pad4(json.dumps(doc, separators=(",", ":"), sort_keys=True).encode("utf-8"), b" ")
    total = 12 + 8 + len(js) + 8 + len(binary)
    return b"".join([
        struct.pack("<4sII", b"glTF", 2, total),
        struct.pack("<I4s", len(js), b"JSON"), js,
        struct.pack("<I4s", len(binary), b"BIN\0"), binary,
    ])


def read_glb(blob: bytes) -> tuple[dict, bytes]:
    """Split a GLB container into its JSON document and binary chunk."""
    magic, version, total = struct.unpack_from("<4sII", blob, 0)
    if magic != b"glTF" or version != 2 or total != len(blob):
        raise MeshError("not a glTF 2.0 binary container")
    jlen, jtype = struct.unpack_from("<I4s", blob, 12)
    doc = json.loads(blob[20:20 + jlen])
    off = 20 + jlen
    binary = b""
    if off < len(blob):
        blen, _ = struct.unpack_from("<I4s", blob, off)
        binary = blob[off + 8:off + 8 + blen]
    return doc, binary
