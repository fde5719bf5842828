"""Indexed triangle meshes and topology validation.

A :class:`TriangleMesh` is an immutable value: the constructor copies its
arrays and marks them read-only, and every operation in the package returns
a new mesh instead of editing one in place.

Attribute layout
----------------
positions : (V, 3) float64
faces     : (F, 3) int64, counter-clockwise seen from outside
normals   : (V, 3) float64 unit vectors, optional
uvs       : (F, 3, 2) float64 per-corner texture coordinates, optional.
            ``v`` points up; row ``0`` of an image is ``v = 1``.
tangents  : (F, 3, 4) float64 per-corner unit tangent plus handedness sign,
            optional
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import MeshError

# Relative tolerance on squared area, see ``degenerate_faces``.
DEGENERATE_TOL = 1e-12


def _frozen(array, dtype, shape_tail, name):
    if array is None:
        return None
    arr = np.array(array, dtype=dtype, copy=True)
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise MeshError(f"{name} must have shape (N, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    positions: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None
    uvs: np.ndarray | None = None
    tangents: np.ndarray | None = None

    def __post_init__(self):
        pos = _frozen(self.positions, np.float64, (3,), "positions")
        faces = _frozen(self.faces, np.int64, (3,), "faces")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "faces", faces)
        nv, nf = len(pos), len(faces)
        if nf:
            if faces.min() < 0 or faces.max() >= nv:
                bad = int(np.flatnonzero((faces < 0).any(1) | (faces >= nv).any(1))[0])
                raise MeshError(f"face {bad} references a vertex outside [0, {nv})")
            rep = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
            if rep.any():
                raise MeshError(f"face {int(np.flatnonzero(rep)[0])} repeats a vertex")
        normals = _frozen(self.normals, np.float64, (3,), "normals")
        if normals is not None and len(normals) != nv:
            raise MeshError("normals must have one entry per vertex")
        uvs = _frozen(self.uvs, np.float64, (3, 2), "uvs")
        if uvs is not None and len(uvs) != nf:
            raise MeshError("uvs must have one entry per face corner")
        tangents = _frozen(self.tangents, np.float64, (3, 4), "tangents")
        if tangents is not None and len(tangents) != nf:
            raise MeshError("tangents must have one entry per face corner")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "uvs", uvs)
        object.__setattr__(self, "tangents", tangents)

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def replace(self, **changes) -> TriangleMesh:
        return dataclasses.replace(self, **changes)

    def geometry_only(self) -> TriangleMesh:
        """Drop every optional attribute."""
        return TriangleMesh(self.positions, self.faces)

    def triangles(self) -> np.ndarray:
        """Corner positions, shape (F, 3, 3)."""
        return self.positions[self.faces]

    def face_cross(self) -> np.ndarray:
        tri = self.triangles()
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        c = self.face_cross()
        n = np.linalg.norm(c, axis=1, keepdims=True)
        return np.divide(c, n, out=np.zeros_like(c), where=n > 0)

    def vertex_normals(self) -> np.ndarray:
        """Stored normals, or area-weighted averages of incident face normals."""
        if self.normals is not None:
            return self.normals
        return area_weighted_normals(self.positions, self.faces)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n_vertices == 0:
            raise MeshError("empty mesh has no bounds")
        return self.positions.min(0), self.positions.max(0)

    def diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted pairs, lexicographic order."""
        return unique_edges(self.faces)

    def signed_volume(self) -> float:
        tri = self.triangles()
        return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name in ("positions", "faces", "normals", "uvs", "tangents"):
            arr = getattr(self, name)
            h.update(name.encode())
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def __repr__(self):
        extras = [k for k in ("normals", "uvs", "tangents") if getattr(self, k) is not None]
        return f"TriangleMesh(V={self.n_vertices}, F={self.n_faces}{', ' if extras else ''}{', '.join(extras)})"


def area_weighted_normals(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = positions[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    acc = np.zeros_like(positions)
    for k in range(3):
        np.add.at(acc, faces[:, k], cross)
    length = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.divide(acc, length, out=np.zeros_like(acc), where=length > 0)
    # isolated or fully degenerate vertices get an arbitrary but valid normal
    out[length[:, 0] == 0] = (0.0, 0.0, 1.0)
    return out


def unique_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def directed_edge_counts(faces: np.ndarray, n_vertices: int):
    """Return (undirected key, faces per edge, directed duplicates) arrays."""
    heads = faces.reshape(-1)
    tails = faces[:, [1, 2, 0]].reshape(-1)
    lo = np.minimum(heads, tails)
    hi = np.maximum(heads, tails)
    keys = lo * n_vertices + hi
    directed = heads * n_vertices + tails
    return keys, directed


def degenerate_faces(mesh: TriangleMesh) -> np.ndarray:
    """Boolean mask of faces with (numerically) zero area.

    A face is degenerate when its squared doubled area falls below
    ``DEGENERATE_TOL`` times the fourth power of its longest edge. The test
    is scale-free so that million-face meshes normalized to a unit box are
    not misreported.
    """
    tri = mesh.triangles()
    c = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area2 = np.einsum("ij,ij->i", c, c)
    edges2 = np.stack([
        np.einsum("ij,ij->i", tri[:, 1] - tri[:, 0], tri[:, 1] - tri[:, 0]),
        np.einsum("ij,ij->i", tri[:, 2] - tri[:, 1], tri[:, 2] - tri[:, 1]),
        np.einsum("ij,ij->i", tri[:, 0] - tri[:, 2], tri[:, 0] - tri[:, 2]),
    ], axis=1).max(1)
    with np.errstate(invalid="ignore"):
        return ~(area2 > DEGENERATE_TOL * edges2 * edges2)


@dataclass(frozen=True)
class ValidationReport:
    is_edge_manifold: bool
    is_closed: bool
    is_orientable: bool
    boundary_edge_count: int
    degenerate_face_count: int
    connected_component_count: int
    euler_characteristic: int
    invariant_violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.invariant_violations

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["invariant_violations"] = list(self.invariant_violations)
        return d


def invariant_violations(mesh: TriangleMesh) -> list[str]:
    problems = []
    if not np.isfinite(mesh.positions).all():
        bad = int(np.flatnonzero(~np.isfinite(mesh.positions).all(1))[0])
        problems.append(f"non-finite coordinate at vertex {bad}")
    if mesh.normals is not None:
        length = np.linalg.norm(mesh.normals, axis=1)
        bad = ~(np.abs(length - 1.0) <= 1e-4)
        if bad.any():
            problems.append(f"normal {int(np.flatnonzero(bad)[0])} is not unit length")
    if mesh.uvs is not None and not np.isfinite(mesh.uvs).all():
        problems.append("non-finite texture coordinate")
    return problems


def validate(mesh: TriangleMesh) -> ValidationReport:
    """Report manifoldness, closure, orientation and counts.

    ``is_orientable`` means *consistently oriented*: no directed edge occurs
    twice. Invariant violations (non-finite data, non-unit normals) are
    listed first; the topology fields only depend on the index array and
    are still computed.
    """
    problems = tuple(invariant_violations(mesh))
    nv, nf = mesh.n_vertices, mesh.n_faces
    if nf == 0:
        return ValidationReport(True, False, True, 0, 0, nv, nv, problems)

    keys, directed = directed_edge_counts(mesh.faces, nv)
    _, counts = np.unique(keys, return_counts=True)
    n_edges = len(counts)
    manifold = bool((counts <= 2).all())
    boundary = int((counts == 1).sum())
    oriented = len(np.unique(directed)) == len(directed)

    e = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]]])
    graph = coo_matrix((np.ones(len(e), dtype=np.int8), (e[:, 0], e[:, 1])), shape=(nv, nv))
    n_comp, _ = connected_components(graph, directed=False)

    degenerate = int(degenerate_faces(mesh).sum()) if not problems else int(
        degenerate_faces(mesh.replace(positions=np.nan_to_num(mesh.positions), normals=None)).sum())
    return ValidationReport(
        is_edge_manifold=manifold,
        is_closed=manifold and boundary == 0,
        is_orientable=oriented,
        boundary_edge_count=boundary,
        degenerate_face_count=degenerate,
        connected_component_count=int(n_comp),
        euler_characteristic=int(nv - n_edges + nf),
        invariant_violations=problems,
    )


def require_valid(mesh: TriangleMesh, what: str = "operation") -> None:
    problems = invariant_violations(mesh)
    if problems:
        raise MeshError(f"{what} requires a valid mesh: {problems[0]}")


def require_manifold(mesh: TriangleMesh, what: str = "operation") -> ValidationReport:
    """Raise unless the mesh is valid, edge-manifold and consistently oriented."""
    from .errors import NonManifoldError

    require_valid(mesh, what)
    report = validate(mesh)
    if not report.is_edge_manifold:
        keys, _ = directed_edge_counts(mesh.faces, mesh.n_vertices)
        uniq, counts = np.unique(keys, return_counts=True)
        k = int(uniq[np.argmax(counts > 2)])
        edge = (k // mesh.n_vertices, k % mesh.n_vertices)
        raise NonManifoldError(f"{what}: edge {edge} is shared by more than two faces", edge)
    if not report.is_orientable:
        raise NonManifoldError(f"{what}: mesh is not consistently oriented")
    return report
