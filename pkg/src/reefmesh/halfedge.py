"""Array-backed half-edge connectivity.

Half-edge ``3*f + k`` runs from ``faces[f, k]`` to ``faces[f, (k+1) % 3]``,
so ``face`` and ``next`` are implicit in the index. ``twin`` is ``-1`` on
boundary half-edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonManifoldError
from .mesh import TriangleMesh


@dataclass(frozen=True, eq=False)
class HalfEdgeMesh:
    n_vertices: int
    origin: np.ndarray
    twin: np.ndarray
    next: np.ndarray
    face: np.ndarray

    @property
    def n_halfedges(self) -> int:
        return len(self.origin)

    @property
    def n_faces(self) -> int:
        return len(self.origin) // 3

    @property
    def n_edges(self) -> int:
        interior = int((self.twin >= 0).sum())
        return interior // 2 + int((self.twin < 0).sum())

    @property
    def boundary_halfedges(self) -> np.ndarray:
        return np.flatnonzero(self.twin < 0)

    def target(self, h):
        return self.origin[self.next[h]]

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def vertex_outgoing(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR (offsets, half-edge ids) of outgoing half-edges per vertex."""
        order = np.argsort(self.origin, kind="stable")
        counts = np.bincount(self.origin, minlength=self.n_vertices)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return offsets, order


def build_halfedge(mesh: TriangleMesh) -> HalfEdgeMesh:
    """Build half-edges; raises :class:`NonManifoldError` naming the bad edge."""
    f = mesh.faces
    nf, nv = len(f), mesh.n_vertices
    origin = f.reshape(-1)
    dest = f[:, [1, 2, 0]].reshape(-1)
    h = np.arange(3 * nf)
    nxt = 3 * (h // 3) + (h % 3 + 1) % 3
    face = h // 3

    lo, hi = np.minimum(origin, dest), np.maximum(origin, dest)
    key = lo * nv + hi
    order = np.argsort(key, kind="stable")
    sk = key[order]
    starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
    counts = np.diff(np.r_[starts, len(sk)])
    if (counts > 2).any():
        k = int(sk[starts[np.argmax(counts > 2)]])
        edge = (k // nv, k % nv)
        raise NonManifoldError(f"edge {edge} is shared by {int(counts.max())} faces", edge)
    twin = np.full(3 * nf, -1, dtype=np.int64)
    pair = starts[counts == 2]
    a, b = order[pair], order[pair + 1]
    same_dir = origin[a] == origin[b]
    if same_dir.any():
        i = int(np.flatnonzero(same_dir)[0])
        edge = (int(lo[a[i]]), int(hi[a[i]]))
        raise NonManifoldError(f"edge {edge} is traversed in the same direction by two faces", edge)
    twin[a], twin[b] = b, a
    return HalfEdgeMesh(nv, origin.copy(), twin, nxt, face)
