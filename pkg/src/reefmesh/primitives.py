"""Small analytic meshes used as fixtures and in the demos."""

import numpy as np

from .mesh import TriangleMesh


def tetrahedron() -> TriangleMesh:
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    faces = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriangleMesh(pos, faces)


def cube(size: float = 1.0) -> TriangleMesh:
    """Axis-aligned cube ``[0, size]^3`` with two triangles per side."""
    pos = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float) * size
    quads = [
        (0, 2, 3, 1),  # z = 0
        (4, 5, 7, 6),  # z = 1
        (0, 1, 5, 4),  # y = 0
        (2, 6, 7, 3),  # y = 1
        (0, 4, 6, 2),  # x = 0
        (1, 3, 7, 5),  # x = 1
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(pos, np.array(faces))


def icosahedron() -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    pos = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    pos /= np.linalg.norm(pos, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return TriangleMesh(pos, faces)


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriangleMesh:
    """Geodesic sphere with ``20 * 4**subdivisions`` faces."""
    base = icosahedron()
    pos, faces = base.positions.copy(), base.faces.copy()
    for _ in range(subdivisions):
        e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        e.sort(axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.reshape(3, -1).T + len(pos)
        mid = pos[uniq].mean(axis=1)
        pos = np.concatenate([pos, mid / np.linalg.norm(mid, axis=1, keepdims=True)])
        a, b, c = faces.T
        ab, bc, ca = inv.T
        faces = np.concatenate([
            np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1),
        ])
    return TriangleMesh(pos * radius, faces)


def grid(n: int = 5, size: float = 1.0) -> TriangleMesh:
    """Flat ``n x n`` vertex grid in the z = 0 plane, normal +z."""
    xs = np.linspace(0.0, size, n)
    x, y = np.meshgrid(xs, xs)
    pos = np.stack([x.ravel(), y.ravel(), np.zeros(n * n)], axis=1)
    idx = np.arange(n * n).reshape(n, n)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriangleMesh(pos, faces)


def half_cylinder(n_around: int = 12, n_along: int = 6, radius: float = 1.0, length: float = 2.0) -> TriangleMesh:
    """Open half-cylinder surface (a developable disk), outward normals."""
    theta = np.linspace(0.0, np.pi, n_around)
    z = np.linspace(0.0, length, n_along)
    t, zz = np.meshgrid(theta, z)
    pos = np.stack([radius * np.cos(t).ravel(), radius * np.sin(t).ravel(), zz.ravel()], axis=1)
    idx = np.arange(n_along * n_around).reshape(n_along, n_around)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriangleMesh(pos, faces)
