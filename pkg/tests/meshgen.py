"""Random mesh fixtures shared by the test modules."""

import numpy as np
from scipy.spatial import ConvexHull

from reefmesh.coral import generate_test_coral
from reefmesh.mesh import TriangleMesh
from reefmesh.primitives import icosphere
from reefmesh.refine import NoiseParams, noise_displace


def convex_hull_mesh(rng: np.random.Generator, n_points: int) -> TriangleMesh:
    """Outward-wound hull of points on a randomly stretched sphere."""
    p = rng.normal(size=(n_points, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    p *= rng.uniform(0.5, 1.5, size=3)
    hull = ConvexHull(p)
    f = hull.simplices.copy()
    tri = p[f]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    out = ((tri.mean(1) - p.mean(0)) * n).sum(1) < 0
    f[out] = f[out][:, ::-1]
    used, inv = np.unique(f, return_inverse=True)
    return TriangleMesh(p[used], inv.reshape(-1, 3))


def bumpy_sphere(rng: np.random.Generator, subdivisions: int) -> TriangleMesh:
    m = icosphere(subdivisions)
    return noise_displace(m, NoiseParams(int(rng.integers(2**32)), 0.08, 1.5, 3))


def random_closed_mesh(seed: int, max_faces: int = 10_000) -> TriangleMesh:
    """One of three closed genus-0 families, picked by ``seed``."""
    rng = np.random.default_rng(seed)
    kind = seed % 3
    if kind == 0:
        return convex_hull_mesh(rng, int(rng.integers(200, max_faces // 2)))
    if kind == 1:
        return bumpy_sphere(rng, int(rng.integers(2, 5)))
    return generate_test_coral(int(rng.integers(2**31)), int(rng.integers(1000, max_faces)))
