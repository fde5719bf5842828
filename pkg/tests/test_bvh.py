import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reefmesh import MeshError, TriangleMesh
from reefmesh.bvh import build_bvh
from reefmesh.primitives import icosphere

from meshgen import random_closed_mesh
from oracles import nearest_hit, point_triangle_dist2


def _check_closest(mesh, points):
    bvh = build_bvh(mesh)
    dist, face, cp = bvh.closest_points(points)
    d2 = point_triangle_dist2(points, mesh.triangles())
    ref = np.sqrt(d2.min(1))
    assert np.allclose(dist, ref, rtol=1e-9, atol=1e-12)
    # the face must match wherever the runner-up is clearly farther
    srt = np.sort(d2, axis=1)
    clear = srt[:, 1] > srt[:, 0] * (1 + 1e-6) + 1e-18
    assert np.array_equal(face[clear], d2.argmin(1)[clear])
    assert np.allclose(np.linalg.norm(cp - points, axis=1), dist, rtol=1e-9, atol=1e-12)


def test_single_triangle_one_leaf():
    m = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), np.array([[0, 1, 2]]))
    bvh = build_bvh(m)
    assert len(bvh.leaves()) == 1
    dist, face, cp = bvh.closest_points(m.positions.mean(0)[None])
    # 1/3 is not representable, so the centroid sits a rounding error off the plane
    assert dist[0] <= 1e-15 and face[0] == 0
    assert np.allclose(cp[0], m.positions.mean(0))


def test_empty_mesh_rejected():
    with pytest.raises(MeshError):
        build_bvh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)))


def test_closest_point_icosphere_1000_queries():
    m = icosphere(2)
    assert m.n_faces == 320
    rng = np.random.default_rng(5)
    _check_closest(m, rng.uniform(-1.5, 1.5, size=(1000, 3)))


def test_ray_through_center():
    m = icosphere(2)
    bvh = build_bvh(m)
    rng = np.random.default_rng(2)
    d = rng.normal(size=(200, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.zeros_like(d)
    face, t, _ = bvh.intersect(o, d)
    ref_face, ref_t = nearest_hit(o, d, m.triangles())
    assert (face >= 0).all()
    assert np.allclose(t, ref_t, rtol=1e-9)
    assert np.array_equal(face, ref_face)


def test_bidirectional_rays_keep_nearest_side():
    m = icosphere(2)
    bvh = build_bvh(m)
    rng = np.random.default_rng(4)
    o = rng.uniform(-0.5, 0.5, size=(300, 3))
    d = rng.normal(size=(300, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    face, t, _ = bvh.intersect(o, d, -10.0, 10.0)
    ref_face, ref_t = nearest_hit(o, d, m.triangles(), -10.0, 10.0)
    assert np.allclose(t, ref_t, rtol=1e-9)
    clear = face == ref_face
    assert clear.mean() > 0.99


def test_ray_miss_reports_minus_one():
    bvh = build_bvh(icosphere(1))
    face, t, _ = bvh.intersect(np.array([[0, 0, 5.0]]), np.array([[0, 0, 1.0]]))
    assert face[0] == -1


def test_tree_structure():
    m = random_closed_mesh(2, 4000)
    bvh = build_bvh(m)
    tri = m.triangles()
    seen = np.concatenate([bvh.order[bvh.start[n]:bvh.start[n] + bvh.count[n]] for n in bvh.leaves()])
    assert np.array_equal(np.sort(seen), np.arange(m.n_faces))

    def faces_under(n):
        if bvh.left[n] < 0:
            return bvh.order[bvh.start[n]:bvh.start[n] + bvh.count[n]]
        return np.concatenate([faces_under(bvh.left[n]), faces_under(bvh.right[n])])

    for n in range(0, bvh.n_nodes, 7):
        t = tri[faces_under(n)].reshape(-1, 3)
        assert (t.min(0) >= bvh.lo[n]).all() and (t.max(0) <= bvh.hi[n]).all()


@settings(max_examples=12)
@given(st.integers(0, 10_000))
def test_closest_point_matches_brute_force(seed):
    m = random_closed_mesh(seed, 3000 if seed % 4 else 10_000)
    rng = np.random.default_rng(seed)
    lo, hi = m.bounds()
    pts = rng.uniform(lo - 0.2, hi + 0.2, size=(150, 3))
    _check_closest(m, pts)


@settings(max_examples=12)
@given(st.integers(0, 10_000))
def test_rays_match_brute_force(seed):
    m = random_closed_mesh(seed, 3000)
    rng = np.random.default_rng(seed)
    lo, hi = m.bounds()
    o = rng.uniform(lo, hi, size=(100, 3))
    d = rng.normal(size=(100, 3))
    bvh = build_bvh(m)
    face, t, _ = bvh.intersect(o, d)
    ref_face, ref_t = nearest_hit(o, d, m.triangles())
    assert np.array_equal(face >= 0, ref_face >= 0)
    hit = face >= 0
    assert np.allclose(t[hit], ref_t[hit], rtol=1e-9)
