import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reefmesh import MeshError, NonManifoldError, ObjParseError, TriangleMesh, validate
from reefmesh.coral import generate_test_coral
from reefmesh.halfedge import build_halfedge
from reefmesh.io import export_glb, load_obj, read_glb, save_obj
from reefmesh.primitives import cube, grid, icosphere, tetrahedron

from meshgen import convex_hull_mesh

TET_OBJ = b"""# unit tetrahedron
v 0 0 0
v 1 0 0
v 0 1 0
v 0 0 1
f 1 3 2
f 1 2 4
f 1 4 3
f 2 3 4
"""


def test_load_tetrahedron():
    m = load_obj(TET_OBJ)
    assert (m.n_vertices, m.n_faces) == (4, 4)
    assert m.faces[0].tolist() == [0, 2, 1]


def test_quad_fan_triangulation():
    m = load_obj(b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_ignores_other_records():
    m = load_obj(b"o thing\nmtllib x.mtl\nv 0 0 0\nv 1 0 0\nv 0 1 0\ns 1\nusemtl a\nf 1 2 3\n")
    assert m.n_faces == 1


@pytest.mark.parametrize("text, line", [
    (b"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 5\n", 5),
    (b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", 4),
    (b"v 0 0\n", 1),
    (b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 x\n", 4),
])
def test_obj_errors_carry_line(text, line):
    with pytest.raises(ObjParseError) as info:
        load_obj(text)
    assert info.value.line == line


def test_negative_indices_rejected_explicitly():
    with pytest.raises(ObjParseError, match="relative"):
        load_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")


def test_save_obj_roundtrip_is_exact():
    m = tetrahedron()
    back = load_obj(save_obj(m))
    assert np.array_equal(back.positions, m.positions)
    assert np.array_equal(back.faces, m.faces)


def test_save_obj_with_attributes():
    m = grid(2)
    uvs = m.positions[m.faces][..., :2] / 2 + 0.5
    m = m.replace(uvs=uvs, normals=np.tile([0.0, 0.0, 1.0], (m.n_vertices, 1)))
    text = save_obj(m).decode()
    assert "\nvt " in text and "\nvn " in text
    face_line = next(line for line in text.splitlines() if line.startswith("f "))
    assert all(len(c.split("/")) == 3 for c in face_line.split()[1:])
    back = load_obj(text)
    assert np.allclose(back.uvs, m.uvs) and np.allclose(back.normals, m.normals)


def test_save_obj_is_byte_deterministic():
    m = icosphere(2)
    assert save_obj(m) == save_obj(m)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.floats(1e-6, 1e6))
def test_obj_roundtrip_property(seed, scale):
    rng = np.random.default_rng(seed)
    m = convex_hull_mesh(rng, int(rng.integers(4, 200)))
    m = m.replace(positions=m.positions * scale + rng.normal(size=3))
    back = load_obj(save_obj(m))
    assert np.array_equal(back.faces, m.faces)
    assert np.abs(back.positions - m.positions).max() <= 1e-9


def test_validate_tetrahedron():
    r = validate(tetrahedron())
    assert r.is_edge_manifold and r.is_closed and r.is_orientable
    assert r.euler_characteristic == 2
    assert r.connected_component_count == 1
    assert r.boundary_edge_count == 0 and r.ok


def test_validate_inconsistent_winding():
    # both triangles traverse the shared edge 0->1
    m = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0.0]]), np.array([[0, 1, 2], [0, 1, 3]]))
    r = validate(m)
    assert not r.is_orientable
    assert r.is_edge_manifold
    # oracle: consistently wound neighbours traverse their shared edge in opposite directions
    directed = [(int(f[k]), int(f[(k + 1) % 3])) for f in m.faces for k in range(3)]
    assert len(set(directed)) < len(directed)


def test_validate_reports_nan_first():
    m = TriangleMesh(np.array([[0, 0, 0], [1, 0, np.nan], [0, 1, 0.0]]), np.array([[0, 1, 2]]))
    r = validate(m)
    assert not r.ok
    assert "non-finite" in r.invariant_violations[0]


def test_validate_boundary_and_degenerate():
    m = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0.0]]), np.array([[0, 1, 2], [0, 1, 3]]))
    r = validate(m)
    assert r.degenerate_face_count == 1
    assert not r.is_closed and r.boundary_edge_count == 4


def test_closed_implies_no_boundary():
    for m in (tetrahedron(), cube(), icosphere(1), grid(3)):
        r = validate(m)
        assert not r.is_closed or r.boundary_edge_count == 0


def test_mesh_constructor_rejects_bad_indices():
    with pytest.raises(MeshError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    with pytest.raises(MeshError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))


def test_halfedge_tetrahedron():
    he = build_halfedge(tetrahedron())
    assert he.n_halfedges == 12
    assert (he.twin >= 0).all()
    assert he.n_edges == 6


def test_halfedge_single_triangle():
    he = build_halfedge(TriangleMesh(np.eye(3), np.array([[0, 1, 2]])))
    assert he.n_halfedges == 3
    assert len(he.boundary_halfedges) == 3


def test_halfedge_nonmanifold_names_edge():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1.0]])
    faces = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    with pytest.raises(NonManifoldError) as info:
        build_halfedge(TriangleMesh(pos, faces))
    assert set(info.value.edge) == {0, 1}


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_halfedge_invariants(seed):
    rng = np.random.default_rng(seed)
    m = convex_hull_mesh(rng, int(rng.integers(4, 300)))
    if seed % 2:
        # open it up: drop a few faces
        m = TriangleMesh(m.positions, m.faces[rng.permutation(m.n_faces)[: max(1, m.n_faces - 3)]])
    he = build_halfedge(m)
    h = np.arange(he.n_halfedges)
    inner = he.twin >= 0
    assert np.array_equal(he.twin[he.twin[inner]], h[inner])
    assert np.array_equal(he.next[he.next[he.next]], h)
    assert he.euler_characteristic() == validate(m).euler_characteristic
    assert np.array_equal(he.origin.reshape(-1, 3), m.faces)


def test_glb_tetrahedron_layout():
    blob = export_glb(tetrahedron())
    magic, version, total = struct.unpack_from("<4sII", blob, 0)
    assert (magic, version, total) == (b"glTF", 2, len(blob))
    doc, binary = read_glb(blob)
    assert len(doc["meshes"]) == 1 and len(doc["meshes"][0]["primitives"]) == 1
    assert "materials" not in doc and "textures" not in doc
    prim = doc["meshes"][0]["primitives"][0]
    assert doc["accessors"][prim["attributes"]["POSITION"]]["componentType"] == 5126
    assert doc["accessors"][prim["indices"]]["componentType"] == 5125
    assert len(binary) == doc["buffers"][0]["byteLength"]


def test_glb_positions_survive():
    m = icosphere(1)
    doc, binary = read_glb(export_glb(m))
    prim = doc["meshes"][0]["primitives"][0]
    acc = doc["accessors"][prim["attributes"]["POSITION"]]
    view = doc["bufferViews"][acc["bufferView"]]
    pos = np.frombuffer(binary, "<f4", acc["count"] * 3, view["byteOffset"]).reshape(-1, 3)
    iacc = doc["accessors"][prim["indices"]]
    iview = doc["bufferViews"][iacc["bufferView"]]
    idx = np.frombuffer(binary, "<u4", iacc["count"], iview["byteOffset"]).reshape(-1, 3)
    assert np.allclose(pos[idx], m.triangles(), atol=1e-6)


def test_glb_rejects_empty_mesh_and_missing_uvs():
    from reefmesh.baker import TextureImage

    with pytest.raises(MeshError):
        export_glb(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)))
    flat = TextureImage(np.full((4, 4, 3), 128, np.uint8))
    with pytest.raises(MeshError):
        export_glb(tetrahedron(), flat)


def test_coral_small_is_closed_sphere():
    m = generate_test_coral(1, 2000)
    r = validate(m)
    assert r.is_closed and r.is_orientable and r.is_edge_manifold
    assert r.euler_characteristic == 2
    assert 1800 <= m.n_faces <= 2200
    lo, hi = m.bounds()
    assert np.isclose((hi - lo).max(), 1.0)


def test_coral_is_deterministic():
    assert generate_test_coral(7, 5000).content_hash() == generate_test_coral(7, 5000).content_hash()
    assert generate_test_coral(7, 5000).content_hash() != generate_test_coral(8, 5000).content_hash()


def test_coral_rejects_tiny_target():
    with pytest.raises(ValueError):
        generate_test_coral(1, 99)


def test_coral_many_seeds_closed():
    rng = np.random.default_rng(0)
    for seed in rng.integers(0, 2**63, size=100):
        m = generate_test_coral(int(seed), int(rng.integers(100, 3000)))
        r = validate(m)
        assert r.is_closed and r.is_orientable, int(seed)
