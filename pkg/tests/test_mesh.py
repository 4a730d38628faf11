import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdgdirk.mesh import (Mesh, TopologyError, build_skeleton, generate_structured, read_mesh,
                          refine_uniform, write_mesh)


def brute_force_edges(tri):
    pairs = {}
    for k, t in enumerate(tri):
        for a, b in itertools.combinations(sorted(t), 2):
            pairs.setdefault((a, b), []).append(k)
    return pairs


def test_structured_counts():
    assert generate_structured(4, 4).n_elements == 32
    assert generate_structured(16, 16).n_elements == 512


def test_structured_rejects_bad_sizes():
    with pytest.raises(ValueError):
        generate_structured(0, 3)
    with pytest.raises(ValueError):
        generate_structured(2, -1)


def test_two_by_two_edge_counts():
    sk = build_skeleton(generate_structured(2, 2))
    assert sk.n_edges == 16
    assert sk.boundary.sum() == 8
    assert sk.interior.sum() == 8
    pairs = brute_force_edges(generate_structured(2, 2).triangles)
    assert len(pairs) == 16
    assert sum(len(v) == 1 for v in pairs.values()) == 8


def test_single_triangle():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                (0.0, 1.0, 0.0, 1.0))
    sk = build_skeleton(mesh)
    assert sk.n_edges == 3
    assert sk.boundary.all()


def test_right_boundary_normals():
    mesh = generate_structured(3, 3)
    sk = build_skeleton(mesh)
    mid = mesh.vertices[sk.edges].mean(axis=1)
    right = sk.boundary & np.isclose(mid[:, 0], 0.5)
    assert right.sum() == 3
    np.testing.assert_allclose(sk.normals[right], [[1.0, 0.0]] * 3, atol=1e-15)


def test_refine_counts_and_area():
    mesh = generate_structured(4, 4)
    fine = refine_uniform(mesh)
    assert fine.n_elements == 128
    parent = np.repeat(mesh.signed_areas, 4).reshape(-1, 4).sum(axis=1) / 4
    child = fine.signed_areas.reshape(-1, 4).sum(axis=1)
    np.testing.assert_allclose(child, parent, rtol=1e-13)
    assert refine_uniform(refine_uniform(generate_structured(16, 16))).n_elements == 8192


def test_refined_interior_edge_count():
    mesh = generate_structured(3, 2)
    sk = build_skeleton(mesh)
    fine = build_skeleton(refine_uniform(mesh))
    assert fine.interior.sum() == 2 * sk.interior.sum() + 3 * mesh.n_elements


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7))
def test_structured_invariants(nx, ny):
    mesh = generate_structured(nx, ny, (0.0, 2.0, -1.0, 0.5))
    sk = build_skeleton(mesh)
    assert np.all(mesh.signed_areas > 0)
    assert abs(mesh.signed_areas.sum() - mesh.bbox_area) < 1e-12 * mesh.bbox_area
    assert sk.n_edges == mesh.n_elements * 3 // 2 + sk.boundary.sum() // 2
    assert sk.interior.sum() + sk.boundary.sum() == sk.n_edges
    np.testing.assert_allclose(np.linalg.norm(sk.normals, axis=1), 1.0, atol=1e-14)
    # left index is the lower one
    inner = sk.interior
    assert np.all(sk.elements[inner, 0] < sk.elements[inner, 1])


def test_interior_normals_opposite():
    mesh = generate_structured(3, 3)
    sk = build_skeleton(mesh)
    tri = mesh.vertices[mesh.triangles]
    for e in np.flatnonzero(sk.interior):
        mid = mesh.vertices[sk.edges[e]].mean(axis=0)
        left, right = sk.elements[e]
        n = sk.normals[e]
        # left centroid is behind the normal, right centroid ahead of it
        assert np.dot(tri[left].mean(axis=0) - mid, n) < 0
        assert np.dot(tri[right].mean(axis=0) - mid, n) > 0


def test_hanging_node_is_rejected():
    v = np.array([[0, 0], [2, 0], [2, 2], [0, 2], [1, 0], [1, 1]], dtype=float)
    # big triangle on top, two small ones below sharing the midpoint of the long diagonal
    tri = np.array([[0, 2, 3], [0, 4, 5], [4, 1, 5], [5, 1, 2]])
    mesh = Mesh(v, tri, (0.0, 2.0, 0.0, 2.0))
    with pytest.raises(TopologyError):
        build_skeleton(mesh)


def test_clockwise_triangle_rejected():
    with pytest.raises(ValueError):
        Mesh(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.array([[0, 1, 2]]),
             (0.0, 1.0, 0.0, 1.0))


def test_mesh_file_round_trip(tmp_path):
    mesh = generate_structured(3, 2)
    write_mesh(mesh, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    assert (tmp_path / "m.txt").read_text().splitlines()[0] == f"{mesh.n_vertices} 12"


def test_deterministic_generation():
    a, b = generate_structured(5, 3), generate_structured(5, 3)
    np.testing.assert_array_equal(a.triangles, b.triangles)
    assert build_skeleton(a).edges.tobytes() == build_skeleton(b).edges.tobytes()
