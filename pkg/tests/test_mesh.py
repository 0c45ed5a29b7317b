import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenarios import two_triangle_mesh
from thermoshadow.mesh import (
    ALL, GAMMA, SIGMA, MeshError, MeshFormatError, TriMesh, boundary_measure, edge_sides,
    generate_rect_mesh, load_mesh, save_mesh,
)


def test_rect_mesh_counts_and_measures():
    m = generate_rect_mesh(4, 3, "left")
    assert (m.nv, m.nt, m.ne) == (20, 24, 14)
    assert boundary_measure(m, GAMMA) == pytest.approx(1.0)
    assert boundary_measure(m, SIGMA) == pytest.approx(3.0)
    assert boundary_measure(m, ALL) == pytest.approx(4.0)
    assert m.areas.sum() == pytest.approx(1.0)
    assert np.all(m.signed_areas > 0)


def test_gamma_spec_variants():
    m = generate_rect_mesh(4, 4, ["left", "bottom"])
    assert boundary_measure(m, GAMMA) == pytest.approx(2.0)
    with pytest.raises(MeshError):
        generate_rect_mesh(4, 4, "")
    with pytest.raises(MeshError):
        generate_rect_mesh(4, 4, "left+right+top+bottom")


def test_outward_normals_point_out():
    m = generate_rect_mesh(5, 5, "left")
    expected = {"left": (-1, 0), "right": (1, 0), "bottom": (0, -1), "top": (0, 1)}
    for side, n in zip(edge_sides(m), m.edge_normals):
        np.testing.assert_allclose(n, expected[side], atol=1e-14)


def test_refinement_is_nested():
    coarse = generate_rect_mesh(4, 4, "left")
    fine = generate_rect_mesh(8, 8, "left")
    # every coarse edge midpoint-free diagonal is a union of fine diagonals:
    # the coarse diagonal midpoints are fine vertices lying on fine diagonals
    fine_v = {tuple(np.round(v, 12)) for v in fine.vertices}
    for t in coarse.triangles:
        p = coarse.vertices[t]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            assert tuple(np.round(0.5 * (p[a] + p[b]), 12)) in fine_v


def test_round_trip(tmp_path):
    m = generate_rect_mesh(3, 2, "bottom")
    save_mesh(m, tmp_path / "m.txt")
    m2 = load_mesh(tmp_path / "m.txt")
    np.testing.assert_array_equal(m.vertices, m2.vertices)
    np.testing.assert_array_equal(m.triangles, m2.triangles)
    np.testing.assert_array_equal(m.edge_gamma, m2.edge_gamma)


def test_loader_reorients_clockwise_triangles(tmp_path):
    text = "# square\n4 2 4\n0 0\n1 0\n1 1\n0 1\n0 2 1\n0 3 2\n0 1 S\n1 2 S\n2 3 S\n3 0 G\n"
    (tmp_path / "cw.txt").write_text(text)
    m = load_mesh(tmp_path / "cw.txt")
    assert np.all(m.signed_areas > 0)


@pytest.mark.parametrize("body, line", [
    ("4 2 4\n0 0\n1 0\n1 1\n0 1\n0 1 7\n0 2 3\n0 1 S\n1 2 S\n2 3 S\n3 0 G\n", 6),
    ("4 2 4\n0 0\n1 0\n1 1\n0 1\n0 1 2\n0 2 3\n0 1 S\n1 2 S\n2 3 S\n3 0 X\n", 11),
    ("4 2 4\n0 0\n1 0\n2 0\n0 1\n0 1 2\n0 2 3\n0 1 S\n1 2 S\n2 3 S\n3 0 G\n", 6),
])
def test_loader_errors_cite_line(tmp_path, body, line):
    (tmp_path / "bad.txt").write_text(body)
    with pytest.raises(MeshFormatError, match=f"line {line}"):
        load_mesh(tmp_path / "bad.txt")


def test_open_boundary_rejected():
    m = two_triangle_mesh()
    with pytest.raises(MeshError, match="open boundary loop"):
        TriMesh(m.vertices, m.triangles, m.boundary_edges[:3], m.edge_gamma[:3])


def test_needs_both_boundary_parts():
    m = two_triangle_mesh()
    with pytest.raises(MeshError):
        TriMesh(m.vertices, m.triangles, m.boundary_edges, np.zeros(4, dtype=bool))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9))
def test_basis_gradients_sum_to_zero(nx, ny):
    m = generate_rect_mesh(nx, ny, "top")
    np.testing.assert_allclose(m.basis_gradients.sum(axis=1), 0.0, atol=1e-10)
    assert m.edge_lengths.sum() == pytest.approx(4.0)
