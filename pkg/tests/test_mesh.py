import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from divfree_stokes.mesh import (
    DOMAIN_AREA,
    DegenerateElementError,
    Mesh2D,
    MeshConformityError,
    MeshFormatError,
    coarse_lshape,
    coarse_square,
    generate_lshape,
    generate_square,
    load_mesh,
    red_refine,
    refine_levels,
    save_mesh,
)


def check_invariants(m):
    assert np.all(m.areas > 0)
    assert m.euler_characteristic() == 1
    counts = (m.edge_tris >= 0).sum(axis=1)
    assert np.all(counts[m.boundary_edge] == 1)
    assert np.all(counts[~m.boundary_edge] == 2)
    assert np.all(m.edges[:, 0] < m.edges[:, 1])
    assert abs(m.areas.sum() - DOMAIN_AREA[m.domain]) < 1e-12
    assert np.allclose(m.h_e, np.linalg.norm(np.diff(m.vertices[m.edges], axis=1)[:, 0], axis=1))
    lens = np.linalg.norm(m.vertices[m.triangles] - m.vertices[np.roll(m.triangles, -1, axis=1)], axis=2)
    assert np.allclose(m.h_k, lens.max(axis=1))


@pytest.mark.parametrize(
    "n, nt, nv, ne, nb",
    [(1, 2, 4, 5, 4), (4, 32, 25, 56, 16)],
)
def test_generate_square_counts(n, nt, nv, ne, nb):
    m = generate_square(n)
    assert (m.n_triangles, m.n_vertices, m.n_edges, m.n_boundary_edges) == (nt, nv, ne, nb)
    check_invariants(m)


def test_square_refined_counts():
    m = red_refine(generate_square(4))
    assert (m.n_triangles, m.n_vertices, m.n_edges) == (128, 81, 208)
    check_invariants(m)


def test_generate_square_rejects_zero():
    with pytest.raises(ValueError):
        generate_square(0)


def test_lshape_counts():
    assert generate_lshape(2).n_triangles == 6
    m = generate_lshape(4)
    assert (m.n_triangles, m.n_vertices) == (24, 21)
    check_invariants(m)


@pytest.mark.parametrize("n", [1, 3, 5])
def test_lshape_rejects_odd(n):
    with pytest.raises(ValueError):
        generate_lshape(n)


@pytest.mark.parametrize("n", [2, 4, 6, 10])
def test_reentrant_corner_is_vertex(n):
    m = generate_lshape(n)
    assert np.any(np.all(np.isclose(m.vertices, 0.5), axis=1))
    # nothing inside the removed quadrant
    c = m.centroids
    assert not np.any((c[:, 0] > 0.5) & (c[:, 1] > 0.5))


def test_coarse_square_analogue():
    m = coarse_square()
    assert (m.n_triangles, m.n_vertices, m.n_edges, m.n_boundary_edges) == (160, 97, 256, 32)
    f = red_refine(m)
    assert (f.n_triangles, f.n_vertices) == (640, 353)
    check_invariants(f)


def test_five_refinements_count():
    # counts follow from the formulas, no need to build the finest mesh
    T, V, E = 160, 97, 256
    for _ in range(5):
        T, V, E = 4 * T, V + E, 2 * E + 3 * T
    assert T == 163840
    assert V - E + T == 1


def test_two_triangles_refine_to_eight():
    assert red_refine(generate_square(1)).n_triangles == 8


@pytest.mark.parametrize("mesh_fn", [coarse_square, coarse_lshape, lambda: generate_square(3)])
def test_refinement_formulas_and_lineage(mesh_fn):
    m = mesh_fn()
    f = red_refine(m)
    assert f.n_triangles == 4 * m.n_triangles
    assert f.n_vertices == m.n_vertices + m.n_edges
    assert f.n_edges == 2 * m.n_edges + 3 * m.n_triangles
    check_invariants(f)
    assert f.parent_mesh is m
    assert np.array_equal(f.parent, np.repeat(np.arange(m.n_triangles), 4))
    # children tile the parent
    assert np.allclose(np.bincount(f.parent, weights=f.areas), m.areas)
    # each child centroid lies in its parent
    v = m.vertices[m.triangles[f.parent]]
    c = f.centroids
    lam = np.linalg.solve(
        np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2), (c - v[:, 0])[..., None]
    )[..., 0]
    assert np.all(lam > 0) and np.all(lam.sum(1) < 1)


def test_refinement_preserves_min_angle():
    m = coarse_lshape()
    levels = refine_levels(m, 2)
    a0 = m.min_angles().min()
    for f in levels[1:]:
        assert abs(f.min_angles().min() - a0) < 1e-12
    # children are similar to their parent
    f = levels[1]
    assert np.allclose(np.sort(f.min_angles()), np.sort(np.repeat(m.min_angles(), 4)))


def test_edge_orientation_is_deterministic():
    a, b = generate_square(3), generate_square(3)
    assert np.array_equal(a.edges, b.edges)
    assert np.array_equal(a.tri_edges, b.tri_edges)
    # the same triangles listed with rotated vertex order give the same edges
    rolled = Mesh2D(a.vertices, np.roll(a.triangles, 1, axis=1))
    assert np.array_equal(rolled.edges, a.edges)


def test_normals_point_out_of_first_triangle():
    m = coarse_lshape()
    e = np.arange(m.n_edges)
    mid = m.vertices[m.edges].mean(axis=1)
    t0 = m.edge_tris[:, 0]
    # global normal is outward for element t iff edge_sign is +1
    loc = np.argmax(m.tri_edges[t0] == e[:, None], axis=1)
    sign = m.edge_sign[t0, loc]
    out = np.einsum("ea,ea->e", mid - m.centroids[t0], m.edge_normal)
    assert np.all(np.sign(out) == sign)


def test_save_load_round_trip(tmp_path):
    m = red_refine(coarse_lshape())
    p = tmp_path / "m.txt"
    save_mesh(m, p)
    g = load_mesh(p)
    assert np.array_equal(g.vertices, m.vertices)
    assert np.array_equal(g.triangles, m.triangles)
    assert g.n_reoriented == 0
    head = p.read_text().splitlines()[0].split()
    assert list(map(int, head)) == [m.n_vertices, m.n_edges, m.n_triangles]


def _write(path, verts, flags, tris, ne=None):
    ne = ne if ne is not None else 0
    lines = [f"{len(verts)} {ne} {len(tris)}"]
    lines += [f"{x} {y} {f}" for (x, y), f in zip(verts, flags)]
    lines += [" ".join(map(str, t)) for t in tris]
    path.write_text("\n".join(lines) + "\n")


SQ_V = [(0, 0), (1, 0), (1, 1), (0, 1)]


def test_load_duplicated_triangle(tmp_path):
    p = tmp_path / "dup.txt"
    _write(p, SQ_V, [1] * 4, [(0, 1, 2), (0, 2, 3), (1, 2, 0)], ne=5)
    with pytest.raises(MeshConformityError):
        load_mesh(p)


def test_load_clockwise_is_reoriented(tmp_path):
    p = tmp_path / "cw.txt"
    _write(p, SQ_V, [1] * 4, [(0, 2, 1), (0, 2, 3)], ne=5)
    with pytest.warns(UserWarning):
        m = load_mesh(p)
    assert m.n_reoriented == 1
    assert np.all(m.areas > 0)


def test_load_zero_area(tmp_path):
    p = tmp_path / "flat.txt"
    _write(p, [(0, 0), (1, 0), (2, 0), (0, 1)], [1] * 4, [(0, 1, 2), (0, 1, 3)], ne=5)
    with pytest.raises(DegenerateElementError):
        load_mesh(p)


def test_load_malformed(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("4 5 2\n0 0 1\n1 0\n")
    with pytest.raises(MeshFormatError):
        load_mesh(p)


def test_load_hanging_node(tmp_path):
    # vertex 4 sits on the diagonal of the left triangle only
    verts = [(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)]
    tris = [(0, 1, 4), (1, 2, 4), (0, 2, 3)]
    p = tmp_path / "hang.txt"
    _write(p, verts, [1, 1, 1, 1, 0], tris, ne=8)
    with pytest.raises(MeshConformityError):
        load_mesh(p)


def test_error_kinds_are_distinct():
    assert len({MeshFormatError, MeshConformityError, DegenerateElementError}) == 3
    assert not issubclass(MeshFormatError, MeshConformityError)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2))
def test_square_invariants_property(n, levels):
    for j, m in enumerate(refine_levels(generate_square(n), levels)):
        check_invariants(m)
        assert m.n_triangles == 2 * n * n * 4**j
        assert m.n_vertices == (n * 2**j + 1) ** 2


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 6).map(lambda k: 2 * k), st.integers(0, 2))
def test_lshape_invariants_property(n, levels):
    for m in refine_levels(generate_lshape(n), levels):
        check_invariants(m)
