"""Conforming triangular meshes of the unit square and the L-shaped domain.

A :class:`Mesh2D` is immutable once built.  Edges are derived from the
triangles and carry an intrinsic orientation, from the lower to the higher
vertex index, so that DOF signs never depend on how a mesh was constructed.

Local numbering convention: local edge ``i`` of a triangle ``(v0, v1, v2)``
is the edge opposite to local vertex ``i``.
"""
import warnings

import numpy as np

__all__ = [
    "Mesh2D",
    "MeshError",
    "MeshFormatError",
    "MeshConformityError",
    "DegenerateElementError",
    "generate_square",
    "generate_lshape",
    "coarse_square",
    "coarse_lshape",
    "red_refine",
    "refine_levels",
    "load_mesh",
    "save_mesh",
]

DOMAIN_AREA = {"square": 1.0, "lshape": 0.75}


class MeshError(ValueError):
    """Base class for invalid mesh input."""


class MeshFormatError(MeshError):
    """The mesh file could not be parsed."""


class MeshConformityError(MeshError):
    """Connectivity is not a conforming triangulation."""


class DegenerateElementError(MeshError):
    """A triangle has zero area."""


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _signed_area(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    d1 = vertices[triangles[:, 1]] - p0
    d2 = vertices[triangles[:, 2]] - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


class Mesh2D:
    """Conforming triangulation with oriented edges and refinement lineage.

    Parameters
    ----------
    vertices : (V, 2) array
    triangles : (T, 3) int array, counterclockwise
    parent : (T,) int array, optional
        Index of the parent triangle in the previous (coarser) mesh.
    parent_mesh : Mesh2D, optional
        The coarser mesh ``parent`` refers to.
    domain : str, optional
        Domain tag, ``"square"`` or ``"lshape"`` for generated meshes.
    """

    def __init__(self, vertices, triangles, parent=None, domain=None, n_reoriented=0, parent_mesh=None):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshFormatError("vertices must have shape (V, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshFormatError("triangles must have shape (T, 3)")
        if len(triangles) == 0:
            raise MeshFormatError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshFormatError("triangle references a vertex out of range")

        area = _signed_area(vertices, triangles)
        scale = np.ptp(vertices, axis=0).max() ** 2
        if np.any(np.abs(area) <= 1e-14 * scale):
            bad = int(np.flatnonzero(np.abs(area) <= 1e-14 * scale)[0])
            raise DegenerateElementError(f"triangle {bad} has zero area")
        if np.any(area < 0):
            raise MeshConformityError("triangles must be counterclockwise")

        self.vertices = _frozen(vertices)
        self.triangles = _frozen(triangles)
        self.parent = None if parent is None else _frozen(np.asarray(parent, dtype=np.int64))
        self.parent_mesh = parent_mesh
        self.domain = domain
        self.n_reoriented = int(n_reoriented)
        self.areas = _frozen(area)
        self._build_topology()

    # -- construction ---------------------------------------------------
    def _build_topology(self):
        t = self.triangles
        nt = len(t)
        # local edge i joins local vertices (i+1, i+2)
        loc = np.array([[1, 2], [2, 0], [0, 1]])
        pairs = t[:, loc].reshape(-1, 2)
        key = np.sort(pairs, axis=1)
        if len(np.unique(np.sort(t, axis=1), axis=0)) != nt:
            raise MeshConformityError("duplicated triangle")
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise MeshConformityError("an edge is shared by more than two triangles")

        tri_edges = inverse.reshape(nt, 3)
        owner = np.repeat(np.arange(nt), 3)
        order = np.argsort(inverse, kind="stable")
        edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
        first = np.ones(len(order), dtype=bool)
        first[1:] = inverse[order][1:] != inverse[order][:-1]
        edge_tris[inverse[order][first], 0] = owner[order][first]
        edge_tris[inverse[order][~first], 1] = owner[order][~first]

        boundary_edge = edge_tris[:, 1] < 0
        boundary_vertex = np.zeros(len(self.vertices), dtype=bool)
        boundary_vertex[edges[boundary_edge].ravel()] = True
        if np.any(np.bincount(t.ravel(), minlength=len(self.vertices)) == 0):
            raise MeshConformityError("mesh contains unused vertices")

        d = self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]]
        h_e = np.hypot(d[:, 0], d[:, 1])
        tangent = d / h_e[:, None]
        normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])

        # +1 if the global edge normal points out of the triangle
        a = t[:, [1, 2, 0]]
        b = t[:, [2, 0, 1]]
        # for a ccw triangle the outward normal of edge a->b is the tangent
        # a->b rotated clockwise, which equals the global normal iff a < b
        edge_sign = np.where(a < b, 1, -1)

        h_k = h_e[tri_edges].max(axis=1)

        self.edges = _frozen(edges.astype(np.int64))
        self.tri_edges = _frozen(tri_edges.astype(np.int64))
        self.edge_tris = _frozen(edge_tris)
        self.boundary_edge = _frozen(boundary_edge)
        self.boundary_vertex = _frozen(boundary_vertex)
        self.h_e = _frozen(h_e)
        self.h_k = _frozen(h_k)
        self.edge_tangent = _frozen(tangent)
        self.edge_normal = _frozen(normal)
        self.edge_sign = _frozen(edge_sign.astype(np.int64))

    # -- queries --------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_boundary_edges(self):
        return int(self.boundary_edge.sum())

    @property
    def interior_edges(self):
        return np.flatnonzero(~self.boundary_edge)

    @property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_triangles

    def jacobians(self):
        """Affine maps x = v0 + J xhat; returns (v0, J) with J of shape (T, 2, 2)."""
        p = self.vertices[self.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        return p[:, 0], J

    def to_physical(self, ref_points):
        """Map reference points (nq, 2) to physical points (T, nq, 2)."""
        v0, J = self.jacobians()
        return v0[:, None, :] + np.einsum("tij,qj->tqi", J, np.asarray(ref_points, dtype=float))

    def min_angles(self):
        p = self.vertices[self.triangles]
        out = np.empty((self.n_triangles, 3))
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, i] = np.arccos(np.clip(cos, -1.0, 1.0))
        return out.min(axis=1)

    def __repr__(self):
        return (
            f"Mesh2D(domain={self.domain!r}, V={self.n_vertices}, "
            f"E={self.n_edges}, T={self.n_triangles})"
        )


# -- generators ---------------------------------------------------------
def _structured(n, keep_cell, centered=None, domain=None):
    xs = np.linspace(0.0, 1.0, n + 1)
    grid = -np.ones((n + 1, n + 1), dtype=np.int64)
    verts = []
    tris = []

    def vid(i, j):
        if grid[i, j] < 0:
            grid[i, j] = len(verts)
            verts.append((xs[i], xs[j]))
        return grid[i, j]

    for j in range(n):
        for i in range(n):
            if not keep_cell(i, j):
                continue
            p00, p10 = vid(i, j), vid(i + 1, j)
            p11, p01 = vid(i + 1, j + 1), vid(i, j + 1)
            if centered is not None and centered(i, j):
                c = len(verts)
                verts.append((0.5 * (xs[i] + xs[i + 1]), 0.5 * (xs[j] + xs[j + 1])))
                tris += [(p00, p10, c), (p10, p11, c), (p11, p01, c), (p01, p00, c)]
            else:
                tris += [(p00, p10, p11), (p00, p11, p01)]
    return Mesh2D(np.array(verts), np.array(tris), domain=domain)


def generate_square(n, centered_cells=None):
    """Structured triangulation of (0, 1)^2 with ``n`` cells per side.

    Each cell is cut by its SW-NE diagonal.  ``centered_cells`` is an optional
    predicate ``(i, j) -> bool``; selected cells are instead split into four
    triangles around an added center vertex.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    return _structured(int(n), lambda i, j: True, centered_cells, domain="square")


def generate_lshape(n):
    """Structured triangulation of (0,1)^2 minus [1/2,1)^2; ``n`` must be even."""
    if int(n) != n or n < 2 or n % 2:
        raise ValueError("n must be an even integer >= 2 so that (1/2, 1/2) is a vertex")
    n = int(n)
    h = n // 2
    return _structured(n, lambda i, j: i < h or j < h, domain="lshape")


def coarse_square():
    """Structured square mesh with 160 triangles and 97 vertices (448 BDM1 DOFs)."""
    return generate_square(8, centered_cells=lambda i, j: i % 2 == 0 and j % 2 == 0)


def coarse_lshape():
    """Structured L-shaped mesh with 96 triangles and 65 vertices."""
    return generate_lshape(8)


# -- refinement ---------------------------------------------------------
def red_refine(mesh):
    """Split every triangle into four by its edge midpoints.

    Child ``4 k + c`` of parent ``k`` is the corner child at local vertex ``c``
    for ``c < 3`` and the central child for ``c = 3``.
    """
    nv = mesh.n_vertices
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    verts = np.vstack([mesh.vertices, mid])
    t = mesh.triangles
    m = nv + mesh.tri_edges  # m[:, i] is the midpoint opposite local vertex i
    children = np.stack(
        [
            np.column_stack([t[:, 0], m[:, 2], m[:, 1]]),
            np.column_stack([m[:, 2], t[:, 1], m[:, 0]]),
            np.column_stack([m[:, 1], m[:, 0], t[:, 2]]),
            np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.n_triangles), 4)
    return Mesh2D(verts, children, parent=parent, domain=mesh.domain, parent_mesh=mesh)


def refine_levels(mesh, levels):
    """Return ``[mesh, red_refine(mesh), ...]`` with ``levels + 1`` entries."""
    out = [mesh]
    for _ in range(levels):
        out.append(red_refine(out[-1]))
    return out


# -- file I/O -----------------------------------------------------------
def save_mesh(mesh, path):
    """Write the ASCII ``V E T`` format; coordinates are written losslessly."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_edges} {mesh.n_triangles}\n")
        for (x, y), b in zip(mesh.vertices.tolist(), mesh.boundary_vertex.tolist()):
            fh.write(f"{x!r} {y!r} {int(b)}\n")
        for a, b, c in mesh.triangles.tolist():
            fh.write(f"{a} {b} {c}\n")


def load_mesh(path, domain=None):
    """Read a mesh written by :func:`save_mesh`.

    Clockwise triangles are reoriented; their number is stored in
    ``mesh.n_reoriented`` and reported through :mod:`warnings`.
    """
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        nv, ne, nt = (int(x) for x in lines[0])
        if len(lines) != 1 + nv + nt:
            raise MeshFormatError(f"expected {1 + nv + nt} lines, found {len(lines)}")
        vrows = lines[1 : 1 + nv]
        trows = lines[1 + nv :]
        if any(len(r) != 3 for r in vrows) or any(len(r) != 3 for r in trows):
            raise MeshFormatError("each vertex and triangle line must have three fields")
        verts = np.array([[float(r[0]), float(r[1])] for r in vrows])
        flags = np.array([int(r[2]) for r in vrows], dtype=bool)
        tris = np.array([[int(x) for x in r] for r in trows], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, MeshFormatError):
            raise
        raise MeshFormatError(f"cannot parse mesh file {path}: {exc}") from exc

    if tris.min() < 0 or tris.max() >= nv:
        raise MeshFormatError("triangle references a vertex out of range")
    area = _signed_area(verts, tris)
    cw = area < 0
    n_cw = int(cw.sum())
    if n_cw:
        tris[cw] = tris[cw][:, [0, 2, 1]]
        warnings.warn(f"{n_cw} clockwise triangle(s) reoriented", stacklevel=2)
    mesh = Mesh2D(verts, tris, domain=domain, n_reoriented=n_cw)
    if mesh.n_edges != ne:
        raise MeshConformityError(f"header declares {ne} edges, connectivity yields {mesh.n_edges}")
    if np.any(mesh.boundary_vertex != flags):
        # a hanging node shows up as a flagged-interior vertex on a free edge
        raise MeshConformityError("boundary flags disagree with connectivity (hanging node?)")
    return mesh
