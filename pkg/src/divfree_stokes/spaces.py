"""The exact-sequence trio P2 (stream) -> BDM1 (velocity) -> P0 (pressure).

BDM1 degrees of freedom are Legendre moments of the normal flux on each edge,
taken against the global edge normal and the global edge parameterization
(lower to higher vertex).  For an edge with endpoints ``P`` (lower index) and
``Q`` and unit normal ``n`` (the tangent ``P -> Q`` rotated clockwise)::

    l0(u) = int_0^1 u(P + s (Q - P)) . n ds
    l1(u) = 3 int_0^1 u(P + s (Q - P)) . n (2 s - 1) ds

so that ``u . n = l0 + l1 (2 s - 1)`` on the edge.  Since both neighbours of
an interior edge use the same functionals, normal traces are continuous by
construction.  Boundary-edge DOFs are eliminated (``u . n = 0``).
"""
import csv
from enum import Enum

import numpy as np

from .quadrature import edge_rule, triangle_rule

__all__ = [
    "SpaceKind",
    "FeSpace",
    "Field",
    "build_space",
    "build_trio",
    "interpolate_velocity",
    "project_pressure",
    "eval_field",
    "export_field_csv",
    "export_velocity_samples",
    "BoundaryTraceError",
]


class SpaceKind(str, Enum):
    BDM1_VELOCITY = "bdm1"
    P0_PRESSURE = "p0"
    P2_STREAM = "p2"


class BoundaryTraceError(ValueError):
    """A velocity to be interpolated has a nonzero normal trace on the boundary."""


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class FeSpace:
    """DOF bookkeeping and local bases for one space of the trio.

    Attributes
    ----------
    dofs : (T, nloc) int array
        Element to global DOF map; eliminated boundary DOFs are ``-1``.
    dim : int
    eliminated : int array
        Indices, in the unconstrained numbering, of the boundary DOFs that
        were removed.
    signs : (T, 3) int array or None
        Orientation of the global edge normal relative to the outward normal
        (velocity space only).
    """

    def __init__(self, mesh, kind, dofs, dim, eliminated, signs=None):
        self.mesh = mesh
        self.kind = SpaceKind(kind)
        self.dofs = _frozen(dofs)
        self.dim = int(dim)
        self.eliminated = _frozen(eliminated)
        self.signs = None if signs is None else _frozen(signs)
        self.basis_value = None
        self.basis_grad = None
        self.edge_dof = None

    @property
    def n_local(self):
        return self.dofs.shape[1]

    def __repr__(self):
        return f"FeSpace({self.kind.value}, dim={self.dim}, mesh={self.mesh!r})"


class Field:
    """Coefficient vector attached to an :class:`FeSpace`."""

    def __init__(self, space, coeffs):
        coeffs = np.array(coeffs, dtype=float)
        if coeffs.shape != (space.dim,):
            raise ValueError(f"expected {space.dim} coefficients, got shape {coeffs.shape}")
        coeffs.flags.writeable = False
        self.space = space
        self.coeffs = coeffs

    def local_coeffs(self):
        """(T, nloc) local coefficients, zero at eliminated DOFs."""
        d = self.space.dofs
        padded = np.append(self.coeffs, 0.0)
        return padded[np.where(d >= 0, d, len(self.coeffs))]

    def broken(self):
        """Per-element affine data ``(value at centroid (T, 2), gradient (T, 2, 2))``.

        Velocity fields only.  ``gradient[t, a, b] = d u_a / d x_b``.
        """
        sp = self.space
        if sp.kind is not SpaceKind.BDM1_VELOCITY:
            raise TypeError("broken() is defined for velocity fields")
        c = self.local_coeffs()
        return (
            np.einsum("tj,tja->ta", c, sp.basis_value),
            np.einsum("tj,tjab->tab", c, sp.basis_grad),
        )

    def divergence(self):
        """Elementwise (constant) divergence of a velocity field."""
        _, g = self.broken()
        return g[:, 0, 0] + g[:, 1, 1]

    def __add__(self, other):
        return Field(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return Field(self.space, self.coeffs - other.coeffs)

    def __mul__(self, c):
        return Field(self.space, c * self.coeffs)

    __rmul__ = __mul__


# -- construction -------------------------------------------------------
def _renumber(keep):
    idx = -np.ones(len(keep), dtype=np.int64)
    idx[keep] = np.arange(int(keep.sum()))
    return idx


def _bdm1(mesh):
    ne = mesh.n_edges
    interior = ~mesh.boundary_edge
    edge_dof = _renumber(interior)
    full = np.column_stack([2 * np.arange(ne), 2 * np.arange(ne) + 1])
    glob = np.where(interior[:, None], np.column_stack([2 * edge_dof, 2 * edge_dof + 1]), -1)
    dofs = glob[mesh.tri_edges].reshape(mesh.n_triangles, 6)
    sp = FeSpace(
        mesh,
        SpaceKind.BDM1_VELOCITY,
        dofs,
        2 * int(interior.sum()),
        full[~interior].ravel(),
        signs=mesh.edge_sign,
    )
    sp.edge_dof = _frozen(edge_dof)
    val, grad = _bdm1_basis(mesh)
    sp.basis_value = _frozen(val)
    sp.basis_grad = _frozen(grad)
    return sp


def _bdm1_basis(mesh):
    """Invert the DOF functionals on the affine monomials of each triangle."""
    nt = mesh.n_triangles
    c = mesh.centroids
    h = mesh.h_k
    P = mesh.vertices[mesh.edges[mesh.tri_edges, 0]]  # (T, 3, 2)
    Q = mesh.vertices[mesh.edges[mesh.tri_edges, 1]]
    n = mesh.edge_normal[mesh.tri_edges]  # (T, 3, 2)

    def mono_flux(X):
        # normal flux of the six monomials at points X (T, 3, 2) -> (T, 3, 6)
        xi = (X - c[:, None, :]) / h[:, None, None]
        nx, ny = n[..., 0], n[..., 1]
        return np.stack([nx, ny, xi[..., 0] * nx, xi[..., 1] * nx, xi[..., 0] * ny, xi[..., 1] * ny], axis=-1)

    f0 = mono_flux(P)
    f1 = mono_flux(Q)
    D = np.empty((nt, 6, 6))
    D[:, 0::2, :] = 0.5 * (f0 + f1)
    D[:, 1::2, :] = 0.5 * (f1 - f0)
    C = np.linalg.inv(D)  # column j: monomial coefficients of basis j
    val = np.stack([C[:, 0, :], C[:, 1, :]], axis=-1)  # (T, 6, 2)
    grad = np.empty((nt, 6, 2, 2))
    grad[:, :, 0, 0] = C[:, 2, :]
    grad[:, :, 0, 1] = C[:, 3, :]
    grad[:, :, 1, 0] = C[:, 4, :]
    grad[:, :, 1, 1] = C[:, 5, :]
    grad /= h[:, None, None, None]
    return val, grad


def _p2(mesh):
    nv = mesh.n_vertices
    vkeep = ~mesh.boundary_vertex
    ekeep = ~mesh.boundary_edge
    vid = _renumber(vkeep)
    eid = _renumber(ekeep)
    nvi = int(vkeep.sum())
    eid = np.where(eid >= 0, eid + nvi, -1)
    dofs = np.column_stack([vid[mesh.triangles], eid[mesh.tri_edges]])
    eliminated = np.concatenate([np.flatnonzero(~vkeep), nv + np.flatnonzero(~ekeep)])
    sp = FeSpace(mesh, SpaceKind.P2_STREAM, dofs, nvi + int(ekeep.sum()), eliminated)
    sp.vertex_dof = _frozen(vid)
    sp.edge_dof = _frozen(eid)
    return sp


def _p0(mesh):
    nt = mesh.n_triangles
    return FeSpace(mesh, SpaceKind.P0_PRESSURE, np.arange(nt)[:, None], nt, np.zeros(0, dtype=np.int64))


def build_space(mesh, kind):
    """Build one space of the trio on ``mesh``."""
    kind = SpaceKind(kind)
    if kind is SpaceKind.BDM1_VELOCITY:
        return _bdm1(mesh)
    if kind is SpaceKind.P2_STREAM:
        return _p2(mesh)
    return _p0(mesh)


def build_trio(mesh):
    """Return ``(Nh, Vh, Qh)``: stream, velocity and pressure spaces."""
    return (
        build_space(mesh, SpaceKind.P2_STREAM),
        build_space(mesh, SpaceKind.BDM1_VELOCITY),
        build_space(mesh, SpaceKind.P0_PRESSURE),
    )


# -- P2 Lagrange basis --------------------------------------------------
def p2_shape(ref_points):
    """P2 shape functions at reference points: (nq, 6), vertex then edge order."""
    x = np.asarray(ref_points, dtype=float)
    lam = np.column_stack([1.0 - x[:, 0] - x[:, 1], x[:, 0], x[:, 1]])
    out = np.empty((len(x), 6))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        out[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        out[:, 3 + i] = 4.0 * lam[:, j] * lam[:, k]
    return out


def p2_shape_grad(mesh, ref_points):
    """Physical gradients of the P2 shape functions: (T, nq, 6, 2)."""
    x = np.asarray(ref_points, dtype=float)
    lam = np.column_stack([1.0 - x[:, 0] - x[:, 1], x[:, 0], x[:, 1]])
    _, J = mesh.jacobians()
    Jinv = np.linalg.inv(J)
    dref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    glam = np.einsum("lr,tri->tli", dref, Jinv)  # (T, 3, 2) grad of barycentrics
    out = np.empty((mesh.n_triangles, len(x), 6, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        out[:, :, i, :] = (4.0 * lam[:, i] - 1.0)[None, :, None] * glam[:, None, i, :]
        out[:, :, 3 + i, :] = 4.0 * (
            lam[:, k][None, :, None] * glam[:, None, j, :] + lam[:, j][None, :, None] * glam[:, None, k, :]
        )
    return out


# -- evaluation ---------------------------------------------------------
def eval_field(field, element, ref_points):
    """Evaluate a field inside one element at reference points (nq, 2).

    Returns (nq, 2) for velocity fields and (nq,) for scalar fields.
    """
    sp = field.space
    mesh = sp.mesh
    if not 0 <= element < mesh.n_triangles:
        raise IndexError(f"element {element} out of range [0, {mesh.n_triangles})")
    ref_points = np.atleast_2d(np.asarray(ref_points, dtype=float))
    coeffs = field.local_coeffs()[element]
    if sp.kind is SpaceKind.P0_PRESSURE:
        return np.full(len(ref_points), coeffs[0])
    if sp.kind is SpaceKind.P2_STREAM:
        return p2_shape(ref_points) @ coeffs
    v0, J = mesh.jacobians()
    x = v0[element] + ref_points @ J[element].T
    d = x - mesh.centroids[element]
    val = coeffs @ sp.basis_value[element]
    grad = np.einsum("j,jab->ab", coeffs, sp.basis_grad[element])
    return val + d @ grad.T


def velocity_at(space, local_coeffs, elements, points):
    """Vectorized velocity evaluation at physical ``points`` (n, nq, 2) in ``elements`` (n,)."""
    val = np.einsum("nj,nja->na", local_coeffs, space.basis_value[elements])
    grad = np.einsum("nj,njab->nab", local_coeffs, space.basis_grad[elements])
    d = points - space.mesh.centroids[elements][:, None, :]
    return val[:, None, :] + np.einsum("nab,nqb->nqa", grad, d)


# -- interpolation ------------------------------------------------------
def _edge_moments(mesh, u, npoints=4):
    rule = edge_rule(npoints)
    P = mesh.vertices[mesh.edges[:, 0]]
    Q = mesh.vertices[mesh.edges[:, 1]]
    X = P[:, None, :] + rule.points[None, :, None] * (Q - P)[:, None, :]
    vals = np.asarray(u(X[..., 0], X[..., 1]), dtype=float)  # (2, E, nq)
    flux = vals[0] * mesh.edge_normal[:, 0, None] + vals[1] * mesh.edge_normal[:, 1, None]
    l0 = flux @ rule.weights
    l1 = 3.0 * flux @ (rule.weights * (2.0 * rule.points - 1.0))
    return l0, l1


def interpolate_velocity(space, u, tol=1e-10, check=True):
    """Canonical BDM1 interpolant of ``u(x, y) -> (ux, uy)``.

    Raises :class:`BoundaryTraceError` if ``u . n`` does not vanish on the
    boundary (relative to the size of the interior moments).  With
    ``check=False`` the boundary moments are silently dropped.
    """
    if space.kind is not SpaceKind.BDM1_VELOCITY:
        raise TypeError("velocity interpolation needs a BDM1 space")
    mesh = space.mesh
    l0, l1 = _edge_moments(mesh, u)
    b = mesh.boundary_edge
    scale = max(1.0, float(np.abs(np.concatenate([l0, l1])).max(initial=0.0)))
    bmax = float(np.abs(np.concatenate([l0[b], l1[b]])).max(initial=0.0))
    if check and bmax > tol * scale:
        raise BoundaryTraceError(f"normal trace on the boundary is {bmax:.3e}, expected 0")
    coeffs = np.empty(space.dim)
    idx = space.edge_dof[~b]
    coeffs[2 * idx] = l0[~b]
    coeffs[2 * idx + 1] = l1[~b]
    return Field(space, coeffs)


def element_means(mesh, f, degree=6):
    """Mean of the scalar ``f(x, y)`` over every triangle."""
    rule = triangle_rule(degree)
    X = mesh.to_physical(rule.points)
    vals = np.asarray(f(X[..., 0], X[..., 1]), dtype=float)
    return 2.0 * (vals @ rule.weights)


def project_pressure(space, p, degree=6):
    """L2 projection onto piecewise constants, shifted to zero mean."""
    if space.kind is not SpaceKind.P0_PRESSURE:
        raise TypeError("pressure projection needs a P0 space")
    mesh = space.mesh
    means = element_means(mesh, p, degree)
    means = means - np.dot(means, mesh.areas) / mesh.areas.sum()
    return Field(space, means)


# -- export -------------------------------------------------------------
def export_field_csv(field, path):
    """Write ``dof_index,value`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dof_index", "value"])
        for i, v in enumerate(field.coeffs.tolist()):
            w.writerow([i, repr(v)])


def export_velocity_samples(field, path):
    """Write per-element vertex samples ``element,x,y,ux,uy`` for plotting."""
    sp = field.space
    mesh = sp.mesh
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    X = mesh.to_physical(corners)
    U = velocity_at(sp, field.local_coeffs(), np.arange(mesh.n_triangles), X)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "x", "y", "ux", "uy"])
        for t in range(mesh.n_triangles):
            for q in range(3):
                w.writerow([t, repr(X[t, q, 0]), repr(X[t, q, 1]), repr(U[t, q, 0]), repr(U[t, q, 1])])
