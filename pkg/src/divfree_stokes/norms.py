"""Norms of broken (elementwise affine) velocity fields and cross-level transfer.

A BDM1 field is represented per element by its value at the centroid and its
constant gradient.  Coarse fields move to nested fine meshes exactly through
the refinement lineage: the gradient is inherited from the parent and the
centroid value is re-evaluated at the child centroid.
"""
import numpy as np

from .quadrature import edge_rule, triangle_rule

__all__ = [
    "BrokenField",
    "dg_norm",
    "l2_norm",
    "jump_seminorm",
    "prolong",
    "exact_errors",
    "pressure_l2",
]


class BrokenField:
    """Elementwise affine vector field ``u(x) = value[K] + grad[K] (x - c_K)``."""

    def __init__(self, mesh, value, grad):
        self.mesh = mesh
        self.value = np.asarray(value, dtype=float)
        self.grad = np.asarray(grad, dtype=float)

    @classmethod
    def from_field(cls, field):
        val, grad = field.broken()
        return cls(field.space.mesh, val, grad)

    def __sub__(self, other):
        if other.mesh is not self.mesh:
            raise ValueError("fields live on different meshes; prolong first")
        return BrokenField(self.mesh, self.value - other.value, self.grad - other.grad)

    def __mul__(self, c):
        return BrokenField(self.mesh, c * self.value, c * self.grad)

    __rmul__ = __mul__

    def at(self, elements, points):
        """Values at physical ``points`` (n, nq, 2) inside ``elements`` (n,)."""
        d = points - self.mesh.centroids[elements][:, None, :]
        return self.value[elements][:, None, :] + np.einsum("nab,nqb->nqa", self.grad[elements], d)


def _as_broken(u):
    return u if isinstance(u, BrokenField) else BrokenField.from_field(u)


def prolong(u, fine_mesh):
    """Evaluate a field on a mesh obtained from ``u.mesh`` by nested refinement.

    ``fine_mesh`` must descend from ``u.mesh`` through meshes whose ``parent``
    arrays are set; the chain is found by walking ``parent_mesh`` links or,
    for one level, directly.
    """
    u = _as_broken(u)
    chain = []
    m = fine_mesh
    while m is not u.mesh:
        if m.parent is None or getattr(m, "parent_mesh", None) is None:
            raise ValueError("meshes are not nested (no refinement lineage)")
        chain.append(m)
        m = m.parent_mesh
    val, grad = u.value, u.grad
    coarse = u.mesh
    for fine in reversed(chain):
        par = fine.parent
        grad = grad[par]
        val = val[par] + np.einsum("tab,tb->ta", grad, fine.centroids - coarse.centroids[par])
        coarse = fine
    return BrokenField(fine_mesh, val, grad)


def _jump_sq(u, edge_points=4):
    """Per interior edge ``h_e^-1 ||[[u_t]]||_{0,e}^2`` with ``|t (.) n|^2 = 1/2``."""
    mesh = u.mesh
    e = mesh.interior_edges
    rule = edge_rule(edge_points)
    P = mesh.vertices[mesh.edges[e, 0]]
    Q = mesh.vertices[mesh.edges[e, 1]]
    X = P[:, None, :] + rule.points[None, :, None] * (Q - P)[:, None, :]
    d = u.at(mesh.edge_tris[e, 0], X) - u.at(mesh.edge_tris[e, 1], X)
    dt = np.einsum("nqa,na->nq", d, mesh.edge_tangent[e])
    return 0.5 * (dt**2 @ rule.weights)  # h_e * w / h_e


def jump_seminorm(u, edge_points=4):
    """``(sum_{interior e} h_e^-1 ||[[u_t]]||_{0,e}^2)^(1/2)``."""
    return float(np.sqrt(_jump_sq(_as_broken(u), edge_points).sum()))


def dg_norm(u, nu=0.5, edge_points=4):
    """``(2 nu |u|_{1,h}^2 + 2 nu |[[u_t]]|_*^2)^(1/2)``, interior edges only."""
    u = _as_broken(u)
    grad_sq = float(np.einsum("t,tab,tab->", u.mesh.areas, u.grad, u.grad))
    return float(np.sqrt(2.0 * nu * (grad_sq + _jump_sq(u, edge_points).sum())))


def l2_norm(u, degree=6):
    u = _as_broken(u)
    mesh = u.mesh
    rule = triangle_rule(degree)
    X = mesh.to_physical(rule.points)
    vals = u.at(np.arange(mesh.n_triangles), X)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    return float(np.sqrt(np.einsum("tqa,tqa,tq->", vals, vals, w)))


def exact_errors(field, u, grad_u, nu=0.5, degree=8):
    """``(||u - u_h||_0, ||u - u_h||_DG)`` for a smooth exact ``u``.

    The exact velocity is continuous, so the jump part is that of ``u_h``.
    """
    uh = _as_broken(field)
    mesh = uh.mesh
    rule = triangle_rule(degree)
    X = mesh.to_physical(rule.points)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    ue = np.moveaxis(np.asarray(u(X[..., 0], X[..., 1]), dtype=float), 0, -1)
    diff = ue - uh.at(np.arange(mesh.n_triangles), X)
    ge = np.moveaxis(np.asarray(grad_u(X[..., 0], X[..., 1]), dtype=float), (0, 1), (-2, -1))
    gdiff = ge - uh.grad[:, None, :, :]
    l2 = np.sqrt(np.einsum("tqa,tqa,tq->", diff, diff, w))
    h1 = np.einsum("tqab,tqab,tq->", gdiff, gdiff, w)
    dg = np.sqrt(2.0 * nu * (h1 + _jump_sq(uh).sum()))
    return float(l2), float(dg)


def pressure_l2(mesh, ph, p=None, degree=8):
    """``||p - p_h||_0`` for piecewise-constant ``ph``; ``p=None`` gives ``||p_h||_0``."""
    ph = np.asarray(ph, dtype=float)
    if p is None:
        return float(np.sqrt(np.dot(mesh.areas, ph**2)))
    rule = triangle_rule(degree)
    X = mesh.to_physical(rule.points)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    diff = np.asarray(p(X[..., 0], X[..., 1]), dtype=float) - ph[:, None]
    return float(np.sqrt(np.einsum("tq,tq,tq->", diff, diff, w)))
