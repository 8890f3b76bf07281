"""Assembly of the DG Stokes matrices and load vectors.

All matrices are returned as ``scipy.sparse.csr_matrix``; symmetric ones carry
``A.symmetric = True``.  Accumulation goes through COO -> CSR conversion in a
fixed order, so results are bitwise reproducible.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .quadrature import edge_rule, triangle_rule
from .spaces import SpaceKind, p2_shape_grad

__all__ = [
    "AssemblyConfig",
    "assemble_a",
    "assemble_dg_gram",
    "assemble_bdiv",
    "assemble_mass",
    "assemble_pcurl",
    "assemble_p2_stiffness",
    "assemble_aq",
    "assemble_rhs",
    "is_symmetric",
    "export_coo",
]

EDGE_CHUNK = 32768


@dataclass(frozen=True)
class AssemblyConfig:
    nu: float = 0.5
    alpha: float = 6.0
    triangle_degree: int = 6
    edge_points: int = 4

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("viscosity nu must be positive")
        if not self.alpha > 0:
            raise ValueError("penalty alpha must be positive")
        if self.triangle_degree < 6:
            raise ValueError("triangle quadrature degree must be at least 6")
        if self.edge_points < 2:
            raise ValueError("need at least two edge quadrature points")


def _check(space, kind):
    if space.kind is not kind:
        raise TypeError(f"expected a {kind.value} space, got {space.kind.value}")


def _same_mesh(*spaces):
    m = spaces[0].mesh
    if any(s.mesh is not m for s in spaces[1:]):
        raise ValueError("spaces live on different meshes")


def _scatter(rows, cols, vals, shape, symmetric=False):
    rows = rows.ravel()
    cols = cols.ravel()
    vals = vals.ravel()
    keep = (rows >= 0) & (cols >= 0)
    A = sps.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    if symmetric:
        A.symmetric = True
    return A


def _local_square(dofs, local, n, symmetric=True):
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1)
    cols = np.tile(dofs, (1, k))
    return _scatter(rows, cols, local, (n, n), symmetric)


def is_symmetric(A, rtol=1e-12):
    """``max|A - A^T| <= rtol * max|A|``."""
    d = abs(A - A.T)
    dmax = d.max() if d.nnz else 0.0
    amax = abs(A).max() if A.nnz else 0.0
    return dmax <= rtol * amax


def _strain(grad):
    return 0.5 * (grad + np.swapaxes(grad, -1, -2))


# -- interior-edge machinery ---------------------------------------------
def _edge_traces(Vh, edges, npoints):
    """Tangential jump traces and strain averages on interior ``edges``.

    Returns ``(dofs (n, 12), jump (n, 12, nq), avg (n, 12), ds (n, nq))`` where
    ``jump[:, i, q] * (t (.) n1)`` is the tangential jump tensor of basis ``i``
    at point ``q`` and ``avg[:, i] = t . {eps(phi_i)} n1``.
    """
    mesh = Vh.mesh
    rule = edge_rule(npoints)
    k1 = mesh.edge_tris[edges, 0]
    k2 = mesh.edge_tris[edges, 1]
    loc1 = np.argmax(mesh.tri_edges[k1] == edges[:, None], axis=1)
    n1 = mesh.edge_sign[k1, loc1][:, None] * mesh.edge_normal[edges]
    t = mesh.edge_tangent[edges]
    P = mesh.vertices[mesh.edges[edges, 0]]
    Q = mesh.vertices[mesh.edges[edges, 1]]
    X = P[:, None, :] + rule.points[None, :, None] * (Q - P)[:, None, :]

    jumps = []
    avgs = []
    for k, sgn in ((k1, 1.0), (k2, -1.0)):
        val = Vh.basis_value[k]  # (n, 6, 2)
        grad = Vh.basis_grad[k]  # (n, 6, 2, 2)
        d = X - mesh.centroids[k][:, None, :]
        tv = np.einsum("nja,na->nj", val, t)
        tg = np.einsum("njab,na->njb", grad, t)
        jumps.append(sgn * (tv[:, :, None] + np.einsum("njb,nqb->njq", tg, d)))
        avgs.append(0.5 * np.einsum("na,njab,nb->nj", t, _strain(grad), n1))
    dofs = np.concatenate([Vh.dofs[k1], Vh.dofs[k2]], axis=1)
    ds = mesh.h_e[edges][:, None] * rule.weights[None, :]
    return dofs, np.concatenate(jumps, axis=1), np.concatenate(avgs, axis=1), ds


def _edge_blocks(Vh, cfg, consistency, penalty):
    """Yield (dofs, local 12x12 blocks) over interior edges in chunks."""
    mesh = Vh.mesh
    interior = mesh.interior_edges
    for start in range(0, len(interior), EDGE_CHUNK):
        edges = interior[start : start + EDGE_CHUNK]
        dofs, jump, avg, ds = _edge_traces(Vh, edges, cfg.edge_points)
        # |t (.) n|_F^2 = 1/2
        jj = 0.5 * np.einsum("niq,njq,nq->nij", jump, jump, ds)
        local = (penalty / mesh.h_e[edges])[:, None, None] * jj
        if consistency:
            ij = np.einsum("niq,nq->ni", jump, ds)
            cross = ij[:, :, None] * avg[:, None, :]
            local -= consistency * (cross + np.swapaxes(cross, 1, 2))
        yield dofs, local


def _assemble_with_edges(Vh, vol_local, cfg, consistency, penalty):
    n = Vh.dim
    A = _local_square(Vh.dofs, vol_local, n)
    for dofs, local in _edge_blocks(Vh, cfg, consistency, penalty):
        A = A + _local_square(dofs, local, n)
    A = A.tocsr()
    A.sum_duplicates()
    A.sort_indices()
    A.symmetric = True
    return A


# -- public assembly routines ---------------------------------------------
def assemble_a(Vh, cfg=AssemblyConfig()):
    """DG form ``a_h`` on the constrained BDM1 space.

    ``2 nu [(eps u, eps v) - <{eps u} : [[v_t]]> - <[[u_t]] : {eps v}>]
    + 2 nu alpha sum_e h_e^-1 <[[u_t]] : [[v_t]]>`` over interior edges.
    """
    _check(Vh, SpaceKind.BDM1_VELOCITY)
    eps = _strain(Vh.basis_grad)
    vol = 2.0 * cfg.nu * Vh.mesh.areas[:, None, None] * np.einsum("tiab,tjab->tij", eps, eps)
    return _assemble_with_edges(Vh, vol, cfg, 2.0 * cfg.nu, 2.0 * cfg.nu * cfg.alpha)


def assemble_dg_gram(Vh, nu=0.5, edge_points=4):
    """Gram matrix of the DG norm: ``x^T G x = ||v||_DG^2``."""
    _check(Vh, SpaceKind.BDM1_VELOCITY)
    g = Vh.basis_grad
    vol = 2.0 * nu * Vh.mesh.areas[:, None, None] * np.einsum("tiab,tjab->tij", g, g)
    cfg = AssemblyConfig(nu=nu, edge_points=edge_points)
    return _assemble_with_edges(Vh, vol, cfg, 0.0, 2.0 * nu)


def assemble_bdiv(Vh, Qh):
    """``B[q, v] = -int q div(phi_v)``, shape ``(dim Qh, dim Vh)``."""
    _check(Vh, SpaceKind.BDM1_VELOCITY)
    _check(Qh, SpaceKind.P0_PRESSURE)
    _same_mesh(Vh, Qh)
    div = np.einsum("tjaa->tj", Vh.basis_grad)
    local = -Vh.mesh.areas[:, None] * div
    rows = np.repeat(Qh.dofs, 6, axis=1)
    return _scatter(rows, Vh.dofs, local, (Qh.dim, Vh.dim))


def _velocity_at_quad(Vh, degree):
    mesh = Vh.mesh
    rule = triangle_rule(degree)
    X = mesh.to_physical(rule.points)  # (T, nq, 2)
    d = X - mesh.centroids[:, None, :]
    phi = Vh.basis_value[:, None, :, :] + np.einsum("tjab,tqb->tqja", Vh.basis_grad, d)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    return X, phi, w


def assemble_mass(Vh, degree=6):
    """Velocity mass matrix ``M[i, j] = int phi_i . phi_j``."""
    _check(Vh, SpaceKind.BDM1_VELOCITY)
    _, phi, w = _velocity_at_quad(Vh, degree)
    local = np.einsum("tqia,tqja,tq->tij", phi, phi, w)
    return _local_square(Vh.dofs, local, Vh.dim)


def assemble_pcurl(Nh, Vh):
    """Columns are the BDM1 coefficients of ``curl psi_j = (d_y psi, -d_x psi)``.

    Along an edge ``curl psi . n = d psi / d t``, so the two moments of a P2
    function with end values ``a`` (lower vertex), ``b`` and midpoint value
    ``m`` are ``(b - a) / |e|`` and ``2 (a + b - 2 m) / |e|``.
    """
    _check(Nh, SpaceKind.P2_STREAM)
    _check(Vh, SpaceKind.BDM1_VELOCITY)
    _same_mesh(Nh, Vh)
    mesh = Vh.mesh
    e = mesh.interior_edges
    ie = Vh.edge_dof[e]
    inv_h = 1.0 / mesh.h_e[e]
    a = Nh.vertex_dof[mesh.edges[e, 0]]
    b = Nh.vertex_dof[mesh.edges[e, 1]]
    m = Nh.edge_dof[e]
    r0 = 2 * ie
    r1 = 2 * ie + 1
    rows = np.concatenate([r0, r0, r1, r1, r1])
    cols = np.concatenate([b, a, a, b, m])
    vals = np.concatenate([inv_h, -inv_h, 2 * inv_h, 2 * inv_h, -4 * inv_h])
    return _scatter(rows, cols, vals, (Vh.dim, Nh.dim))


def assemble_p2_stiffness(Nh, degree=6):
    """Dirichlet P2 stiffness ``int grad psi_i . grad psi_j``."""
    _check(Nh, SpaceKind.P2_STREAM)
    mesh = Nh.mesh
    rule = triangle_rule(degree)
    g = p2_shape_grad(mesh, rule.points)  # (T, nq, 6, 2)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    local = np.einsum("tqia,tqja,tq->tij", g, g, w)
    return _local_square(Nh.dofs, local, Nh.dim)


def assemble_aq(Nh, Vh, M=None, P=None):
    """Return ``(P^T M P, direct P2 stiffness)``; both represent ``A_q``."""
    if M is None:
        M = assemble_mass(Vh)
    if P is None:
        P = assemble_pcurl(Nh, Vh)
    if M.shape != (Vh.dim, Vh.dim) or P.shape != (Vh.dim, Nh.dim):
        raise ValueError("dimension mismatch between M, P_curl and the spaces")
    Aq = (P.T @ M @ P).tocsr()
    Aq.sum_duplicates()
    Aq.sort_indices()
    Aq.symmetric = True
    return Aq, assemble_p2_stiffness(Nh)


def assemble_rhs(Vh, f, traction_grad=None, nu=0.5, degree=6, edge_points=4):
    """Load vector ``F[i] = int f . phi_i``.

    ``f(x, y)`` returns the two force components.  When ``traction_grad(x, y)``
    (the 2x2 velocity gradient of an exact solution, shape (2, 2, ...)) is
    given, the boundary term ``sum_e int_e 2 nu (eps(u) n . t)(phi_i . t)``
    is added.  It accounts for an exact velocity that does not satisfy the
    natural condition ``(eps(u) n) . t = 0``.
    """
    _check(Vh, SpaceKind.BDM1_VELOCITY)
    mesh = Vh.mesh
    X, phi, w = _velocity_at_quad(Vh, degree)
    fv = np.asarray(f(X[..., 0], X[..., 1]), dtype=float)  # (2, T, nq)
    fv = np.broadcast_to(fv, (2,) + X.shape[:2])
    local = np.einsum("atq,tqja,tq->tj", fv, phi, w)
    if traction_grad is not None:
        rule = edge_rule(edge_points)
        be = np.flatnonzero(mesh.boundary_edge)
        k = mesh.edge_tris[be, 0]
        loc = np.argmax(mesh.tri_edges[k] == be[:, None], axis=1)
        n = mesh.edge_sign[k, loc][:, None] * mesh.edge_normal[be]
        t = mesh.edge_tangent[be]
        P = mesh.vertices[mesh.edges[be, 0]]
        Q = mesh.vertices[mesh.edges[be, 1]]
        Xe = P[:, None, :] + rule.points[None, :, None] * (Q - P)[:, None, :]
        G = np.asarray(traction_grad(Xe[..., 0], Xe[..., 1]), dtype=float)  # (2, 2, n, nq)
        eps = 0.5 * (G + np.swapaxes(G, 0, 1))
        tau = np.einsum("na,abnq,nb->nq", t, eps, n)
        d = Xe - mesh.centroids[k][:, None, :]
        phit = np.einsum("nja,na->nj", Vh.basis_value[k], t)[:, :, None] + np.einsum(
            "njab,na,nqb->njq", Vh.basis_grad[k], t, d
        )
        ds = mesh.h_e[be][:, None] * rule.weights[None, :]
        edge_local = 2.0 * nu * np.einsum("nq,njq,nq->nj", tau, phit, ds)
        local = np.concatenate([local, edge_local])
        dofs = np.concatenate([Vh.dofs, Vh.dofs[k]])
    else:
        dofs = Vh.dofs
    keep = dofs >= 0
    return np.bincount(dofs[keep], weights=local[keep], minlength=Vh.dim)


def export_coo(A, path):
    """Write ``row col value`` lines (0-based)."""
    C = A.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {A.shape[0]} {A.shape[1]} {C.nnz}\n")
        for r, c, v in zip(C.row.tolist(), C.col.tolist(), C.data.tolist()):
            fh.write(f"{r} {c} {v!r}\n")
