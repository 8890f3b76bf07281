"""Quadrature rules on the reference triangle and the unit interval."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class TriangleRule:
    points: np.ndarray  # (nq, 2) in the reference triangle {x, y >= 0, x + y <= 1}
    weights: np.ndarray  # (nq,), sum = 1/2
    degree: int


@dataclass(frozen=True)
class EdgeRule:
    points: np.ndarray  # (nq,) parameters in [0, 1]
    weights: np.ndarray  # (nq,), sum = 1
    degree: int


@lru_cache(maxsize=None)
def triangle_rule(degree=6):
    """Collapsed Gauss-Legendre rule exact for polynomials of total degree ``degree``.

    The Duffy map (u, v) -> (u, v (1 - u)) adds one power of ``u`` through the
    Jacobian, so ``n`` points per direction integrate degree ``2n - 2`` exactly.
    """
    n = (degree + 3) // 2
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(g, g, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    x = u.ravel()
    y = (v * (1.0 - u)).ravel()
    weights = (wu * wv * (1.0 - u)).ravel()
    pts = np.column_stack([x, y])
    for arr in (pts, weights):
        arr.flags.writeable = False
    return TriangleRule(pts, weights, 2 * n - 2)


@lru_cache(maxsize=None)
def edge_rule(npoints=4):
    """Gauss-Legendre rule on [0, 1], exact to degree ``2 * npoints - 1``."""
    g, w = np.polynomial.legendre.leggauss(npoints)
    pts = 0.5 * (g + 1.0)
    weights = 0.5 * w
    pts.flags.writeable = False
    weights.flags.writeable = False
    return EdgeRule(pts, weights, 2 * npoints - 1)


def quad_rules(triangle_degree=6, edge_points=4):
    """Return the (triangle, edge) rule pair used by the assembly routines."""
    return triangle_rule(triangle_degree), edge_rule(edge_points)
