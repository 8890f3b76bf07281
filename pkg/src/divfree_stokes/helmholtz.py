"""Discrete Helmholtz decomposition ``v_h = G_h q_h + curl phi_h``.

The gradient part comes from the mixed Poisson problem

    (sigma, tau) - (q, div tau) = 0,     (div sigma, s) = (div v, s),

whose solution ``sigma`` is M-orthogonal to every divergence-free field.
The divergence-free part is ``w = v - sigma`` (so that the projector is the
identity on ``curl N_h``), and ``sigma = G_h(-q)``.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .norms import dg_norm
from .solver import SolverError, factorize
from .spaces import Field

__all__ = ["HelmholtzSplit", "Helmholtz", "mixed_poisson", "split", "project_divfree", "stability_ratio"]


@dataclass(frozen=True)
class HelmholtzSplit:
    """``v = gradient + divfree``; ``gradient = G_h potential``, ``divfree = curl stream``."""

    v: Field
    gradient: Field
    divfree: Field
    stream: Field
    potential: Field


class Helmholtz:
    """Helmholtz tools bound to one :class:`~divfree_stokes.solver.StokesSystem`.

    The bordered mixed matrix is factorized once and reused.
    """

    def __init__(self, system):
        self.system = system
        self._mixed = None

    def _mixed_lu(self):
        if self._mixed is None:
            s = self.system
            a = sps.csr_matrix(s.mesh.areas[None, :])
            K = sps.bmat([[s.M, s.B.T, None], [s.B, None, a.T], [None, a, None]], format="csc")
            self._mixed = factorize(K, symmetric=False)
        return self._mixed

    def mixed_poisson(self, v):
        """Return ``(sigma_h, q_h)`` with zero-mean ``q_h``."""
        s = self.system
        nv, nq = s.Vh.dim, s.Qh.dim
        rhs = np.concatenate([np.zeros(nv), s.B @ v.coeffs, [0.0]])
        sol = self._mixed_lu().solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SolverError("mixed Poisson solve produced non-finite values")
        return Field(s.Vh, sol[:nv]), Field(s.Qh, sol[nv : nv + nq])

    def project_divfree(self, v):
        """Stream coefficients ``Aq^-1 P^T M v`` of the M-orthogonal projection of ``v``."""
        s = self.system
        return s.solve_with("Aq")(s.P.T @ (s.M @ np.asarray(v, dtype=float)))

    def split(self, v):
        s = self.system
        sigma, q = self.mixed_poisson(v)
        w = Field(s.Vh, v.coeffs - sigma.coeffs)
        psi = self.project_divfree(w.coeffs)
        return HelmholtzSplit(v, sigma, w, Field(s.Nh, psi), Field(s.Qh, -q.coeffs))

    def stability_ratio(self, v, nu=None):
        """``||G_h q_h||_DG / ||div v_h||_0``."""
        s = self.system
        div = v.divergence()
        div_l2 = float(np.sqrt(np.dot(s.mesh.areas, div**2)))
        if div_l2 <= 1e-14 * max(1.0, float(np.abs(v.coeffs).max())):
            raise ValueError("stability ratio needs a field with nonzero divergence")
        sigma, _ = self.mixed_poisson(v)
        return dg_norm(sigma, s.cfg.nu if nu is None else nu) / div_l2


def mixed_poisson(system, v):
    return Helmholtz(system).mixed_poisson(v)


def split(system, v):
    return Helmholtz(system).split(v)


def project_divfree(system, v):
    return Helmholtz(system).project_divfree(v)


def stability_ratio(system, v, nu=None):
    return Helmholtz(system).stability_ratio(v, nu)
