"""Reduced stream-function system, auxiliary-space preconditioner and PCG.

The Stokes problem restricted to divergence-free velocities ``U = P Psi`` is

    P^T A P Psi = P^T F

with ``P = P_curl``.  It is preconditioned by

    B = Aq^-1 P^T M A^-1 M P Aq^-1,    Aq = P^T M P,

i.e. the velocity space itself serves as the auxiliary space and
``Aq^-1 P^T M`` is the M-orthogonal projection onto ``curl N_h``.
"""
import json
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .assembly import (
    AssemblyConfig,
    assemble_a,
    assemble_aq,
    assemble_bdiv,
    assemble_mass,
    assemble_pcurl,
    assemble_rhs,
)
from .loads import Load
from .spaces import Field, build_trio, interpolate_velocity

__all__ = [
    "SolverError",
    "PcgReport",
    "StokesSolution",
    "StokesSystem",
    "ReducedOperator",
    "AuxiliaryPreconditioner",
    "factorize",
    "pcg",
    "recover_pressure",
    "direct_saddle_solve",
    "solve_stokes",
]


# beyond this the LU of A no longer fits comfortably in a few GB
DIRECT_LIMIT = 250_000


class SolverError(RuntimeError):
    """Factorization failure or non-convergence of an inner solve."""


def factorize(A, symmetric=True):
    """Sparse LU; ``symmetric=True`` uses the symmetric-pattern ordering for SPD input,
    otherwise COLAMD with partial pivoting."""
    A = sps.csc_matrix(A)
    try:
        if symmetric:
            return spla.splu(
                A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
            )
        # saddle-point matrices have zero diagonal blocks; a column ordering
        # keeps the pivoting fill small
        return spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc


# -- PCG ----------------------------------------------------------------
@dataclass
class PcgReport:
    n_it: int
    residuals: list
    rho: float
    converged: bool
    ritz_min: float = float("nan")
    ritz_max: float = float("nan")
    level: Optional[int] = None

    @property
    def condition_estimate(self):
        return self.ritz_max / self.ritz_min

    def to_dict(self):
        return {
            "level": self.level,
            "n_it": self.n_it,
            "rho": _json_float(self.rho),
            "residuals": [float(r) for r in self.residuals],
            "ritz_min": _json_float(self.ritz_min),
            "ritz_max": _json_float(self.ritz_max),
            "converged": self.converged,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(
            n_it=int(d["n_it"]),
            residuals=list(d.get("residuals", [])),
            rho=_from_json_float(d["rho"]),
            converged=bool(d.get("converged", True)),
            ritz_min=_from_json_float(d.get("ritz_min")),
            ritz_max=_from_json_float(d.get("ritz_max")),
            level=d.get("level"),
        )


def _json_float(x):
    return None if x is None or not np.isfinite(x) else float(x)


def _from_json_float(x):
    return float("nan") if x is None else float(x)


def _as_apply(op):
    if op is None:
        return lambda r: r.copy()
    if callable(op) and not hasattr(op, "dot"):
        return op
    return lambda x: op @ x


def _ritz(alphas, betas):
    k = len(alphas)
    if k == 0:
        return float("nan"), float("nan")
    diag = np.empty(k)
    off = np.empty(max(k - 1, 0))
    diag[0] = 1.0 / alphas[0]
    for i in range(1, k):
        diag[i] = 1.0 / alphas[i] + betas[i - 1] / alphas[i - 1]
        off[i - 1] = np.sqrt(betas[i - 1]) / alphas[i - 1]
    ev = scipy.linalg.eigvalsh_tridiagonal(diag, off) if k > 1 else diag
    return float(ev.min()), float(ev.max())


def pcg(A, b, B=None, tol=1e-6, maxit=200, x0=None, project=None):
    """Preconditioned conjugate gradients.

    Stops when ``||r_k||_2 / ||r_0||_2 < tol``.  ``A`` and ``B`` may be sparse
    matrices, objects with ``@`` or plain callables.  ``project``, if given, is
    applied to every preconditioned residual (used to stay orthogonal to a
    known null space).  Non-convergence is reported, not raised.

    Returns
    -------
    x : ndarray
    report : PcgReport
        ``ritz_min``/``ritz_max`` are the extreme eigenvalues of the Lanczos
        tridiagonal matrix built from the CG coefficients, i.e. estimates of
        the spectrum of ``B A``.
    """
    apply_a = _as_apply(A)
    apply_b = _as_apply(B)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_a(x) if x0 is not None else b.copy()
    r0 = float(np.linalg.norm(r))
    residuals = [r0]
    if r0 == 0.0:
        return x, PcgReport(0, residuals, float("nan"), True)

    z = apply_b(r)
    if project is not None:
        z = project(z)
    d = z.copy()
    rz = float(r @ z)
    alphas, betas = [], []
    converged = False
    k = 0
    while k < maxit:
        Ad = apply_a(d)
        dAd = float(d @ Ad)
        if dAd <= 0.0:
            raise SolverError("operator is not positive definite along the search direction")
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        k += 1
        alphas.append(alpha)
        rn = float(np.linalg.norm(r))
        residuals.append(rn)
        if rn < tol * r0:
            converged = True
            break
        z = apply_b(r)
        if project is not None:
            z = project(z)
        rz_new = float(r @ z)
        beta = rz_new / rz
        betas.append(beta)
        d = z + beta * d
        rz = rz_new

    rho = (residuals[-1] / r0) ** (1.0 / k)
    lo, hi = _ritz(alphas, betas)
    return x, PcgReport(k, residuals, rho, converged, lo, hi)


# -- operators ------------------------------------------------------------
class ReducedOperator:
    """``Psi -> P^T A P Psi`` applied matrix-free."""

    def __init__(self, A, P):
        if A.shape[0] != A.shape[1] or A.shape[1] != P.shape[0]:
            raise ValueError(f"dimension mismatch: A {A.shape}, P_curl {P.shape}")
        self.A = A
        self.P = P
        self.PT = P.T.tocsr()
        self.shape = (P.shape[1], P.shape[1])

    def __call__(self, psi):
        return self.PT @ (self.A @ (self.P @ psi))

    def __matmul__(self, psi):
        return self(psi)

    def to_matrix(self):
        return (self.PT @ self.A @ self.P).tocsr()


class AuxiliaryPreconditioner:
    """``r -> Aq^-1 P^T M A^-1 M P Aq^-1 r`` with cached direct inner solves.

    ``inner_solves`` counts factorization solves (three per application).
    """

    def __init__(self, Aq_solve, A_solve, M, P):
        self.Aq_solve = Aq_solve
        self.A_solve = A_solve
        self.M = M
        self.P = P
        self.PT = P.T.tocsr()
        self.inner_solves = 0

    def __call__(self, r):
        y = self.Aq_solve(r)
        y = self.M @ (self.P @ y)
        y = self.A_solve(y)
        y = self.PT @ (self.M @ y)
        self.inner_solves += 3
        return self.Aq_solve(y)


class StokesSystem:
    """Spaces, matrices and cached factorizations for one mesh."""

    def __init__(self, mesh, cfg=AssemblyConfig()):
        self.mesh = mesh
        self.cfg = cfg
        self.Nh, self.Vh, self.Qh = build_trio(mesh)
        self.A = assemble_a(self.Vh, cfg)
        self.B = assemble_bdiv(self.Vh, self.Qh)
        self.M = assemble_mass(self.Vh, cfg.triangle_degree)
        self.P = assemble_pcurl(self.Nh, self.Vh)
        self.Aq, _ = assemble_aq(self.Nh, self.Vh, self.M, self.P)
        self._lock = threading.Lock()
        self._factors = {}

    def factor(self, name):
        with self._lock:
            if name not in self._factors:
                self._factors[name] = factorize(getattr(self, name))
            return self._factors[name]

    def solve_with(self, name):
        return self.factor(name).solve

    @property
    def reduced(self):
        return ReducedOperator(self.A, self.P)

    def amg(self):
        """Smoothed-aggregation V-cycle approximating ``A^-1``.

        Near-null-space candidates are the interpolants of the two translations
        and the rotation.
        """
        import pyamg

        with self._lock:
            if "amg" not in self._factors:
                cands = [
                    interpolate_velocity(self.Vh, u, check=False).coeffs
                    for u in (
                        lambda x, y: np.array([np.ones_like(x), np.zeros_like(x)]),
                        lambda x, y: np.array([np.zeros_like(x), np.ones_like(x)]),
                        lambda x, y: np.array([-y, x]),
                    )
                ]
                ml = pyamg.smoothed_aggregation_solver(
                    self.A,
                    B=np.column_stack(cands),
                    symmetry="symmetric",
                    strength=("symmetric", {"theta": 0.0}),
                    smooth=("energy", {}),
                    max_coarse=500,
                )
                self._factors["amg"] = ml.aspreconditioner(cycle="V")
            return self._factors["amg"]

    def preconditioner(self, inner="direct"):
        """Auxiliary-space preconditioner.

        ``inner`` selects the action of ``A^-1``: ``"direct"`` (sparse LU) or
        ``"amg"`` (one smoothed-aggregation V-cycle).  ``"auto"`` uses the
        direct solve up to ``DIRECT_LIMIT`` velocity DOFs.
        """
        if inner == "auto":
            inner = "direct" if self.Vh.dim <= DIRECT_LIMIT else "amg"
        if inner == "direct":
            a_solve = self.solve_with("A")
        elif inner == "amg":
            amg = self.amg()
            a_solve = lambda r: amg @ r  # noqa: E731
        else:
            raise ValueError(f"unknown inner solver {inner!r}")
        return AuxiliaryPreconditioner(self.solve_with("Aq"), a_solve, self.M, self.P)

    def rhs(self, load):
        grad = load.grad_u if load.traction else None
        return assemble_rhs(
            self.Vh, load.f, grad, self.cfg.nu, self.cfg.triangle_degree, self.cfg.edge_points
        )


# -- pressure -------------------------------------------------------------
def recover_pressure(A, B, F, U, areas=None, tol=1e-12, maxit=20000):
    """Pressure from the velocity residual.

    ``r = F - A U`` lies in ``range(B^T)``; solve ``B B^T p = B r`` by Jacobi
    PCG restricted to the complement of constants, then shift ``p`` to zero
    mean (area-weighted when ``areas`` is given).
    """
    r = F - A @ U
    rhs = B @ r
    n = B.shape[0]
    if areas is None:
        areas = np.ones(n)
    BBt = (B @ B.T).tocsr()
    dinv = 1.0 / BBt.diagonal()

    def project(z):
        return z - z.mean()

    if np.linalg.norm(rhs) == 0.0:
        p = np.zeros(n)
    else:
        p, rep = pcg(BBt, project(rhs), lambda v: dinv * v, tol=tol, maxit=maxit, project=project)
        if not rep.converged:
            raise SolverError(f"pressure recovery did not converge in {maxit} iterations")
    return p - np.dot(p, areas) / areas.sum()


def direct_saddle_solve(A, B, F, areas=None):
    """Direct solve of ``[[A, B^T], [B, 0]]`` bordered by the zero-mean constraint on p."""
    nv = A.shape[0]
    nq = B.shape[0]
    if areas is None:
        areas = np.ones(nq)
    c = sps.csr_matrix(np.asarray(areas, dtype=float)[None, :])
    K = sps.bmat([[A, B.T, None], [B, None, c.T], [None, c, None]], format="csc")
    rhs = np.concatenate([F, np.zeros(nq + 1)])
    lu = factorize(K, symmetric=False)
    sol = lu.solve(rhs)
    return sol[:nv], sol[nv : nv + nq]


# -- full pipeline -------------------------------------------------------
@dataclass
class StokesSolution:
    velocity: Field
    pressure: Field
    stream: Field
    report: PcgReport
    system: "StokesSystem" = field(repr=False, default=None)

    def max_divergence(self):
        return float(np.abs(self.velocity.divergence()).max())


def solve_stokes(
    mesh, cfg=AssemblyConfig(), load=None, tol=1e-6, maxit=200, system=None, pressure_tol=1e-12, inner="direct"
):
    """Solve the DG Stokes problem on ``mesh`` through the reduced system.

    Velocity is ``P_curl Psi`` and hence exactly divergence free; pressure is
    recovered afterwards.
    """
    if load is None:
        raise ValueError("a load is required")
    if not isinstance(load, Load):
        raise TypeError("load must be a Load")
    system = system or StokesSystem(mesh, cfg)
    F = system.rhs(load)
    b = system.P.T @ F
    psi, report = pcg(system.reduced, b, system.preconditioner(inner), tol=tol, maxit=maxit)
    U = system.P @ psi
    p = recover_pressure(system.A, system.B, F, U, system.mesh.areas, tol=pressure_tol)
    return StokesSolution(
        velocity=Field(system.Vh, U),
        pressure=Field(system.Qh, p),
        stream=Field(system.Nh, psi),
        report=report,
        system=system,
    )
