import json

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from divfree_stokes.assembly import AssemblyConfig
from divfree_stokes.loads import fixed_load, manufactured_load, zero_load
from divfree_stokes.mesh import coarse_square, generate_square, refine_levels
from divfree_stokes.solver import (
    PcgReport,
    ReducedOperator,
    SolverError,
    StokesSystem,
    direct_saddle_solve,
    factorize,
    pcg,
    recover_pressure,
    solve_stokes,
)


def _spd(n, rng, cond=100.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


def test_pcg_two_by_two():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    x, rep = pcg(A, b, tol=1e-14, maxit=10)
    assert rep.converged and rep.n_it <= 2
    assert np.allclose(x, np.linalg.solve(A, b), rtol=1e-14)
    # after the full Krylov space the Ritz values are the eigenvalues
    ev = np.linalg.eigvalsh(A)
    if rep.n_it == 2:
        assert rep.ritz_min == pytest.approx(ev[0], rel=1e-12)
        assert rep.ritz_max == pytest.approx(ev[1], rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(3, 25), seed=st.integers(0, 2**31))
def test_pcg_ritz_values_bracketed_by_spectrum(n, seed):
    rng = np.random.default_rng(seed)
    A = _spd(n, rng)
    D = np.diag(1.0 / np.diag(A))
    b = rng.standard_normal(n)
    x, rep = pcg(A, b, D, tol=1e-10, maxit=200)
    assert rep.converged
    assert np.linalg.norm(A @ x - b) <= 1e-9 * np.linalg.norm(b) * 1e3
    # eigenvalues of D A equal those of D^1/2 A D^1/2
    s = np.sqrt(np.diag(D))
    ev = np.linalg.eigvalsh(s[:, None] * A * s[None, :])
    assert ev[0] * (1 - 1e-8) <= rep.ritz_min <= rep.ritz_max <= ev[-1] * (1 + 1e-8)
    assert rep.residuals[0] == pytest.approx(np.linalg.norm(b))
    assert rep.rho == pytest.approx((rep.residuals[-1] / rep.residuals[0]) ** (1 / rep.n_it))


def test_pcg_zero_rhs_and_nonconvergence(rng):
    A = _spd(20, rng, 1e6)
    x, rep = pcg(A, np.zeros(20))
    assert rep.n_it == 0 and rep.converged and np.all(x == 0)
    _, rep = pcg(A, rng.standard_normal(20), tol=1e-14, maxit=3)
    assert not rep.converged and rep.n_it == 3


def test_pcg_detects_indefinite_operator():
    with pytest.raises(SolverError):
        pcg(np.diag([1.0, -1.0]), np.array([1.0, 1.0]))


def test_pcg_initial_guess(rng):
    A = _spd(10, rng)
    b = rng.standard_normal(10)
    xs = np.linalg.solve(A, b)
    x, rep = pcg(A, b, x0=xs + 1e-3, tol=1e-12, maxit=100)
    assert np.allclose(x, xs, atol=1e-10)


def test_factorize_singular_raises():
    with pytest.raises(SolverError):
        factorize(sps.csc_matrix((3, 3)))


def test_preconditioner_symmetric_positive(sys_coarse, rng):
    s = sys_coarse
    Bp = s.preconditioner("direct")
    n = s.Nh.dim
    X = rng.standard_normal((n, 2))
    before = Bp.inner_solves
    a = X[:, 1] @ Bp(X[:, 0])
    assert Bp.inner_solves == before + 3
    b = X[:, 0] @ Bp(X[:, 1])
    assert a == pytest.approx(b, rel=1e-10)
    assert X[:, 0] @ Bp(X[:, 0]) > 0


def test_preconditioner_unknown_inner(sys_coarse):
    with pytest.raises(ValueError):
        sys_coarse.preconditioner("jacobi")


def test_reduced_operator(sys_coarse, rng):
    s = sys_coarse
    R = s.reduced
    assert R.shape == (s.Nh.dim, s.Nh.dim)
    Rm = R.to_matrix().toarray()
    assert np.allclose(Rm, Rm.T, atol=1e-10 * np.abs(Rm).max())
    assert np.linalg.eigvalsh(Rm)[0] > 0
    psi = rng.standard_normal(s.Nh.dim)
    assert np.allclose(R @ psi, Rm @ psi)
    with pytest.raises(ValueError):
        ReducedOperator(s.A, s.P[:-1])


def test_reduced_dimensions(sys_square4, sys_coarse):
    assert sys_square4.reduced.shape == (49, 49)
    assert sys_coarse.reduced.shape == (289, 289)


def test_preconditioned_spectrum_square_bounded():
    # kappa(B A) estimated from the dense operators on J = 0, 1, 2
    kappas = []
    for m in refine_levels(coarse_square(), 1):
        s = StokesSystem(m)
        R = s.reduced.to_matrix().toarray()
        Bp = s.preconditioner("direct")
        Bm = np.column_stack([Bp(e) for e in np.eye(s.Nh.dim)])
        Bm = 0.5 * (Bm + Bm.T)
        ev = scipy.linalg.eigh(R, np.linalg.inv(Bm), eigvals_only=True)
        kappas.append(ev[-1] / ev[0])
    assert max(kappas) / min(kappas) <= 2.0
    assert max(kappas) < 10


def test_solution_properties(sys_coarse):
    s = sys_coarse
    sol = solve_stokes(s.mesh, load=manufactured_load("square"), tol=1e-10, system=s)
    assert sol.report.converged
    assert sol.max_divergence() <= 1e-10
    assert abs(np.dot(s.mesh.areas, sol.pressure.coeffs)) <= 1e-12
    F = s.rhs(manufactured_load("square"))
    res = F - s.A @ sol.velocity.coeffs - s.B.T @ sol.pressure.coeffs
    assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(F)


def test_direct_saddle_matches_pcg(sys_coarse):
    s = sys_coarse
    load = fixed_load()
    F = s.rhs(load)
    U, p = direct_saddle_solve(s.A, s.B, F, s.mesh.areas)
    sol = solve_stokes(s.mesh, load=load, tol=1e-12, system=s)
    assert np.linalg.norm(U - sol.velocity.coeffs) <= 1e-9 * np.linalg.norm(U)
    assert np.linalg.norm(p - sol.pressure.coeffs) <= 1e-8 * np.linalg.norm(p)
    U0, p0 = direct_saddle_solve(s.A, s.B, np.zeros_like(F), s.mesh.areas)
    assert np.all(U0 == 0) and np.all(p0 == 0)


def test_recover_pressure_gradient_load(sys_coarse):
    # F = B^T g with zero velocity: the pressure is -g up to a constant
    s = sys_coarse
    g = np.random.default_rng(1).standard_normal(s.Qh.dim)
    F = -s.B.T @ g
    p = recover_pressure(s.A, s.B, F, np.zeros(s.Vh.dim), s.mesh.areas)
    gm = g - np.dot(g, s.mesh.areas) / s.mesh.areas.sum()
    assert np.allclose(p, -gm, atol=1e-9 * np.abs(gm).max())


def test_zero_load_gives_zero_solution(sys_coarse):
    sol = solve_stokes(sys_coarse.mesh, load=zero_load(), system=sys_coarse)
    assert sol.report.n_it == 0
    assert np.all(sol.velocity.coeffs == 0) and np.all(sol.pressure.coeffs == 0)


def test_solve_stokes_argument_errors():
    m = generate_square(2)
    with pytest.raises(ValueError):
        solve_stokes(m)
    with pytest.raises(TypeError):
        solve_stokes(m, load="fixed")


def test_amg_inner_converges(sys_coarse):
    sol = solve_stokes(sys_coarse.mesh, load=fixed_load(), tol=1e-8, system=sys_coarse, inner="amg", maxit=100)
    ref = solve_stokes(sys_coarse.mesh, load=fixed_load(), tol=1e-12, system=sys_coarse)
    assert sol.report.converged
    assert np.linalg.norm(sol.velocity.coeffs - ref.velocity.coeffs) <= 1e-6 * np.linalg.norm(ref.velocity.coeffs)


def test_pcg_report_json_roundtrip():
    rep = PcgReport(3, [1.0, 0.1, 0.01, 0.001], 0.1, True, 0.5, 2.0, level=2)
    d = json.loads(rep.to_json())
    assert PcgReport.from_dict(d) == rep
    assert rep.condition_estimate == 4.0
    empty = PcgReport(0, [0.0], float("nan"), True)
    d = json.loads(empty.to_json())
    assert d["rho"] is None and d["ritz_min"] is None
    back = PcgReport.from_dict(d)
    assert np.isnan(back.rho) and back.n_it == 0


def test_solver_deterministic():
    m = coarse_square()
    a = solve_stokes(m, load=fixed_load(), tol=1e-10)
    b = solve_stokes(m, load=fixed_load(), tol=1e-10)
    assert np.array_equal(a.velocity.coeffs, b.velocity.coeffs)
    assert np.array_equal(a.pressure.coeffs, b.pressure.coeffs)
    assert a.report == b.report


def test_nu_scaling_of_solution():
    # u scales like 1/nu for a fixed force, the pressure does not
    m = coarse_square()
    s1 = solve_stokes(m, AssemblyConfig(nu=0.5), load=fixed_load(), tol=1e-12)
    s2 = solve_stokes(m, AssemblyConfig(nu=2.0), load=fixed_load(), tol=1e-12)
    assert np.allclose(s2.velocity.coeffs * 4.0, s1.velocity.coeffs, rtol=1e-8, atol=1e-12)
    assert np.allclose(s2.pressure.coeffs, s1.pressure.coeffs, rtol=1e-7, atol=1e-10)


def test_pcg_error_monotone_in_energy_norm(sys_coarse):
    s = sys_coarse
    R = s.reduced.to_matrix()
    b = s.P.T @ s.rhs(manufactured_load("square"))
    xs = spla.spsolve(R.tocsc(), b)
    Bp = s.preconditioner("direct")
    errs = []
    for k in range(1, 8):
        x, _ = pcg(s.reduced, b, Bp, tol=1e-300, maxit=k)
        e = x - xs
        errs.append(float(np.sqrt(e @ (R @ e))))
    assert all(b_ <= a * (1 + 1e-12) for a, b_ in zip(errs, errs[1:]))
    assert errs[-1] < 1e-8 * errs[0]


@pytest.fixture(scope="module")
def ritz_studies():
    from divfree_stokes.study import StudyConfig, run_precond_study

    return {
        d: run_precond_study(StudyConfig(domain=d, levels=4, tol=1e-10, inner="direct")) for d in ("square", "lshape")
    }


@pytest.mark.slow
def test_condition_estimate_uniform_on_square(ritz_studies):
    kappa = [r.pcg.condition_estimate for r in ritz_studies["square"].records]
    assert len(kappa) == 5
    assert max(kappa) / min(kappa) <= 2.0
    # exact inner solves: the spectrum of B A starts at 1
    assert all(abs(r.pcg.ritz_min - 1.0) < 1e-3 for r in ritz_studies["square"].records)


@pytest.mark.slow
def test_condition_estimate_growth_on_lshape(ritz_studies):
    # the re-entrant corner limits the regularity of the discrete Helmholtz
    # gradient; kappa grows like h^(-2/3) while n_it stays flat
    recs = ritz_studies["lshape"].records
    kappa = np.array([r.pcg.condition_estimate for r in recs])
    growth = kappa[2:] / kappa[1:-1]
    assert np.all((growth > 1.4) & (growth < 2 ** (2 / 3) * 1.05))
    its = [r.pcg.n_it for r in recs]
    assert max(its) - min(its) <= 1
