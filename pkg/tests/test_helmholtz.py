import numpy as np
import pytest

from divfree_stokes.helmholtz import Helmholtz, split, stability_ratio
from divfree_stokes.mesh import coarse_square, refine_levels
from divfree_stokes.norms import BrokenField
from divfree_stokes.quadrature import triangle_rule
from divfree_stokes.solver import StokesSystem
from divfree_stokes.spaces import Field, interpolate_velocity


def _m_norm(s, x):
    return float(np.sqrt(x @ (s.M @ x)))


@pytest.fixture(scope="module")
def hz_l(sys_coarse_l):
    return Helmholtz(sys_coarse_l)


def test_split_identities(sys_coarse_l, hz_l, rng):
    s = sys_coarse_l
    v = Field(s.Vh, rng.standard_normal(s.Vh.dim))
    parts = hz_l.split(v)
    scale = np.abs(v.coeffs).max()
    # v = G q + w, w = curl psi
    assert np.allclose(parts.gradient.coeffs + parts.divfree.coeffs, v.coeffs, atol=1e-13 * scale)
    assert np.allclose(s.P @ parts.stream.coeffs, parts.divfree.coeffs, atol=1e-9 * scale)
    assert np.abs(parts.divfree.divergence()).max() <= 1e-9 * scale / s.mesh.areas.min() ** 0.5
    # the gradient carries all of the divergence
    assert np.allclose(parts.gradient.divergence(), v.divergence(), atol=1e-9 * np.abs(v.divergence()).max())
    # M G q = B^T q
    Mg = s.M @ parts.gradient.coeffs
    assert np.allclose(Mg, s.B.T @ parts.potential.coeffs, atol=1e-10 * np.abs(Mg).max())
    # M-orthogonal to every divergence-free field
    ortho = s.P.T @ Mg
    assert np.abs(ortho).max() <= 1e-10 * np.abs(s.P.T @ (s.M @ v.coeffs)).max()
    # Pythagoras and norm bounds (projector constant 1)
    nv, ng, nw = (_m_norm(s, x) for x in (v.coeffs, parts.gradient.coeffs, parts.divfree.coeffs))
    assert nv**2 == pytest.approx(ng**2 + nw**2, rel=1e-10)
    assert nw <= nv * (1 + 1e-12) and ng <= nv * (1 + 1e-12)


def test_projection_is_identity_on_divfree(sys_coarse_l, hz_l, rng):
    s = sys_coarse_l
    psi = rng.standard_normal(s.Nh.dim)
    assert np.abs(hz_l.project_divfree(s.P @ psi) - psi).max() <= 1e-11 * np.abs(psi).max()
    parts = hz_l.split(Field(s.Vh, s.P @ psi))
    assert np.abs(parts.gradient.coeffs).max() <= 1e-9 * np.abs(s.P @ psi).max()
    assert np.allclose(parts.stream.coeffs, psi, atol=1e-9 * np.abs(psi).max())


def test_split_idempotent(sys_coarse_l, hz_l, rng):
    s = sys_coarse_l
    v = Field(s.Vh, rng.standard_normal(s.Vh.dim))
    g = hz_l.split(v).gradient
    again = hz_l.split(g)
    assert np.allclose(again.gradient.coeffs, g.coeffs, atol=1e-9 * np.abs(g.coeffs).max())


def test_stability_ratio(sys_coarse_l, hz_l, rng):
    s = sys_coarse_l
    v = Field(s.Vh, rng.standard_normal(s.Vh.dim))
    r = hz_l.stability_ratio(v)
    assert np.isfinite(r) and r > 0
    assert hz_l.stability_ratio(v * 7.5) == pytest.approx(r, rel=1e-10)
    # only the divergence matters: adding a divergence-free part changes nothing
    w = Field(s.Vh, v.coeffs + s.P @ rng.standard_normal(s.Nh.dim))
    assert hz_l.stability_ratio(w) == pytest.approx(r, rel=1e-8)
    with pytest.raises(ValueError):
        hz_l.stability_ratio(Field(s.Vh, s.P @ rng.standard_normal(s.Nh.dim)))
    # module-level wrapper
    assert stability_ratio(s, v) == pytest.approx(r, rel=1e-12)


def test_mixed_poisson_oracle():
    # div v = x - 1/2 with sigma . n = 0: sigma = (x^2/2 - x/2, 0) and the
    # potential is x^3/6 - x^2/4 + c
    sigma = lambda x, y: np.array([0.5 * x * x - 0.5 * x, np.zeros_like(x)])
    pot = lambda x: x**3 / 6 - x**2 / 4
    errs, perrs = [], []
    for m in refine_levels(coarse_square(), 2):
        s = StokesSystem(m)
        v = interpolate_velocity(s.Vh, sigma)
        parts = split(s, v)
        rule = triangle_rule(6)
        X = m.to_physical(rule.points)
        w = 2 * m.areas[:, None] * rule.weights
        uh = BrokenField.from_field(parts.gradient).at(np.arange(m.n_triangles), X)
        se = np.moveaxis(sigma(X[..., 0], X[..., 1]), 0, -1)
        errs.append(np.sqrt(np.einsum("tqa,tqa,tq->", uh - se, uh - se, w)))
        q = parts.potential.coeffs
        pe = np.einsum("tq,tq->t", pot(X[..., 0]), w) / m.areas
        pe -= np.dot(pe, m.areas)
        q = q - np.dot(q, m.areas)
        perrs.append(np.sqrt(np.dot(m.areas, (q - pe) ** 2)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert errs[-1] < 1e-4
    assert np.all(rates > 1.8)
    # the P0 potential is superclose to the element means of the exact one
    prates = np.log2(np.array(perrs[:-1]) / np.array(perrs[1:]))
    assert np.all(prates > 1.8)


def test_mixed_poisson_zero_mean(sys_coarse_l, hz_l, rng):
    s = sys_coarse_l
    _, q = hz_l.mixed_poisson(Field(s.Vh, rng.standard_normal(s.Vh.dim)))
    assert abs(np.dot(s.mesh.areas, q.coeffs)) <= 1e-12 * np.abs(q.coeffs).max()
