import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from hdgdirk.approximation import (MAX_QUADRATURE_ORDER, Discretization, dubiner, dubiner_grad,
                                   edge_quadrature, legendre_edge, n_modes, quadrature_for,
                                   triangle_quadrature)
from hdgdirk.mesh import generate_structured, refine_uniform
from hdgdirk.physics import rotgauss_exact


def gauss(x, y):
    return np.exp(-50.0 * (x ** 2 + y ** 2))


@pytest.mark.parametrize("order", [0, 1, 2, 5, 8, 10])
def test_triangle_weights(order):
    rule = triangle_quadrature(order)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)


def test_triangle_monomial():
    rule = quadrature_for(3)
    x, y = rule.points.T
    assert np.dot(rule.weights, x ** 2 * y) == pytest.approx(1 / 60, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10), st.integers(0, 10))
def test_triangle_exactness(a, b):
    # int_T x^a y^b = a! b! / (a + b + 2)!
    from math import factorial
    rule = triangle_quadrature(a + b)
    x, y = rule.points.T
    exact = factorial(a) * factorial(b) / factorial(a + b + 2)
    assert np.dot(rule.weights, x ** a * y ** b) == pytest.approx(exact, rel=1e-12)


def test_edge_rule():
    rule = edge_quadrature(3)
    assert np.dot(rule.weights, rule.points ** 3) == pytest.approx(0.25, abs=1e-15)
    assert quadrature_for(7, "edge").weights.sum() == pytest.approx(1.0)


def test_order_limits():
    with pytest.raises(ValueError):
        triangle_quadrature(MAX_QUADRATURE_ORDER + 1)
    with pytest.raises(ValueError):
        quadrature_for(-1)
    with pytest.raises(ValueError):
        quadrature_for(3, "square")


@pytest.mark.parametrize("p", range(6))
def test_reference_mass_identity(p):
    rule = triangle_quadrature(2 * p + 2)
    phi = dubiner(p, rule.points)
    assert phi.shape[1] == n_modes(p) == (p + 1) * (p + 2) // 2
    np.testing.assert_allclose(phi.T @ (rule.weights[:, None] * phi), np.eye(n_modes(p)),
                               atol=1e-12)
    erule = edge_quadrature(2 * p + 2)
    mu = legendre_edge(p, erule.points)
    np.testing.assert_allclose(mu.T @ (erule.weights[:, None] * mu), np.eye(p + 1), atol=1e-12)


def test_gradient_matches_finite_differences(rng):
    pts = rng.uniform(0.05, 0.45, size=(20, 2))
    g = dubiner_grad(4, pts)
    h = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd = (dubiner(4, pts + e) - dubiner(4, pts - e)) / (2 * h)
        np.testing.assert_allclose(g[..., d], fd, atol=1e-7)


def test_physical_mass_scaling():
    disc = Discretization(generate_structured(2, 3, (0, 2, 0, 1)), 3)
    mass = np.einsum("eq,qi,qj->eij", disc.wq, disc.phi, disc.phi)
    np.testing.assert_allclose(mass, disc.det[:, None, None] * np.eye(disc.n_p), atol=1e-13)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_projection_reproduces_polynomials(p):
    disc = Discretization(generate_structured(3, 3), p)

    def poly(x, y):
        return 1 + 2 * x - y + x ** p * y ** 0 + (x * y if p >= 2 else 0) + 3 * y ** p

    w = disc.project_element(poly)
    np.testing.assert_allclose(disc.eval_volume(w)[..., 0], poly(*np.moveaxis(disc.xq, -1, 0)),
                               atol=1e-12)
    lam = disc.project_edge(poly)
    np.testing.assert_allclose(disc.eval_edge(lam)[..., 0],
                               poly(*np.moveaxis(disc.xf_edge, -1, 0)), atol=1e-12)


def test_project_zero():
    disc = Discretization(generate_structured(2, 2), 2)
    assert np.all(disc.project_element(lambda x, y: 0 * x) == 0)


def test_projection_error_rate():
    p = 3
    errs = []
    mesh = generate_structured(16, 16)
    for _ in range(2):
        disc = Discretization(mesh, p)
        errs.append(disc.l2_error(disc.project_element(gauss), gauss))
        mesh = refine_uniform(mesh)
    assert np.log2(errs[0] / errs[1]) == pytest.approx(p + 1, abs=0.3)


def test_l2_error_examples():
    disc = Discretization(generate_structured(4, 4), 2)
    w = disc.project_element(gauss)
    assert disc.l2_error(w, lambda x, y: disc_eval(disc, w, x, y)) < 1e-14
    one = disc.project_element(lambda x, y: 1 + 0 * x)
    assert disc.l2_error(one, lambda x, y: 0 * x) == pytest.approx(1.0, rel=1e-14)
    e2 = disc.l2_error(w, gauss)
    d3 = Discretization(generate_structured(4, 4), 3)
    assert d3.l2_error(d3.project_element(gauss), gauss) < e2


def disc_eval(disc, w, x, y):
    # only ever called at the volume quadrature points
    return disc.eval_volume(w)[..., 0]


def test_l2_error_with_time():
    disc = Discretization(generate_structured(4, 4), 2)
    w = disc.project_element(lambda x, y: rotgauss_exact(x, y, 0.3))
    err = disc.l2_error(w, rotgauss_exact, 0.3)
    assert err == pytest.approx(disc.l2_error(w, lambda x, y: rotgauss_exact(x, y, 0.3)))


def test_l2_norm_against_scipy():
    disc = Discretization(generate_structured(1, 1, (0, 1, 0, 1)), 2)
    w = disc.project_element(lambda x, y: x * y)
    val, _ = integrate.dblquad(lambda y, x: (x * y) ** 2, 0, 1, 0, 1, epsabs=1e-13)
    assert disc.l2_norm(w) == pytest.approx(np.sqrt(val), rel=1e-12)


def test_l2_norm_is_a_norm(rng):
    disc = Discretization(generate_structured(3, 2), 2, m=2)
    a = rng.standard_normal((disc.n_elements, 2, disc.n_p))
    b = rng.standard_normal(a.shape)
    assert disc.l2_norm(a + b) <= disc.l2_norm(a) + disc.l2_norm(b) + 1e-14
    assert disc.l2_norm(-2.5 * a) == pytest.approx(2.5 * disc.l2_norm(a), rel=1e-13)


def test_l2_norm_matches_per_element_oracle(rng):
    disc = Discretization(generate_structured(3, 3), 3)
    w = rng.standard_normal((disc.n_elements, 1, disc.n_p))
    total = 0.0
    for k in range(disc.n_elements):
        vals = disc.phi @ w[k, 0]
        total += np.sum(disc.wq[k] * vals ** 2)
    assert disc.l2_norm(w) == pytest.approx(np.sqrt(total), rel=1e-13)
    # orthonormal basis: the norm is a scaled coefficient norm
    assert disc.l2_norm(w) == pytest.approx(np.sqrt(np.sum(disc.det[:, None, None] * w ** 2)),
                                            rel=1e-12)


def test_state_layout():
    disc = Discretization(generate_structured(2, 2), 2, m=4)
    s = disc.zero_state()
    assert s.sigma.shape == (8, 4, 2, 6)
    assert s.w.shape == (8, 4, 6)
    assert s.lam.shape == (16, 4, 3)
    assert s.m == 4
