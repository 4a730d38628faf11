import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdgdirk.physics import (InadmissibleStateError, conservative, entropy, euler_model,
                             freestream_model, pressure, radexp_initial, radexp_speed,
                             rotgauss_exact, rotgauss_model)


def fd_jacobian(fun, w, h=1e-7):
    cols = []
    for k in range(w.shape[-1]):
        e = np.zeros_like(w)
        e[..., k] = h
        cols.append((fun(w + e) - fun(w - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def test_rotgauss_flux_and_viscous():
    model = rotgauss_model()
    f = model.flux(np.array([0.5, 0.0]), np.array([2.0]))
    np.testing.assert_allclose(f, [[0.0, 4.0]])
    fv = model.viscous(np.array([0.0]), np.array([[3.0, -1.0]]))
    np.testing.assert_allclose(fv, [[0.003, -0.001]])


def test_rotation_is_divergence_free(rng):
    model = rotgauss_model()
    x = rng.uniform(-0.5, 0.5, size=(10, 2))
    h = 1e-6
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    div = ((model.velocity(x + ex)[:, 0] - model.velocity(x - ex)[:, 0])
           + (model.velocity(x + ey)[:, 1] - model.velocity(x - ey)[:, 1])) / (2 * h)
    np.testing.assert_allclose(div, 0.0, atol=1e-9)


def test_rotgauss_exact_values():
    assert rotgauss_exact(0.0, 0.0, 0.0) == 1.0
    x, y = 0.13, -0.21
    assert rotgauss_exact(x, y, 0.0) == pytest.approx(math.exp(-50 * (x * x + y * y)))
    assert rotgauss_exact(x, y, 0.5) == pytest.approx(
        math.exp(-50 * (x * x + y * y) / 1.1) / 1.1)


def test_rotgauss_exact_solves_the_pde(rng):
    # fourth-order central differences of w_t + v.grad(w) - nu lap(w); v is divergence free
    nu = 1e-3
    x, y, t = rng.uniform(-0.5, 0.5, 100), rng.uniform(-0.5, 0.5, 100), rng.uniform(0, 1, 100)

    def u(a, b, c):
        return rotgauss_exact(a, b, c, nu)

    def residual(h):
        def d1(shift):
            return (-u(*shift(2 * h)) + 8 * u(*shift(h)) - 8 * u(*shift(-h))
                    + u(*shift(-2 * h))) / (12 * h)

        def d2(shift):
            return (-u(*shift(2 * h)) + 16 * u(*shift(h)) - 30 * u(x, y, t)
                    + 16 * u(*shift(-h)) - u(*shift(-2 * h))) / (12 * h * h)

        sx = lambda s: (x + s, y, t)  # noqa: E731
        sy = lambda s: (x, y + s, t)  # noqa: E731
        st_ = lambda s: (x, y, t + s)  # noqa: E731
        return d1(st_) - 4 * y * d1(sx) + 4 * x * d1(sy) - nu * (d2(sx) + d2(sy))

    r1 = np.abs(residual(1e-2)).max()
    r2 = np.abs(residual(5e-3)).max()
    assert r2 < 1e-4
    assert r2 < r1 / 8


def test_euler_rest_flux():
    g = 1.4
    w = conservative(1.0, 0.0, 0.0, 1.0, g)
    f = euler_model(g).flux(None, w)
    np.testing.assert_allclose(f[:, 0], [0, 1, 0, 0])
    np.testing.assert_allclose(f[:, 1], [0, 0, 1, 0])


def test_euler_flux_example():
    w = conservative(1.0, 1.0, 0.0, 1.0, 1.4)
    assert w[3] == pytest.approx(3.0)
    np.testing.assert_allclose(euler_model(1.4).flux(None, w)[:, 0], [1, 2, 0, 4])


admissible = st.tuples(st.floats(0.2, 5.0), st.floats(-3, 3), st.floats(-3, 3),
                       st.floats(0.2, 5.0))


@settings(max_examples=100, deadline=None)
@given(admissible, st.floats(1.1, 3.0))
def test_euler_flux_jacobian(state, gamma):
    model = euler_model(gamma)
    w = conservative(*state, gamma)
    jac = model.flux_jacobian(None, w)
    fd = fd_jacobian(lambda v: model.flux(None, v), w)
    scale = np.abs(jac).max()
    assert np.abs(jac - fd).max() <= 1e-6 * scale


@settings(max_examples=50, deadline=None)
@given(admissible, st.floats(0, 2 * np.pi))
def test_euler_delta_derivative(state, angle):
    model = euler_model(1.4)
    w = conservative(*state, 1.4)
    n = np.array([np.cos(angle), np.sin(angle)])
    d, dd = model.delta(None, w, n)
    un = (w[1] * n[0] + w[2] * n[1]) / w[0]
    c = np.sqrt(1.4 * pressure(w, 1.4) / w[0])
    assert d == pytest.approx(abs(un) + c)
    if abs(un) > 1e-3:
        fd = fd_jacobian(lambda v: model.delta(None, v, n)[0][..., None], w)[0]
        np.testing.assert_allclose(dd, fd, rtol=1e-5, atol=1e-7)


def test_euler_inadmissible():
    w = np.array([[1.0, 0.0, 0.0, 1.0], [-1.0, 0.0, 0.0, 1.0]])
    with pytest.raises(InadmissibleStateError) as exc:
        euler_model(1.4).flux(None, w)
    assert exc.value.index == (1,)


def test_euler_tau_zero():
    model = euler_model(1.4)
    assert model.tau() == 0.0
    w = conservative(1.0, 0.2, 0.1, 1.0, 1.4)
    assert np.all(model.viscous(w, np.ones((4, 2))) == 0)


def test_entropy_values():
    assert entropy(conservative(1.0, 0.3, 0.0, 1.0, 1.4), 1.4) == pytest.approx(0.0, abs=1e-15)
    assert entropy(conservative(3.0, 0.0, 0.0, 1.0, 3.0), 3.0) == pytest.approx(-math.log(27))
    assert entropy(conservative(1.0, 2 / 3, 0.0, 1 / 27, 3.0), 3.0) == pytest.approx(
        -math.log(27))
    with pytest.raises(InadmissibleStateError):
        entropy(np.array([1.0, 0.0, 0.0, -1.0]), 1.4)


def test_radexp_values():
    w0 = radexp_initial(0.0, 0.0)
    np.testing.assert_allclose(w0, conservative(3.0, 0.0, 0.0, 1.0, 3.0))
    w = radexp_initial(2.0, 0.0)
    rho, u = w[0], w[1] / w[0]
    p = pressure(w, 3.0)
    assert rho == pytest.approx(1.0)
    assert u == pytest.approx(2 / 3)
    assert p == pytest.approx(1 / 27)
    assert u / math.sqrt(3 * p / rho) == pytest.approx(2.0)
    assert radexp_speed(1.5 - 1e-9) == pytest.approx(2 / 3, abs=1e-9)
    assert radexp_speed(0.5 + 1e-9) == pytest.approx(0.0, abs=1e-9)


def test_radexp_entropy_constant_in_radius():
    r = np.linspace(0.0, 4.0, 1000)
    s = entropy(radexp_initial(r, 0 * r), 3.0)
    assert np.abs(s + math.log(27)).max() < 1e-12


def test_radexp_rotational_symmetry(rng):
    x, y = rng.uniform(-4, 4, (2, 50))
    a = radexp_initial(x, y)
    b = radexp_initial(-y, x)
    np.testing.assert_allclose(a[:, [0, 3]], b[:, [0, 3]], atol=1e-14)
    # velocity rotated by 90 degrees
    np.testing.assert_allclose(b[:, 1], -a[:, 2], atol=1e-14)
    np.testing.assert_allclose(b[:, 2], a[:, 1], atol=1e-14)


def test_constant_flux_sums_to_zero_over_element():
    model = euler_model(1.4)
    w = conservative(1.2, 0.4, -0.3, 0.9, 1.4)
    tri = np.array([[0.0, 0.0], [1.3, 0.2], [0.4, 0.9]])
    total = np.zeros(4)
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        t = b - a
        n_len = np.array([t[1], -t[0]])   # outward normal times edge length
        total += model.flux(None, w) @ n_len
    np.testing.assert_allclose(total, 0.0, atol=1e-14)


def test_boundary_target_switch():
    model = freestream_model(conservative(1.0, 0.1, 0.0, 1.0, 1.4), 1.4)
    inside = conservative(np.array([1.0, 1.0]), np.array([5.0, 0.1]), 0.0, 1.0, 1.4)
    n = np.array([[1.0, 0.0], [1.0, 0.0]])
    x = np.zeros((2, 2))
    target, deriv = model.boundary_target(x, 0.0, inside, n)
    np.testing.assert_allclose(target[0], inside[0])          # supersonic outflow
    np.testing.assert_allclose(deriv[0], np.eye(4))
    np.testing.assert_allclose(target[1], conservative(1.0, 0.1, 0.0, 1.0, 1.4))
    assert np.all(deriv[1] == 0)
