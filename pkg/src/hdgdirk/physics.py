"""Flux models: rotating advection-diffusion and the compressible Euler system.

Every model evaluates on arrays with arbitrary leading shape ``...``. States
have trailing shape ``(m,)``, gradients ``(m, 2)``, normals ``(2,)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InadmissibleStateError(ValueError):
    """Nonpositive density or pressure met during a flux evaluation."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FluxModel:
    """Interface used by the HDG operator.

    Subclasses provide the convective flux and its Jacobian, the viscous flux
    and its Jacobians, the stabilization parameters, the source, and the
    boundary target for the trace unknown.
    """

    m: int = 1
    has_viscous: bool = False
    has_source: bool = False

    def flux(self, x, w):
        raise NotImplementedError

    def flux_jacobian(self, x, w):
        raise NotImplementedError

    def viscous(self, w, sigma):
        return np.zeros(w.shape + (2,))

    def viscous_jacobian_w(self, w, sigma):
        return np.zeros(w.shape + (2, self.m))

    def viscous_jacobian_sigma(self, w, sigma):
        return np.zeros(w.shape + (2, self.m, 2))

    def delta(self, x, lam, n):
        """Convective stabilization and its derivative with respect to ``lam``."""
        raise NotImplementedError

    def tau(self) -> float:
        return 0.0

    def source(self, x, t):
        return np.zeros(x.shape[:-1] + (self.m,))

    def boundary_target(self, x, t, w_minus, n):
        """Boundary value imposed on the trace and its derivative in ``w_minus``."""
        raise NotImplementedError

    def initial(self, x, y):
        raise NotImplementedError

    exact = None


# ---------------------------------------------------------------------------
# rotating Gaussian


def rotgauss_exact(x, y, t=0.0, nu=1e-3):
    """Free-space solution: the rigid rotation leaves the radial profile unchanged."""
    spread = 1.0 + 200.0 * nu * t
    return np.exp(-50.0 * (np.asarray(x) ** 2 + np.asarray(y) ** 2) / spread) / spread


@dataclass
class RotatingGaussian(FluxModel):
    nu: float = 1e-3
    m: int = 1

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("diffusivity must be nonnegative")
        self.has_viscous = self.nu > 0

    @staticmethod
    def velocity(x):
        return np.stack([-4.0 * x[..., 1], 4.0 * x[..., 0]], axis=-1)

    def flux(self, x, w):
        return w[..., :, None] * self.velocity(x)[..., None, :]

    def flux_jacobian(self, x, w):
        v = self.velocity(x)
        return np.broadcast_to(v[..., None, :, None], w.shape + (2, 1)).copy()

    def viscous(self, w, sigma):
        return self.nu * sigma

    def viscous_jacobian_sigma(self, w, sigma):
        out = np.zeros(w.shape + (2, 1, 2))
        out[..., 0, 0, 0, 0] = self.nu
        out[..., 0, 1, 0, 1] = self.nu
        return out

    def delta(self, x, lam, n):
        vn = (self.velocity(x) * n).sum(-1)
        return np.abs(vn), np.zeros(lam.shape)

    def tau(self):
        return self.nu

    def boundary_target(self, x, t, w_minus, n):
        val = rotgauss_exact(x[..., 0], x[..., 1], t, self.nu)[..., None]
        return val, np.zeros(w_minus.shape + (1,))

    def initial(self, x, y):
        return rotgauss_exact(x, y, 0.0, self.nu)

    def exact(self, x, y, t):
        return rotgauss_exact(x, y, t, self.nu)


def rotgauss_model(nu: float = 1e-3) -> RotatingGaussian:
    return RotatingGaussian(nu)


# ---------------------------------------------------------------------------
# Euler


def pressure(w, gamma):
    rho = w[..., 0]
    return (gamma - 1.0) * (w[..., 3] - 0.5 * (w[..., 1] ** 2 + w[..., 2] ** 2) / rho)


def conservative(rho, u, v, p, gamma):
    rho, u, v, p = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (rho, u, v, p)))
    E = p / (gamma - 1.0) + 0.5 * rho * (u ** 2 + v ** 2)
    return np.stack([rho, rho * u, rho * v, E], axis=-1)


def entropy(w, gamma):
    """Entropy ln(p / rho^gamma) of conservative states."""
    w = np.asarray(w, dtype=float)
    rho = w[..., 0]
    p = pressure(w, gamma)
    _check_admissible(rho, p)
    return np.log(p) - gamma * np.log(rho)


def _check_admissible(rho, p):
    bad = ~((rho > 0) & (p > 0))
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise InadmissibleStateError(
            f"inadmissible state at {idx}: rho={np.asarray(rho)[idx]:.6g}, p={np.asarray(p)[idx]:.6g}",
            idx)


@dataclass
class Euler(FluxModel):
    gamma: float = 1.4
    boundary_state: object = None
    initial_state: object = None
    m: int = 4

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        self.has_viscous = False

    def _primitives(self, w):
        rho = w[..., 0]
        p = pressure(w, self.gamma)
        _check_admissible(rho, p)
        u = w[..., 1] / rho
        v = w[..., 2] / rho
        return rho, u, v, p

    def flux(self, x, w):
        rho, u, v, p = self._primitives(w)
        f = np.empty(w.shape + (2,))
        for d, ud in enumerate((u, v)):
            f[..., :, d] = w * ud[..., None]
            f[..., 1 + d, d] += p
            f[..., 3, d] += p * ud
        return f

    def flux_jacobian(self, x, w):
        g = self.gamma
        rho, u, v, p = self._primitives(w)
        dp = np.stack([0.5 * (g - 1.0) * (u ** 2 + v ** 2), -(g - 1.0) * u,
                       -(g - 1.0) * v, np.full_like(u, g - 1.0)], axis=-1)
        jac = np.zeros(w.shape + (2, 4))
        eye = np.eye(4)
        for d, ud in enumerate((u, v)):
            du = np.zeros(w.shape)
            du[..., 0] = -ud / rho
            du[..., 1 + d] = 1.0 / rho
            jd = w[..., :, None] * du[..., None, :] + ud[..., None, None] * eye
            jd[..., 1 + d, :] += dp
            jd[..., 3, :] += ud[..., None] * dp + p[..., None] * du
            jac[..., :, d, :] = jd
        return jac

    def sound_speed(self, w):
        rho, _, _, p = self._primitives(w)
        return np.sqrt(self.gamma * p / rho)

    def delta(self, x, lam, n):
        g = self.gamma
        rho, u, v, p = self._primitives(lam)
        c = np.sqrt(g * p / rho)
        un = u * n[..., 0] + v * n[..., 1]
        dp = np.stack([0.5 * (g - 1.0) * (u ** 2 + v ** 2), -(g - 1.0) * u,
                       -(g - 1.0) * v, np.full_like(u, g - 1.0)], axis=-1)
        dun = np.stack([-un / rho, n[..., 0] / rho, n[..., 1] / rho, np.zeros_like(u)], axis=-1)
        drho = np.zeros(lam.shape)
        drho[..., 0] = 1.0
        dc = (g / (2.0 * c * rho))[..., None] * (dp - (p / rho)[..., None] * drho)
        return np.abs(un) + c, np.sign(un)[..., None] * dun + dc

    def boundary_target(self, x, t, w_minus, n):
        rho, u, v, p = self._primitives(w_minus)
        c = np.sqrt(self.gamma * p / rho)
        un = u * n[..., 0] + v * n[..., 1]
        outflow = un >= c
        shape = w_minus.shape
        target = np.empty(shape)
        deriv = np.zeros(shape + (4,))
        target[outflow] = w_minus[outflow]
        deriv[outflow] = np.eye(4)
        if not outflow.all():
            if self.boundary_state is None:
                raise ValueError("boundary data required where the flow is not supersonic outflow")
            data = np.broadcast_to(self.boundary_state(x[..., 0], x[..., 1], t), shape)
            target[~outflow] = data[~outflow]
        return target, deriv

    def initial(self, x, y):
        return self.initial_state(x, y)


def euler_model(gamma: float = 1.4, boundary_state=None, initial_state=None) -> Euler:
    return Euler(gamma, boundary_state, initial_state)


# ---------------------------------------------------------------------------
# radial expansion wave


def radexp_speed(r, gamma=3.0):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = (r - 1.0) / (0.25 - (r - 1.0) ** 2)
        mid = (1.0 + np.tanh(arg)) / gamma
    return np.where(r < 0.5, 0.0, np.where(r < 1.5, mid, 2.0 / gamma))


def radexp_initial(x, y, gamma=3.0):
    """Conservative initial state of the radial expansion wave."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    q = radexp_speed(r, gamma)
    safe_r = np.where(r > 0, r, 1.0)
    u = np.where(r > 0, x / safe_r * q, 0.0)
    v = np.where(r > 0, y / safe_r * q, 0.0)
    a = 1.0 - 0.5 * (gamma - 1.0) * q
    rho = gamma * a ** (2.0 / (gamma - 1.0))
    p = rho * a ** 2 / gamma
    return conservative(rho, u, v, p, gamma)


def radexp_model(gamma: float = 3.0) -> Euler:
    def data(x, y, t=0.0):
        return radexp_initial(x, y, gamma)

    return Euler(gamma, boundary_state=data, initial_state=lambda x, y: radexp_initial(x, y, gamma))


def freestream_model(state, gamma: float = 1.4) -> Euler:
    """Euler model with a constant state as initial and boundary data."""
    state = np.asarray(state, dtype=float)

    def data(x, y, t=0.0):
        return np.broadcast_to(state, np.shape(x) + (4,))

    return Euler(gamma, boundary_state=data, initial_state=lambda x, y: data(x, y))
