"""Modal bases, quadrature, and the discrete HDG spaces on a triangulation.

Reference triangle has vertices (0, 0), (1, 0), (0, 1); the reference edge is
[0, 1]. Both bases are orthonormal on their reference cells, so element mass
matrices are ``2 * area * I`` and edge mass matrices are ``length * I``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import eval_jacobi, gammaln, roots_jacobi, roots_legendre

from .mesh import FACE_VERTICES, Mesh, Skeleton, build_skeleton

MAX_QUADRATURE_ORDER = 60


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    order: int


@lru_cache(maxsize=None)
def edge_quadrature(order: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact to polynomial degree ``order``."""
    _check_order(order)
    n = order // 2 + 1
    x, w = roots_legendre(n)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, order)


@lru_cache(maxsize=None)
def triangle_quadrature(order: int) -> QuadratureRule:
    """Collapsed (Duffy) Gauss-Jacobi product rule on the reference triangle.

    All weights are positive and sum to 1/2.
    """
    _check_order(order)
    n = order // 2 + 1
    xa, wa = roots_legendre(n)
    xb, wb = roots_jacobi(n, 1.0, 0.0)
    a, b = np.meshgrid(xa, xb, indexing="ij")
    # (a, b) in [-1, 1]^2 -> (xi, eta) in the unit triangle
    eta = 0.5 * (1.0 + b)
    xi = 0.25 * (1.0 + a) * (1.0 - b)
    w = np.outer(wa, wb) / 8.0
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    return QuadratureRule(pts, w.ravel(), order)


def quadrature_for(order: int, kind: str = "triangle") -> QuadratureRule:
    if kind == "triangle":
        return triangle_quadrature(int(order))
    if kind == "edge":
        return edge_quadrature(int(order))
    raise ValueError(f"unknown quadrature kind {kind!r}")


def _check_order(order):
    if order < 0 or order > MAX_QUADRATURE_ORDER:
        raise ValueError(f"quadrature order {order} outside [0, {MAX_QUADRATURE_ORDER}]")


def _jacobi_normalized(n, alpha, beta, x):
    if n < 0:
        return np.zeros_like(x)
    log_norm = ((alpha + beta + 1) * np.log(2.0) - np.log(2 * n + alpha + beta + 1)
                + gammaln(n + alpha + 1) + gammaln(n + beta + 1)
                - gammaln(n + alpha + beta + 1) - gammaln(n + 1))
    return eval_jacobi(n, alpha, beta, x) / np.exp(0.5 * log_norm)


def _jacobi_normalized_grad(n, alpha, beta, x):
    if n == 0:
        return np.zeros_like(x)
    return np.sqrt(n * (n + alpha + beta + 1.0)) * _jacobi_normalized(n - 1, alpha + 1, beta + 1, x)


def n_modes(p: int) -> int:
    return (p + 1) * (p + 2) // 2


def _mode_indices(p):
    return [(i, j) for i in range(p + 1) for j in range(p + 1 - i)]


def _collapse(points):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = 2.0 * pts[:, 0] - 1.0
    s = 2.0 * pts[:, 1] - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(np.abs(1.0 - s) > 1e-14, 2.0 * (1.0 + r) / (1.0 - s) - 1.0, -1.0)
    return a, s


def dubiner(p: int, points) -> np.ndarray:
    """Orthonormal Dubiner basis values, shape (n_points, n_modes(p))."""
    a, b = _collapse(points)
    out = np.empty((len(a), n_modes(p)))
    for k, (i, j) in enumerate(_mode_indices(p)):
        h1 = _jacobi_normalized(i, 0.0, 0.0, a)
        h2 = _jacobi_normalized(j, 2.0 * i + 1.0, 0.0, b)
        out[:, k] = 2.0 * np.sqrt(2.0) * h1 * h2 * (1.0 - b) ** i
    return out


def dubiner_grad(p: int, points) -> np.ndarray:
    """Reference gradients of :func:`dubiner`, shape (n_points, n_modes(p), 2)."""
    a, b = _collapse(points)
    out = np.empty((len(a), n_modes(p), 2))
    for k, (i, j) in enumerate(_mode_indices(p)):
        fa = _jacobi_normalized(i, 0.0, 0.0, a)
        dfa = _jacobi_normalized_grad(i, 0.0, 0.0, a)
        gb = _jacobi_normalized(j, 2.0 * i + 1.0, 0.0, b)
        dgb = _jacobi_normalized_grad(j, 2.0 * i + 1.0, 0.0, b)
        half = 0.5 * (1.0 - b)
        dr = dfa * gb
        ds = dfa * gb * 0.5 * (1.0 + a)
        if i > 0:
            dr = dr * half ** (i - 1)
            ds = ds * half ** (i - 1)
        tmp = dgb * half ** i
        if i > 0:
            tmp = tmp - 0.5 * i * gb * half ** (i - 1)
        ds = ds + fa * tmp
        scale = 2.0 ** (i + 0.5)
        # d/dxi = 2 d/dr; the factor 2 also normalizes to the unit triangle
        out[:, k, 0] = 4.0 * scale * dr
        out[:, k, 1] = 4.0 * scale * ds
    return out


def legendre_edge(p: int, s) -> np.ndarray:
    """Orthonormal Legendre basis on [0, 1], shape (n_points, p + 1)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x = 2.0 * s - 1.0
    return np.column_stack([np.sqrt(2 * n + 1.0) * eval_jacobi(n, 0.0, 0.0, x)
                            for n in range(p + 1)])


@dataclass(frozen=True)
class ElementSpace:
    degree: int

    @property
    def dim(self) -> int:
        return n_modes(self.degree)

    def values(self, points):
        return dubiner(self.degree, points)

    def gradients(self, points):
        return dubiner_grad(self.degree, points)


@dataclass(frozen=True)
class EdgeSpace:
    degree: int

    @property
    def dim(self) -> int:
        return self.degree + 1

    def values(self, s):
        return legendre_edge(self.degree, s)


@dataclass
class StateTriple:
    """Coefficients of (sigma_h, w_h, lambda_h).

    ``sigma`` has shape (E, m, 2, n_p), ``w`` (E, m, n_p), ``lam`` (n_edges, m, p + 1).
    """

    sigma: np.ndarray
    w: np.ndarray
    lam: np.ndarray

    def copy(self) -> "StateTriple":
        return StateTriple(self.sigma.copy(), self.w.copy(), self.lam.copy())

    @property
    def m(self) -> int:
        return self.w.shape[1]


class Discretization:
    """Mesh geometry plus basis tables at the volume and edge quadrature points."""

    def __init__(self, mesh: Mesh, degree: int, m: int = 1, quad_order: int | None = None,
                 skeleton: Skeleton | None = None):
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        self.mesh = mesh
        self.skeleton = skeleton if skeleton is not None else build_skeleton(mesh)
        self.p = int(degree)
        self.m = int(m)
        self.element_space = ElementSpace(self.p)
        self.edge_space = EdgeSpace(self.p)
        self.n_p = self.element_space.dim
        self.n_e = self.edge_space.dim
        self.quad_order = 2 * self.p + 2 if quad_order is None else int(quad_order)

        vq = triangle_quadrature(self.quad_order)
        eq = edge_quadrature(self.quad_order)
        self.vol_rule, self.edge_rule = vq, eq

        tri = mesh.vertices[mesh.triangles]
        v0 = tri[:, 0]
        jac = np.stack([tri[:, 1] - v0, tri[:, 2] - v0], axis=2)  # columns
        self.det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        self.areas = 0.5 * self.det
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv /= self.det[:, None, None]
        self.jac, self.jac_inv = jac, inv

        self.phi = dubiner(self.p, vq.points)                 # (Q, n)
        dref = dubiner_grad(self.p, vq.points)                # (Q, n, 2)
        # grad_x phi = J^{-T} grad_xi phi
        self.dphi = np.einsum("eji,qnj->eqni", inv, dref)     # (E, Q, n, 2)
        self.xq = v0[:, None, :] + np.einsum("eij,qj->eqi", jac, vq.points)
        self.wq = vq.weights[None, :] * self.det[:, None]     # (E, Q)

        sk = self.skeleton
        s = eq.points
        self.mu = legendre_edge(self.p, s)                    # (Qf, n_e)
        ev = mesh.vertices[sk.edges]
        self.xf_edge = ev[:, 0, None, :] + s[None, :, None] * (ev[:, 1] - ev[:, 0])[:, None, :]
        self.wf_edge = eq.weights[None, :] * sk.lengths[:, None]   # (Ned, Qf)

        ref_v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        face_phi = np.empty((3, 2, len(s), self.n_p))
        for f in range(3):
            a_, b_ = ref_v[FACE_VERTICES[f, 0]], ref_v[FACE_VERTICES[f, 1]]
            for o, t in enumerate((s, 1.0 - s)):
                face_phi[f, o] = dubiner(self.p, a_[None, :] + t[:, None] * (b_ - a_)[None, :])
        flip = sk.element_flip.astype(int)
        # element basis at edge quadrature points, ordered along the global edge
        self.phi_face = face_phi[np.arange(3)[None, :], flip]          # (E, 3, Qf, n)
        self.face_edge = sk.element_edges                                # (E, 3)
        self.face_normal = sk.normals[sk.element_edges] * sk.element_sign[..., None]
        self.face_x = self.xf_edge[sk.element_edges]                   # (E, 3, Qf, 2)
        self.face_w = self.wf_edge[sk.element_edges]                   # (E, 3, Qf)

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    @property
    def n_edges(self) -> int:
        return self.skeleton.n_edges

    def zero_state(self) -> StateTriple:
        E, m = self.n_elements, self.m
        return StateTriple(np.zeros((E, m, 2, self.n_p)), np.zeros((E, m, self.n_p)),
                           np.zeros((self.n_edges, m, self.n_e)))

    # ---- evaluation -------------------------------------------------------
    def eval_volume(self, coeffs: np.ndarray) -> np.ndarray:
        """Values of element coefficients (E, ..., n) at volume points -> (E, Q, ...)."""
        return np.einsum("qn,e...n->eq...", self.phi, coeffs)

    def eval_face(self, coeffs: np.ndarray) -> np.ndarray:
        """Element traces (E, ..., n) at face points -> (E, 3, Qf, ...)."""
        return np.einsum("efqn,e...n->efq...", self.phi_face, coeffs)

    def eval_edge(self, lam: np.ndarray) -> np.ndarray:
        """Edge coefficients (Ned, ..., n_e) at edge points -> (Ned, Qf, ...)."""
        return np.einsum("qk,e...k->eq...", self.mu, lam)

    def element_values_at(self, ref_points) -> np.ndarray:
        return dubiner(self.p, ref_points)

    # ---- projections and norms ------------------------------------------------
    def project_element(self, f) -> np.ndarray:
        """L2 projection of ``f(x, y) -> (..., m)`` values onto V_h, shape (E, m, n_p)."""
        vals = _as_components(f(self.xq[..., 0], self.xq[..., 1]), self.m, self.xq.shape[:2])
        return np.einsum("eq,eqc,qn->ecn", self.wq, vals, self.phi) / self.det[:, None, None]

    def project_edge(self, f) -> np.ndarray:
        vals = _as_components(f(self.xf_edge[..., 0], self.xf_edge[..., 1]), self.m,
                              self.xf_edge.shape[:2])
        return np.einsum("q,eqc,qk->eck", self.edge_rule.weights, vals, self.mu)

    def l2_norm(self, w: np.ndarray) -> float:
        vals = self.eval_volume(w)
        return float(np.sqrt(np.einsum("eq,eqc->", self.wq, vals ** 2)))

    def l2_error(self, w: np.ndarray, exact, t: float | None = None) -> float:
        """L2 distance between element coefficients ``w`` and a pointwise function."""
        x, y = self.xq[..., 0], self.xq[..., 1]
        ex = exact(x, y) if t is None else exact(x, y, t)
        ex = _as_components(ex, self.m, x.shape)
        diff = self.eval_volume(w) - ex
        return float(np.sqrt(np.einsum("eq,eqc->", self.wq, diff ** 2)))

    def element_average(self, values_at_q: np.ndarray) -> np.ndarray:
        """Element means of values sampled at the volume points, shape (E, ...)."""
        return np.einsum("eq,eq...->e...", self.wq, values_at_q) / self.areas.reshape(
            (-1,) + (1,) * (values_at_q.ndim - 2))

    @cached_property
    def vertex_samples(self) -> np.ndarray:
        """Basis values at the three reference vertices, shape (3, n_p)."""
        return dubiner(self.p, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


def _as_components(vals, m, shape):
    vals = np.asarray(vals, dtype=float)
    if m == 1 and vals.shape == shape:
        vals = vals[..., None]
    return np.broadcast_to(vals, shape + (m,))
