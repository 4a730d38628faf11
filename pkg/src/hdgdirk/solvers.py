"""Damped Newton, block ILU(0)-preconditioned GMRES, and dense LU solves."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SingularMatrixError(SolverError):
    pass


class LinearSolveError(SolverError):
    pass


class NewtonFailure(SolverError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


@dataclass
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 30
    min_step: float = 2.0 ** -8
    armijo: float = 1e-4

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class LinearConfig:
    rtol: float = 1e-4
    restart: int = 30
    max_iter: int = 500
    # tighten below rtol when the Newton target needs it
    newton_forcing: bool = True

    def __post_init__(self):
        if not 0 < self.rtol < 1:
            raise ValueError("GMRES relative tolerance must lie in (0, 1)")


@dataclass
class SolveStats:
    n_it: int = 0
    gmres_iterations: list = field(default_factory=list)
    gmres_relres: list = field(default_factory=list)
    line_search_cuts: int = 0
    converged: bool = False
    residual: float = np.inf


# ---------------------------------------------------------------------------
# dense


def dense_lu_solve(a, b):
    """Solve ``a x = b`` by LU with partial pivoting."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ValueError("dimension mismatch between matrix and right-hand side")
    with warnings.catch_warnings():
        # singularity is reported below as an exception
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= np.finfo(float).eps * max(d.max(), 1e-300) * a.shape[0]:
        raise SingularMatrixError("matrix is singular to machine precision")
    return scipy.linalg.lu_solve((lu, piv), b)


def batched_solve(a, b, labels=None):
    """Solve a stack of dense systems; names the offending block on failure.

    ``b`` is either a stack of vectors (one per matrix) or a stack of matrices.
    """
    vector = b.ndim == a.ndim - 1
    try:
        x = np.linalg.solve(a, b[..., None] if vector else b)
        if vector:
            x = x[..., 0]
    except np.linalg.LinAlgError:
        x = None
    if x is None or not np.all(np.isfinite(x)):
        for i in range(len(a)):
            try:
                dense_lu_solve(a[i], b[i] if vector else b[i][:, 0])
            except (SingularMatrixError, np.linalg.LinAlgError, ValueError):
                name = i if labels is None else labels[i]
                raise SingularMatrixError(f"singular local block on element {name}") from None
        raise SingularMatrixError("singular local block")
    return x


# ---------------------------------------------------------------------------
# block ILU(0)


@numba.njit(cache=True)
def _bilu0_factor(indptr, indices, data):
    nb = len(indptr) - 1
    bs = data.shape[1]
    lu = data.copy()
    diag = np.full(nb, -1, dtype=np.int64)
    dinv = np.empty((nb, bs, bs))
    where = np.full(nb, -1, dtype=np.int64)
    for i in range(nb):
        for kk in range(indptr[i], indptr[i + 1]):
            where[indices[kk]] = kk
        for kk in range(indptr[i], indptr[i + 1]):
            k = indices[kk]
            if k >= i:
                break
            lik = lu[kk] @ dinv[k]
            lu[kk] = lik
            for jj in range(diag[k] + 1, indptr[k + 1]):
                pos = where[indices[jj]]
                if pos >= 0:
                    lu[pos] -= lik @ lu[jj]
        d = where[i]
        if d < 0:
            return lu, dinv, diag, i
        diag[i] = d
        blk = lu[d]
        scale = np.abs(blk).max()
        if scale == 0.0 or not np.isfinite(scale):
            return lu, dinv, diag, i
        if np.abs(np.linalg.det(blk / scale)) < 1e-14:
            return lu, dinv, diag, i
        dinv[i] = np.linalg.inv(blk)
        for kk in range(indptr[i], indptr[i + 1]):
            where[indices[kk]] = -1
    return lu, dinv, diag, -1


@numba.njit(cache=True)
def _bilu0_solve(indptr, indices, lu, dinv, diag, b):
    nb = len(indptr) - 1
    bs = lu.shape[1]
    y = b.reshape(nb, bs).copy()
    for i in range(nb):
        acc = y[i]
        for kk in range(indptr[i], diag[i]):
            acc -= lu[kk] @ y[indices[kk]]
        y[i] = acc
    for i in range(nb - 1, -1, -1):
        acc = y[i]
        for kk in range(diag[i] + 1, indptr[i + 1]):
            acc -= lu[kk] @ y[indices[kk]]
        y[i] = dinv[i] @ acc
    return y.reshape(-1)


class BlockILU0:
    """ILU(0) on the block pattern of a BSR matrix (dense pivots per block)."""

    def __init__(self, matrix):
        a = sp.bsr_matrix(matrix) if not sp.isspmatrix_bsr(matrix) else matrix
        a.sort_indices()
        self.shape = a.shape
        self.blocksize = a.blocksize[0]
        self.indptr = a.indptr.astype(np.int64)
        self.indices = a.indices.astype(np.int64)
        data = np.ascontiguousarray(a.data, dtype=float)
        self.lu, self.dinv, self.diag, bad = _bilu0_factor(self.indptr, self.indices, data)
        if bad >= 0:
            raise SingularMatrixError(f"zero pivot in ILU(0) at block row {bad}")

    def solve(self, b):
        return _bilu0_solve(self.indptr, self.indices, self.lu, self.dinv, self.diag,
                            np.ascontiguousarray(b, dtype=float))

    def as_operator(self):
        return LinearOperator(self.shape, matvec=self.solve, dtype=float)


def gmres_ilu0(matrix, rhs, config: LinearConfig | None = None, x0=None, rtol=None):
    """Restarted GMRES with block ILU(0) preconditioning.

    Returns ``(x, info)`` where ``info`` holds the iteration count and the true
    relative residual ``||b - A x|| / ||b||``.
    """
    config = config or LinearConfig()
    rtol = config.rtol if rtol is None else rtol
    rhs = np.asarray(rhs, dtype=float)
    a = matrix if sp.issparse(matrix) else sp.bsr_matrix(np.atleast_2d(matrix))
    if a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs), {"iterations": 0, "relres": 0.0}
    prec = BlockILU0(a).as_operator()
    count = [0]

    def cb(_):
        count[0] += 1

    restart = min(config.restart, a.shape[0])
    cycles = max(1, -(-config.max_iter // restart))
    x, info = gmres(a, rhs, x0=x0, rtol=rtol, atol=0.0, restart=restart, maxiter=cycles,
                    M=prec, callback=cb, callback_type="pr_norm")
    relres = float(np.linalg.norm(rhs - a @ x) / bnorm)
    if info != 0 or not relres <= rtol * (1 + 1e-8):
        raise LinearSolveError(f"GMRES stagnated: relative residual {relres:.3e} "
                               f"after {count[0]} iterations (target {rtol:.1e})")
    return x, {"iterations": count[0], "relres": relres}


# ---------------------------------------------------------------------------
# Newton


class FunctionSystem:
    """Adapter exposing a plain ``residual``/``jacobian`` pair to :func:`newton_solve`."""

    def __init__(self, residual, jacobian):
        self.residual = residual
        self.jacobian = jacobian

    def evaluate(self, x):
        r = np.atleast_1d(np.asarray(self.residual(x), dtype=float))
        norm = float(np.linalg.norm(r))
        return {"r": r, "lam_norm": norm, "merit": norm}

    def direction(self, x, ev, stats):
        j = np.atleast_2d(np.asarray(self.jacobian(x), dtype=float))
        return dense_lu_solve(j, -ev["r"]).reshape(np.shape(x))

    def step(self, x, dx, s):
        return x + s * dx


def newton_solve(system, x0, config: NewtonConfig | None = None, damped: bool = True):
    """Damped Newton iteration on ``system``.

    ``system`` provides ``evaluate(x) -> dict(lam_norm, merit, ...)``,
    ``direction(x, ev, stats)`` and ``step(x, dx, s)``. At least one update is
    always taken. Convergence needs the full residual norm ``merit`` below
    ``config.tol``; this implies the trace-equation residual ``lam_norm`` is
    below it too. The trace residual alone is nearly linear in the trace and
    can be tiny while the element equations are still unconverged.
    """
    config = config or NewtonConfig()
    stats = SolveStats()
    x = x0
    ev = system.evaluate(x)
    while stats.n_it < config.max_iter:
        dx = system.direction(x, ev, stats)
        s = 1.0
        while True:
            x_new = system.step(x, dx, s)
            try:
                ev_new = system.evaluate(x_new)
                ok = np.isfinite(ev_new["merit"])
            except (ValueError, FloatingPointError):
                ev_new, ok = None, False
            if not damped:
                if not ok:
                    raise NewtonFailure("residual evaluation failed after full step", stats)
                break
            # a converged trial point is taken even without a decrease (start at round-off)
            if ok and (ev_new["merit"] <= (1.0 - config.armijo * s) * ev["merit"]
                       or ev_new["merit"] < config.tol):
                break
            s *= 0.5
            stats.line_search_cuts += 1
            if s < config.min_step:
                stats.residual = ev["lam_norm"]
                raise NewtonFailure("line search found no decrease down to the minimum step",
                                    stats)
        x, ev = x_new, ev_new
        stats.n_it += 1
        stats.residual = ev["lam_norm"]
        log.debug("newton it %d: |R_lam| = %.3e, merit = %.3e, step %.3g",
                  stats.n_it, ev["lam_norm"], ev["merit"], s)
        if ev["merit"] < config.tol:
            stats.converged = True
            return x, stats
    raise NewtonFailure(f"Newton did not converge in {config.max_iter} iterations "
                        f"(|R_lam| = {stats.residual:.3e})", stats)
