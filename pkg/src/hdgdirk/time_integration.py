"""Embedded SDIRK stepping with adaptive step control, and fixed-step BDF2/BDF3.

The integrators talk to a *system* object providing

``stage_solve(guess, t, shift) -> (state, SolveStats)``
    solve ``M (w - shift.w_ref) + shift.shift * N(state) = 0`` at time ``t``;
``get_w(state)`` / ``with_w(state, w)``
    access the element field;
``norm(dw)``
    L2 norm of an element-field difference;
``newton_max_iter``
    the Newton iteration cap used in the safety factor.

:class:`hdgdirk.hdg.HDGProblem` is the production system;
:class:`LinearODESystem` is a scalar test equation with the same interface.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction as Fr

import numpy as np

from .hdg import StageShift
from .physics import InadmissibleStateError
from .solvers import LinearSolveError, NewtonFailure, SingularMatrixError, SolveStats

log = logging.getLogger(__name__)

STEP_FAILURES = (NewtonFailure, LinearSolveError, SingularMatrixError, InadmissibleStateError,
                 FloatingPointError)


class StepSizeError(RuntimeError):
    """Step rejected at the minimum step size."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


# ---------------------------------------------------------------------------
# tableaus


@dataclass(frozen=True)
class ButcherTableau:
    name: str
    A: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    weights_embedded: np.ndarray
    order: int
    order_embedded: int
    exact: tuple | None = None

    @property
    def stages(self) -> int:
        return len(self.nodes)

    @property
    def stiffly_accurate(self) -> bool:
        return bool(np.array_equal(self.weights, self.A[-1]))


def _frac_table(rows, b1, b2):
    k = len(rows)
    A = [[Fr(0)] * k for _ in range(k)]
    for i, row in enumerate(rows):
        for j, v in enumerate(row):
            A[i][j] = Fr(v)
    return A, [Fr(v) for v in b1], [Fr(v) for v in b2]


def _hairer_wanner():
    rows = [["1/4"],
            ["1/2", "1/4"],
            ["17/50", "-1/25", "1/4"],
            ["371/1360", "-137/2720", "15/544", "1/4"],
            ["25/24", "-49/48", "125/16", "-85/12", "1/4"]]
    A, b1, b2 = _frac_table(rows, ["25/24", "-49/48", "125/16", "-85/12", "1/4"],
                            ["59/48", "-17/96", "225/32", "-85/12", "0"])
    c = [Fr(1, 4), Fr(3, 4), Fr(11, 20), Fr(1, 2), Fr(1)]
    return ButcherTableau("hairer_wanner", _f(A), _f(c), _f(b1), _f(b2), 4, 3,
                          exact=(A, c, b1, b2))


def _al_rabeh():
    g = 0.4358665
    A = np.array([[g, 0, 0, 0],
                  [-0.4034943, g, 0, 0],
                  [-0.3298751, 0.8616364, g, 0],
                  [0.5575315, -0.1930865, -0.2361781, g]])
    c = np.array([0.4358665, 0.0323722, 0.9676278, 0.5641335])
    b1 = np.array([0.3153914, 0.1846086, 0.1846086, 0.3153914])
    b2 = np.array([0.6307827, 0.1413538, 0.2278634, 0.0])
    return ButcherTableau("al_rabeh", A, c, b1, b2, 4, 3)


def _cash():
    g = 0.435866521508
    A = np.array([[g, 0, 0],
                  [0.2820667320, g, 0],
                  [1.208496649, -0.6443632015, g]])
    c = np.array([0.435866521508, 0.717933260755, 1.0])
    b1 = np.array([1.208496649, -0.6443632015, g])
    b2 = np.array([0.77263013745746, 0.22736986254254, 0.0])
    return ButcherTableau("cash", A, c, b1, b2, 3, 2)


def _f(x):
    return np.array(x, dtype=float)


_TABLEAUS = {"hairer_wanner": _hairer_wanner, "al_rabeh": _al_rabeh, "cash": _cash}
TABLEAU_NAMES = tuple(_TABLEAUS)


def tableau(name: str) -> ButcherTableau:
    try:
        return _TABLEAUS[name]()
    except KeyError:
        raise ValueError(f"unknown tableau {name!r}; choose from {', '.join(_TABLEAUS)}") from None


def _conditions(A, b, c):
    """Classical order conditions, grouped by order, as (lhs, rhs) pairs."""

    def dot(u, v):
        return sum(x * y for x, y in zip(u, v))

    def mat(M, v):
        return [dot(row, v) for row in M]

    c2 = [x * x for x in c]
    c3 = [x * x * x for x in c]
    Ac = mat(A, c)
    one = type(c[0])(1)
    return {
        1: [(sum(b), one)],
        2: [(dot(b, c), one / 2)],
        3: [(dot(b, c2), one / 3), (dot(b, Ac), one / 6)],
        4: [(dot(b, c3), one / 4), (dot(b, [x * y for x, y in zip(c, Ac)]), one / 8),
            (dot(b, mat(A, c2)), one / 12), (dot(b, mat(A, Ac)), one / 24)],
    }


def verify_order_conditions(tab: ButcherTableau, up_to_order: int = 4, tol: float | None = None,
                            weights=None):
    """Highest order (<= up_to_order) whose conditions all hold, for both weight rows.

    Rational tableaus are checked exactly; decimal ones to ``tol`` (1e-6 by
    default, the printed precision).
    """
    if not 1 <= up_to_order <= 4:
        raise ValueError("order conditions are tabulated up to order 4")
    report = {}
    rows = {"weights": tab.weights, "weights_embedded": tab.weights_embedded}
    if weights is not None:
        rows = {"custom": np.asarray(weights, dtype=float)}
    for key, b in rows.items():
        if tab.exact is not None and weights is None:
            A, c, b1, b2 = tab.exact
            bb = b1 if key == "weights" else b2
            conds = _conditions(A, bb, c)
            check = lambda lhs, rhs: lhs == rhs  # noqa: E731
        else:
            conds = _conditions([list(r) for r in tab.A], list(b), list(tab.nodes))
            eps = 1e-6 if tol is None else tol
            check = lambda lhs, rhs: abs(float(lhs) - float(rhs)) <= eps  # noqa: E731
        achieved = 0
        residuals = {}
        for order in range(1, up_to_order + 1):
            res = [float(lhs - rhs) for lhs, rhs in conds[order]]
            residuals[order] = res
            if achieved == order - 1 and all(check(l, r) for l, r in conds[order]):
                achieved = order
        report[key] = {"order": achieved, "residuals": residuals}
    return report


# ---------------------------------------------------------------------------
# controller


@dataclass
class ControllerConfig:
    tol: float
    dt0: float | None = None
    dt_min: float | None = None
    dt_max: float | None = None
    safety: float = 0.9

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")


@dataclass
class StepRecord:
    t: float
    dt: float
    e: float
    r: float
    accepted: bool
    newton_per_stage: list
    cum_newton: int
    diagnostic: float = float("nan")
    gmres_max_relres: float = float("nan")
    # largest final trace residual over the stage solves
    newton_residual: float = float("nan")
    # exception class name when a stage solve failed
    failure: str = ""
    # step shortened to land exactly on the final time
    truncated: bool = False


def safety_factor(n_it: int, n_it_max: int, base: float = 0.9) -> float:
    return base * (2 * n_it_max + 1) / (2 * n_it_max + n_it)


def controller_decide(e, dt, tol, q, n_it, n_it_max, dt_min=0.0, dt_max=np.inf, base=0.9):
    """Accept/reject a step and propose the next step size.

    Returns ``(accept, dt_next)``. Raises :class:`StepSizeError` when a
    rejection would need a step below ``dt_min``.
    """
    if q < 2:
        raise ValueError("controller order q must be at least 2")
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    accept = bool(e <= dt * tol)
    if accept:
        r = e / (tol * dt)
        alpha = safety_factor(n_it, n_it_max, base)
        dt_next = alpha * dt * r ** (-1.0 / (q - 1)) if r > 0 else np.inf
        return True, float(min(max(dt_next, dt_min), dt_max))
    if dt <= dt_min * (1 + 1e-12):
        raise StepSizeError(f"step rejected at the minimum step size {dt_min:.3e} (e={e:.3e})")
    return False, float(max(0.5 * dt, dt_min))


# ---------------------------------------------------------------------------
# stepping


@dataclass
class StepResult:
    w1: np.ndarray
    w2: np.ndarray
    stages: list
    newton_per_stage: list
    stats: list = field(default_factory=list)

    @property
    def n_it(self) -> int:
        return max(self.newton_per_stage) if self.newton_per_stage else 0


def dirk_step(system, state, t, dt, tab: ButcherTableau) -> StepResult:
    """One embedded SDIRK step; both weight rows share the stage solutions."""
    if not dt > 0:
        raise ValueError("step size must be positive")
    wn = system.get_w(state)
    ks, stages, its, stats_all = [], [], [], []
    guess = state
    A = tab.A
    for i in range(tab.stages):
        w_ref = wn.copy()
        for j in range(i):
            w_ref += dt * A[i, j] * ks[j]
        shift = A[i, i] * dt
        try:
            st, stats = system.stage_solve(guess, t + tab.nodes[i] * dt, StageShift(shift, w_ref))
        except NewtonFailure as exc:
            exc.partial_newton = sum(its) + (exc.stats.n_it if exc.stats else 0)
            raise
        except STEP_FAILURES as exc:
            exc.partial_newton = sum(its)
            raise
        ks.append((system.get_w(st) - w_ref) / shift)
        stages.append(st)
        its.append(stats.n_it)
        stats_all.append(stats)
        guess = st
    w1 = wn + dt * sum(g * k for g, k in zip(tab.weights, ks))
    w2 = wn + dt * sum(g * k for g, k in zip(tab.weights_embedded, ks))
    return StepResult(w1, w2, stages, its, stats_all)


def error_estimate(system, w1, w2) -> float:
    return float(system.norm(w1 - w2))


def _max_relres(stats_list):
    vals = [r for s in stats_list for r in s.gmres_relres]
    return max(vals) if vals else float("nan")


def _max_residual(stats_list):
    return max((s.residual for s in stats_list), default=float("nan"))


def integrate_adaptive(system, state0, t0: float, T: float, tab: ButcherTableau,
                       config: ControllerConfig, diagnostic=None, max_steps: int = 100000):
    """Adaptive embedded-DIRK integration from ``t0`` to exactly ``T``.

    Returns ``(state, history)`` where ``history`` lists a :class:`StepRecord`
    per attempted step, rejected ones included.
    """
    if not T > t0:
        raise ValueError("final time must exceed the initial time")
    span = T - t0
    dt = config.dt0 if config.dt0 is not None else 1e-3 * span
    dt_min = config.dt_min if config.dt_min is not None else 1e-10 * span
    dt_max = config.dt_max if config.dt_max is not None else span
    n_it_max = system.newton_max_iter
    dt = min(max(dt, dt_min), dt_max)
    t, state = t0, state0
    history: list[StepRecord] = []
    cum = 0
    while t < T and T - t > 1e-12 * span:
        if len(history) >= max_steps:
            raise StepSizeError(f"exceeded {max_steps} steps", history)
        final = t + dt >= T - 1e-12 * span
        h = T - t if final else dt
        try:
            step = dirk_step(system, state, t, h, tab)
        except STEP_FAILURES as exc:
            n = getattr(exc, "partial_newton", 0)
            cum += n
            history.append(StepRecord(t, h, float("nan"), float("nan"), False, [n], cum,
                                      failure=type(exc).__name__))
            log.info("t=%.5g dt=%.3e: stage solve failed (%s); halving", t, h, exc)
            if h <= dt_min * (1 + 1e-12):
                raise StepSizeError(f"stage solve failed at the minimum step size: {exc}",
                                    history) from exc
            dt = max(0.5 * h, dt_min)
            continue
        cum += sum(step.newton_per_stage)
        e = error_estimate(system, step.w1, step.w2)
        r = e / (config.tol * h)
        try:
            accept, dt_next = controller_decide(e, h, config.tol, tab.order, step.n_it, n_it_max,
                                                dt_min, dt_max, config.safety)
        except StepSizeError as exc:
            history.append(StepRecord(t, h, e, r, False, step.newton_per_stage, cum))
            exc.history = history
            raise
        rec = StepRecord(t, h, e, r, accept, step.newton_per_stage, cum,
                         gmres_max_relres=_max_relres(step.stats),
                         newton_residual=_max_residual(step.stats), truncated=final and h < dt)
        if accept:
            last = step.stages[-1]
            state = system.with_w(last, step.w1)
            t = T if final else t + h
            if diagnostic is not None:
                rec.diagnostic = float(diagnostic(state, t))
            dt = dt_next
        else:
            dt = dt_next
        history.append(rec)
        log.info("t=%.5g dt=%.3e e=%.3e r=%.3f %s newton=%s", rec.t, h, e, r,
                 "accept" if accept else "reject", step.newton_per_stage)
    return state, history


BDF_COEFFS = {
    # w_ref = sum(c_j * w^{n-j}), shift factor beta: M (w - w_ref) + beta dt N = 0
    2: ([Fr(4, 3), Fr(-1, 3)], Fr(2, 3)),
    3: ([Fr(18, 11), Fr(-9, 11), Fr(2, 11)], Fr(6, 11)),
}


def integrate_bdf(system, state0, t0: float, T: float, order: int, dt: float, diagnostic=None,
                  startup: ButcherTableau | None = None):
    """Fixed-step BDF2/BDF3 with Hairer-Wanner SDIRK start-up steps."""
    if order not in BDF_COEFFS:
        raise ValueError("BDF order must be 2 or 3")
    if not dt > 0 or not T > t0:
        raise ValueError("need dt > 0 and T > t0")
    n_steps = int(round((T - t0) / dt))
    if n_steps < 1 or abs(n_steps * dt - (T - t0)) > 1e-9 * (T - t0):
        raise ValueError(f"dt={dt} does not divide the interval [{t0}, {T}]")
    startup = startup or tableau("hairer_wanner")
    coeffs, beta = BDF_COEFFS[order]
    coeffs = [float(c) for c in coeffs]
    history = []
    cum = 0
    state = state0
    past = [system.get_w(state0)]
    for n in range(n_steps):
        t = t0 + n * dt
        if n < order - 1:
            step = dirk_step(system, state, t, dt, startup)
            state = system.with_w(step.stages[-1], step.w1)
            its, stats = step.newton_per_stage, step.stats
        else:
            w_ref = sum(c * w for c, w in zip(coeffs, past[::-1]))
            state, st = system.stage_solve(state, t + dt, StageShift(float(beta) * dt, w_ref))
            its, stats = [st.n_it], [st]
        cum += sum(its)
        past.append(system.get_w(state))
        past = past[-order:]
        rec = StepRecord(t, dt, float("nan"), float("nan"), True, its, cum,
                         gmres_max_relres=_max_relres(stats), newton_residual=_max_residual(stats))
        if diagnostic is not None:
            rec.diagnostic = float(diagnostic(state, t + dt))
        history.append(rec)
    return state, history


def integrate_fixed(system, state0, t0: float, T: float, tab: ButcherTableau, n_steps: int,
                    diagnostic=None):
    """Uniform steps of the main (higher-order) DIRK solution, no control."""
    dt = (T - t0) / n_steps
    state, history, cum = state0, [], 0
    for n in range(n_steps):
        t = t0 + n * dt
        step = dirk_step(system, state, t, dt, tab)
        state = system.with_w(step.stages[-1], step.w1)
        cum += sum(step.newton_per_stage)
        e = error_estimate(system, step.w1, step.w2)
        rec = StepRecord(t, dt, e, float("nan"), True, step.newton_per_stage, cum,
                         gmres_max_relres=_max_relres(step.stats),
                         newton_residual=_max_residual(step.stats))
        if diagnostic is not None:
            rec.diagnostic = float(diagnostic(state, t + dt))
        history.append(rec)
    return state, history


def budget_ok(history, t0, T, tol) -> bool:
    """Sum of accepted error estimates stays below (T - t0) * tol."""
    spent = math.fsum(r.e for r in history if r.accepted)
    return spent < (T - t0) * tol


# ---------------------------------------------------------------------------
# scalar test system


class LinearODESystem:
    """``y' = a y`` with identity mass, solved exactly per stage."""

    newton_max_iter = 1

    def __init__(self, a: float):
        self.a = a

    def stage_solve(self, guess, t, shift: StageShift):
        y = shift.w_ref / (1.0 - shift.shift * self.a)
        stats = SolveStats(n_it=1, converged=True, residual=0.0)
        return np.asarray(y, dtype=float), stats

    @staticmethod
    def get_w(state):
        return np.asarray(state, dtype=float)

    @staticmethod
    def with_w(state, w):
        return np.asarray(w, dtype=float)

    @staticmethod
    def norm(dw):
        return float(np.linalg.norm(dw))
