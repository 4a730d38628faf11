"""HDG residual, Jacobian blocks, static condensation, and stage solves.

Element unknowns ``u_K = (sigma_K, w_K)`` are ordered as ``sigma[c, d, i]``
followed by ``w[c, i]``; the trace unknowns seen by an element are the three
edge blocks ``lam[edge(f), c, k]`` for local faces ``f = 0, 1, 2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .approximation import Discretization, StateTriple
from .physics import FluxModel, InadmissibleStateError
from .solvers import (LinearConfig, NewtonConfig, batched_solve, gmres_ilu0,
                      newton_solve)

log = logging.getLogger(__name__)


@dataclass
class ResidualTriple:
    sigma: np.ndarray
    w: np.ndarray
    lam: np.ndarray

    def norms(self):
        return (float(np.linalg.norm(self.sigma)), float(np.linalg.norm(self.w)),
                float(np.linalg.norm(self.lam)))


@dataclass
class StageShift:
    """Stage equation ``mass * M (w - w_ref) + shift * N(w) = 0``.

    ``shift`` is ``a_ii * dt`` for a DIRK stage; ``mass = 0, shift = 1`` gives
    the stationary problem.
    """

    shift: float
    w_ref: np.ndarray | None = None
    mass: float = 1.0

    def __post_init__(self):
        if self.mass != 0.0 and not self.shift > 0.0:
            raise ValueError("stage shift a_ii * dt must be positive")


@dataclass
class CondensedSystem:
    matrix: sp.bsr_matrix
    rhs: np.ndarray
    local_x: np.ndarray          # A^{-1} [B | G_u], shape (E, L, 3 b + 1)
    residual: ResidualTriple     # stage residual G at the linearization point


def numerical_flux(model: FluxModel, x, lam, w_minus, sigma_minus, n):
    """Normal convective and viscous trace fluxes seen from the interior side.

    Returns ``(f_hat . n, f_hat_v . n)`` with trailing shape ``(m,)``. Only the
    interior trace enters; the neighbouring element never does.
    """
    lam = np.asarray(lam, dtype=float)
    jump = lam - np.asarray(w_minus, dtype=float)
    n = np.broadcast_to(np.asarray(n, dtype=float), lam.shape[:-1] + (2,))
    delta, _ = model.delta(x, lam, n)
    conv = np.einsum("...cd,...d->...c", model.flux(x, lam), n) - delta[..., None] * jump
    if model.has_viscous:
        visc = (np.einsum("...cd,...d->...c", model.viscous(lam, sigma_minus), n)
                + model.tau() * jump)
    else:
        visc = np.zeros_like(conv)
    return conv, visc


class HDGOperator:
    """Semi-discrete operator ``N`` on a discretization for one flux model."""

    def __init__(self, disc: Discretization, model: FluxModel):
        if disc.m != model.m:
            raise ValueError(f"discretization has m={disc.m}, model has m={model.m}")
        self.disc = disc
        self.model = model
        d = disc
        E, n, k, m = d.n_elements, d.n_p, d.n_e, d.m
        self.L = 3 * m * n
        self.b = m * k
        # G[e, d, i, j] = (phi_i, d_d phi_j)
        self._G = np.einsum("eq,qi,eqjd->edij", d.wq, d.phi, d.dphi)
        fw_phi = d.face_w[..., None] * d.phi_face                                  # (E,3,Q,n)
        self._face_pp = np.einsum("efqi,efqj->efij", fw_phi, d.phi_face)          # (E,3,n,n)
        self._face_pmu = np.einsum("efqi,qk->efik", fw_phi, d.mu)                 # (E,3,n,k)
        nrm = d.face_normal                                                        # (E,3,2)
        self._Hsw = -self._G + np.einsum("efd,efij->edij", nrm, self._face_pp)
        self._Hsl = -np.einsum("efd,efik->efdik", nrm, self._face_pmu)

        sk = d.skeleton
        self._bface = ~sk.interior[d.face_edge]                                    # (E,3)
        self._bE, self._bF = np.nonzero(self._bface)
        self._left = (sk.elements[:, 0], sk.local_faces[:, 0])
        inner = sk.interior
        self._right_edges = np.nonzero(inner)[0]
        self._right = (sk.elements[inner, 1], sk.local_faces[inner, 1])
        self._build_pattern()

    # ------------------------------------------------------------------
    def _build_pattern(self):
        d = self.disc
        fe = d.face_edge
        rows = np.repeat(fe, 3, axis=1).reshape(-1)
        cols = np.tile(fe, (1, 3)).reshape(-1)
        ned = d.n_edges
        keys = rows * ned + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        self._pat_rows = uniq // ned
        self._pat_cols = uniq % ned
        nnzb = len(uniq)
        self._scatter = sp.csr_matrix(
            (np.ones(len(keys)), (inv.reshape(-1), np.arange(len(keys)))), shape=(nnzb, len(keys)))
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(self._pat_rows, minlength=ned))])
        self._indices = self._pat_cols

    # ------------------------------------------------------------------
    def _evaluate(self, state: StateTriple, t: float, jacobian: bool):
        d, model = self.disc, self.model
        sigma, w, lam = state.sigma, state.w, state.lam
        m, n = d.m, d.n_p
        try:
            wv = d.eval_volume(w)                         # (E,Q,m)
            fconv = model.flux(d.xq, wv)                  # (E,Q,m,2)
            wm = d.eval_face(w)                           # (E,3,Qf,m)
            lam_q = d.eval_edge(lam)                      # (Ned,Qf,m)
            lamf = lam_q[d.face_edge]                     # (E,3,Qf,m)
            nq = np.broadcast_to(d.face_normal[:, :, None, :], lamf.shape[:-1] + (2,))
            fl = model.flux(d.face_x, lamf)               # (E,3,Qf,m,2)
            delta, ddelta = model.delta(d.face_x, lamf, nq)
        except InadmissibleStateError as exc:
            raise InadmissibleStateError(f"element {exc.index[0]}: {exc}", exc.index) from None
        tau = model.tau()
        visc = model.has_viscous
        if visc:
            sv = d.eval_volume(sigma)                     # (E,Q,m,2)
            sm = d.eval_face(sigma)                       # (E,3,Qf,m,2)
            fvis = model.viscous(wv, sv)
            fvl = model.viscous(lamf, sm)
            fconv = fconv - fvis
            fl = fl - fvl
        jump = lamf - wm
        stab = delta + tau
        fhat = np.einsum("efqcd,efqd->efqc", fl, nq) - stab[..., None] * jump

        r_sigma = (d.det[:, None, None, None] * sigma
                   - np.einsum("edij,ecj->ecdi", self._G, w)
                   - np.einsum("efq,efqc,efd,efqi->ecdi", d.face_w, jump, d.face_normal,
                               d.phi_face, optimize=True))
        r_w = (-np.einsum("eq,eqcd,eqid->eci", d.wq, fconv, d.dphi, optimize=True)
               + np.einsum("efq,efqc,efqi->eci", d.face_w, fhat, d.phi_face, optimize=True))
        if model.has_source:
            g = model.source(d.xq, t)
            r_w -= np.einsum("eq,eqc,qi->eci", d.wq, g, d.phi)

        # trace equation, per element face
        face_val = fhat.copy()
        bE, bF = self._bE, self._bF
        if len(bE):
            target, dtarget = model.boundary_target(d.face_x[bE, bF], t, wm[bE, bF], nq[bE, bF])
            face_val[bE, bF] = lamf[bE, bF] - target
        contrib = np.einsum("efq,efqc,qk->efck", d.face_w, face_val, d.mu)
        r_lam = contrib[self._left].copy()
        r_lam[self._right_edges] += contrib[self._right]
        res = ResidualTriple(r_sigma, r_w, r_lam)
        if not jacobian:
            return res, None

        E = d.n_elements
        eye_m = np.eye(m)
        ajac = model.flux_jacobian(d.xq, wv)                            # (E,Q,m,2,m)
        ljac = model.flux_jacobian(d.face_x, lamf)                      # (E,3,Qf,m,2,m)
        if visc:
            ajac = ajac - model.viscous_jacobian_w(wv, sv)
            ljac = ljac - model.viscous_jacobian_w(lamf, sm)
            bvol = model.viscous_jacobian_sigma(wv, sv)                 # (E,Q,m,2,m,2)
            bface = model.viscous_jacobian_sigma(lamf, sm)              # (E,3,Qf,m,2,m,2)
            bface_n = -np.einsum("efqcdxy,efqd->efqcxy", bface, nq)     # dF/dsigma-

        dfdl = (np.einsum("efqcdx,efqd->efqcx", ljac, nq)
                - stab[..., None, None] * eye_m
                - jump[..., :, None] * ddelta[..., None, :])            # (E,3,Qf,m,m)

        # element-local derivatives of N_w
        nw_w = (-np.einsum("eq,eqcdx,qj,eqid->ecixj", d.wq, ajac, d.phi, d.dphi, optimize=True)
                + np.einsum("efq,efq,efqi,efqj,cx->ecixj", d.face_w, stab, d.phi_face,
                            d.phi_face, eye_m, optimize=True))
        nw_lam = np.einsum("efq,efqcx,efqi,qk->ecifxk", d.face_w, dfdl, d.phi_face, d.mu,
                           optimize=True)                                # (E,m,n,3,m,k)
        if visc:
            nw_sig = (np.einsum("eq,eqcdxy,qj,eqid->ecixyj", d.wq, bvol, d.phi, d.dphi,
                                optimize=True)
                      + np.einsum("efq,efqcxy,efqi,efqj->ecixyj", d.face_w, bface_n, d.phi_face,
                                  d.phi_face, optimize=True))
        else:
            nw_sig = np.zeros((E, m, n, m, 2, n))

        # trace-equation derivatives, per face
        k = d.n_e
        c_sig = np.zeros((E, 3, m, k, m, 2, n))
        c_w = np.einsum("efq,efq,qk,efqj,cx->efckxj", d.face_w, stab, d.mu, d.phi_face, eye_m,
                        optimize=True)
        if visc:
            c_sig = np.einsum("efq,efqcxy,qk,efqj->efckxyj", d.face_w, bface_n, d.mu, d.phi_face,
                              optimize=True)
        d_face = np.einsum("efq,efqcx,qk,ql->efckxl", d.face_w, dfdl, d.mu, d.mu, optimize=True)
        if len(bE):
            lens = d.skeleton.lengths[d.face_edge[bE, bF]]
            c_sig[bE, bF] = 0.0
            c_w[bE, bF] = -np.einsum("bq,bqcx,qk,bqj->bckxj", d.face_w[bE, bF], dtarget,
                                     d.mu, d.phi_face[bE, bF], optimize=True)
            d_face[bE, bF] = lens[:, None, None, None, None] * np.einsum(
                "cx,kl->ckxl", eye_m, np.eye(k))[None]
        jac = dict(nw_w=nw_w, nw_sig=nw_sig, nw_lam=nw_lam, c_sig=c_sig, c_w=c_w, d_face=d_face)
        return res, jac

    # ------------------------------------------------------------------
    def residual(self, state: StateTriple, t: float) -> ResidualTriple:
        """The stationary HDG operator N(w_h; .) tested against all basis functions."""
        return self._evaluate(state, t, False)[0]

    def apply_time_operator(self, dw: np.ndarray) -> ResidualTriple:
        d = self.disc
        return ResidualTriple(np.zeros((d.n_elements, d.m, 2, d.n_p)),
                              d.det[:, None, None] * dw,
                              np.zeros((d.n_edges, d.m, d.n_e)))

    def stage_residual(self, state, t, shift: StageShift, _jac=False):
        res, jac = self._evaluate(state, t, _jac)
        gw = shift.shift * res.w
        if shift.mass:
            gw = gw + shift.mass * self.apply_time_operator(state.w - shift.w_ref).w
        return ResidualTriple(res.sigma, gw, res.lam), jac

    # ------------------------------------------------------------------
    def _local_blocks(self, jac, shift: StageShift):
        """Dense A_K (E,L,L), B_K (E,L,3b), C_K (E,3b,L) and face blocks D."""
        d = self.disc
        E, m, n, k = d.n_elements, d.m, d.n_p, d.n_e
        ms, L, b = 2 * m * n, self.L, self.b
        A = np.zeros((E, L, L))
        A[:, :ms, :ms] = d.det[:, None, None] * np.eye(ms)
        hsw = np.einsum("edij,cx->ecdixj", self._Hsw, np.eye(m)).reshape(E, ms, m * n)
        A[:, :ms, ms:] = hsw
        A[:, ms:, :ms] = shift.shift * jac["nw_sig"].reshape(E, m * n, ms)
        A[:, ms:, ms:] = shift.shift * jac["nw_w"].reshape(E, m * n, m * n)
        if shift.mass:
            A[:, ms:, ms:] += shift.mass * d.det[:, None, None] * np.eye(m * n)
        B = np.empty((E, L, 3 * b))
        B[:, :ms] = np.einsum("efdik,cx->ecdifxk", self._Hsl, np.eye(m)).reshape(E, ms, 3 * b)
        B[:, ms:] = shift.shift * jac["nw_lam"].reshape(E, m * n, 3 * b)
        C = np.concatenate([jac["c_sig"].reshape(E, 3 * b, ms),
                            jac["c_w"].reshape(E, 3 * b, m * n)], axis=2)
        D = jac["d_face"].reshape(E, 3, b, b)
        return A, B, C, D

    @staticmethod
    def _pack_u(r: ResidualTriple):
        E = r.w.shape[0]
        return np.concatenate([r.sigma.reshape(E, -1), r.w.reshape(E, -1)], axis=1)

    def assemble_condensed(self, state: StateTriple, shift: StageShift, t: float) -> CondensedSystem:
        """Schur complement of the stage Jacobian onto the trace unknowns."""
        d = self.disc
        E, b = d.n_elements, self.b
        res, jac = self.stage_residual(state, t, shift, _jac=True)
        A, B, C, D = self._local_blocks(jac, shift)
        gu = self._pack_u(res)
        X = batched_solve(A, np.concatenate([B, gu[..., None]], axis=2))
        S = -np.einsum("eij,ejk->eik", C, X[..., :-1])
        S = S.reshape(E, 3, b, 3, b)
        S[:, [0, 1, 2], :, [0, 1, 2], :] += D.transpose(1, 0, 2, 3)
        blocks = S.transpose(0, 1, 3, 2, 4).reshape(9 * E, b * b)
        data = (self._scatter @ blocks).reshape(-1, b, b)
        ned = d.n_edges
        mat = sp.bsr_matrix((data, self._indices, self._indptr), shape=(ned * b, ned * b))
        r_loc = np.einsum("eij,ej->ei", C, X[..., -1]).reshape(E, 3, b)
        rhs = -res.lam.reshape(ned, b).copy()
        np.add.at(rhs, d.face_edge.reshape(-1), r_loc.reshape(-1, b))
        return CondensedSystem(mat, rhs.reshape(-1), X, res)

    def local_backsubstitute(self, system: CondensedSystem, dlam: np.ndarray):
        """Element updates (d_sigma, d_w) for a given trace update."""
        d = self.disc
        E, m, n, b = d.n_elements, d.m, d.n_p, self.b
        dlam = np.asarray(dlam).reshape(d.n_edges, b)
        if system.local_x.shape[0] != E:
            raise ValueError("system does not match this discretization")
        dl = dlam[d.face_edge].reshape(E, 3 * b)
        X = system.local_x
        du = -(X[..., -1] + np.einsum("eij,ej->ei", X[..., :-1], dl))
        ms = 2 * m * n
        return du[:, :ms].reshape(E, m, 2, n), du[:, ms:].reshape(E, m, n)

    def assemble_monolithic(self, state: StateTriple, shift: StageShift, t: float):
        """Dense stage Jacobian over (sigma, w, lam) and the stage residual (test oracle)."""
        d = self.disc
        E, b, L = d.n_elements, self.b, self.L
        res, jac = self.stage_residual(state, t, shift, _jac=True)
        A, B, C, D = self._local_blocks(jac, shift)
        nu, nl = E * L, d.n_edges * b
        J = np.zeros((nu + nl, nu + nl))
        for e in range(E):
            ue = slice(e * L, (e + 1) * L)
            J[ue, ue] = A[e]
            for f in range(3):
                le = slice(nu + d.face_edge[e, f] * b, nu + (d.face_edge[e, f] + 1) * b)
                J[ue, le] = B[e][:, f * b:(f + 1) * b]
                J[le, ue] += C[e][f * b:(f + 1) * b]
                J[le, le] += D[e, f]
        rhs = np.concatenate([self._pack_u(res).reshape(-1), res.lam.reshape(-1)])
        return J, rhs

    def split_monolithic(self, vec):
        d = self.disc
        E, m, n, L = d.n_elements, d.m, d.n_p, self.L
        u = vec[:E * L].reshape(E, L)
        ms = 2 * m * n
        return (u[:, :ms].reshape(E, m, 2, n), u[:, ms:].reshape(E, m, n),
                vec[E * L:].reshape(d.n_edges, m, d.n_e))

    # ------------------------------------------------------------------
    def local_sigma(self, w: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Solve the gradient equation for sigma given w and the trace."""
        d = self.disc
        jump_w = -np.einsum("edij,ecj->ecdi", self._Hsw, w)
        lam_e = lam[d.face_edge]                                        # (E,3,m,k)
        jump_l = -np.einsum("efdik,efck->ecdi", self._Hsl, lam_e)
        return (jump_w + jump_l) / d.det[:, None, None, None]

    def initial_state(self, func) -> StateTriple:
        """Project ``func`` onto V_h and M_h; sigma from the local gradient equation."""
        d = self.disc
        w = d.project_element(func)
        lam = d.project_edge(func)
        return StateTriple(self.local_sigma(w, lam), w, lam)

    def stage_solve(self, guess: StateTriple, t: float, shift: StageShift,
                    newton: NewtonConfig | None = None, linear: LinearConfig | None = None):
        """Solve one implicit stage by damped Newton on the condensed system."""
        system = _StageSystem(self, t, shift, newton or NewtonConfig(), linear or LinearConfig())
        return newton_solve(system, guess.copy(), system.newton)


class _StageSystem:
    def __init__(self, op: HDGOperator, t, shift, newton: NewtonConfig, linear: LinearConfig):
        self.op, self.t, self.shift = op, t, shift
        self.newton, self.linear = newton, linear

    def evaluate(self, x):
        res, _ = self.op.stage_residual(x, self.t, self.shift)
        ns, nw, nl = res.norms()
        return {"lam_norm": nl, "merit": float(np.sqrt(ns ** 2 + nw ** 2 + nl ** 2))}

    def direction(self, x, ev, stats):
        op = self.op
        system = op.assemble_condensed(x, self.shift, self.t)
        rtol = self.linear.rtol
        bnorm = np.linalg.norm(system.rhs)
        if self.linear.newton_forcing and bnorm > 0:
            rtol = max(min(rtol, 0.1 * self.newton.tol / bnorm), 1e-12)
        dlam, info = gmres_ilu0(system.matrix, system.rhs, self.linear, rtol=rtol)
        stats.gmres_iterations.append(info["iterations"])
        stats.gmres_relres.append(info["relres"])
        dsig, dw = op.local_backsubstitute(system, dlam)
        return StateTriple(dsig, dw, dlam.reshape(x.lam.shape))

    def step(self, x, dx, s):
        return StateTriple(x.sigma + s * dx.sigma, x.w + s * dx.w, x.lam + s * dx.lam)


class HDGProblem:
    """Semi-discrete HDG system in the form the time integrators expect."""

    def __init__(self, op: HDGOperator, newton: NewtonConfig | None = None,
                 linear: LinearConfig | None = None):
        self.op = op
        self.newton = newton or NewtonConfig()
        self.linear = linear or LinearConfig()

    @property
    def newton_max_iter(self) -> int:
        return self.newton.max_iter

    def stage_solve(self, guess: StateTriple, t: float, shift: StageShift):
        return self.op.stage_solve(guess, t, shift, self.newton, self.linear)

    @staticmethod
    def get_w(state: StateTriple) -> np.ndarray:
        return state.w

    @staticmethod
    def with_w(state: StateTriple, w: np.ndarray) -> StateTriple:
        return StateTriple(state.sigma.copy(), np.array(w, dtype=float), state.lam.copy())

    def norm(self, dw: np.ndarray) -> float:
        return self.op.disc.l2_norm(dw)
