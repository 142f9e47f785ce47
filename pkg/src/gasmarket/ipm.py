"""Primal-dual interior-point method for sparse nonlinear programs.

Problem form::

    min f(x)  s.t.  c_E(x) = 0,  c_I(x) >= 0,  lb <= x <= ub

Inequalities get slack variables ``s >= 0`` (``c_I(x) - s = 0``) so the
iteration only sees equalities plus simple bounds.  Each step solves the
regularized primal-dual KKT system with SuperLU in symmetric mode; the pivot
signs give the inertia, and the Hessian shift is raised until it is right.
A filter line search on (constraint violation, barrier objective) with
second-order corrections globalizes the step.  When the iteration stalls
with constraints still violated, a bound-constrained linear least-squares
test decides between ``infeasible`` and ``numerical``.

Termination needs the scaled KKT error below ``kkt_tolerance`` and, for
every bound, ``min(slack, dual)`` below ``complementarity_tolerance``.

Sign convention: the Lagrangian is ``L = f - y_E' c_E - y_I' c_I - z_l'(x - lb)
- z_u'(ub - x)`` with ``y_I, z_l, z_u >= 0``.

Adapter contract
----------------
Any object exposing the following can be solved, which is how an external
NLP code can stand in for the transcription (or vice versa):

``n, m_eq, m_ineq`` (ints), ``x_lower, x_upper, x0`` (arrays of length n),
``objective(x) -> float``, ``gradient(x) -> (n,)``,
``constraints(x) -> (m_eq + m_ineq,)`` (equalities first),
``jacobian(x) -> sparse (m, n)``, and optionally
``hessian(x, y, obj_factor) -> sparse (n, n)`` returning the lower triangle
of ``obj_factor * grad^2 f - sum_i y_i grad^2 c_i``.  Without ``hessian`` a
limited-memory BFGS approximation is used.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Protocol

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import lsq_linear

log = logging.getLogger(__name__)


class NlpAdapter(Protocol):
    n: int
    m_eq: int
    m_ineq: int
    x_lower: np.ndarray
    x_upper: np.ndarray
    x0: np.ndarray

    def objective(self, x): ...

    def gradient(self, x): ...

    def constraints(self, x): ...

    def jacobian(self, x): ...


@dataclass
class SolverOptions:
    max_iterations: int = 500
    kkt_tolerance: float = 1e-8
    complementarity_tolerance: float = 1e-6   # on min(slack, dual) per bound
    mu_init: float = 0.1
    mu_reduction: float = 0.2
    mu_superlinear: float = 1.5
    barrier_tol_factor: float = 10.0
    tau_min: float = 0.99
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    second_order_correction: bool = True
    max_soc: int = 4
    kappa_soc: float = 0.99
    gamma_theta: float = 1e-5
    gamma_phi: float = 1e-8
    gamma_alpha: float = 0.05
    filter_delta: float = 1.0
    s_theta: float = 1.1
    s_phi: float = 2.3
    max_ls_failures: int = 8
    regularization_floor: float = 1e-20
    regularization_first: float = 1e-4
    regularization_max: float = 1e40
    constraint_regularization: float = 1e-8
    refinement_steps: int = 5
    bound_push: float = 1e-2
    hessian: str = "auto"         # "auto" | "exact" | "lbfgs"
    lbfgs_memory: int = 8
    log_path: Optional[str] = None

    def __post_init__(self):
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")
        if not self.complementarity_tolerance > 0:
            raise ValueError("complementarity_tolerance must be positive")
        if not 0 < self.mu_reduction < 1:
            raise ValueError("mu_reduction must lie in (0, 1)")
        if self.hessian not in ("auto", "exact", "lbfgs"):
            raise ValueError("hessian must be auto, exact or lbfgs")


@dataclass
class SolveResult:
    x: np.ndarray
    y_eq: np.ndarray
    y_ineq: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    objective: float
    status: str
    iterations: int
    kkt: dict
    mu: float
    log: List[dict] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class FactorizationError(RuntimeError):
    pass


class _KKTFactor:
    """LDL'-style factorization of a symmetric quasi-definite matrix."""

    def __init__(self, K: sp.csc_matrix):
        self.K = K
        self.lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options=dict(SymmetricMode=True))
        if not np.array_equal(self.lu.perm_r, self.lu.perm_c):
            raise FactorizationError("pivoting left the symmetric order")
        d = self.lu.U.diagonal()
        self.n_zero = int(np.sum((d == 0) | ~np.isfinite(d)))
        self.n_pos = int(np.sum(d > 0))
        self.n_neg = int(np.sum(d < 0))

    def solve(self, b, K_exact=None, steps=5):
        x = self.lu.solve(b)
        if K_exact is None or steps == 0:
            return x
        bn = np.abs(b).max(initial=0.0)
        r = b - K_exact @ x
        rn = np.abs(r).max(initial=0.0)
        for _ in range(steps):
            if rn <= 1e-14 * max(bn, 1.0):
                break
            xt = x + self.lu.solve(r)
            rt = b - K_exact @ xt
            rtn = np.abs(rt).max(initial=0.0)
            if not rtn < 0.5 * rn:
                break
            x, r, rn = xt, rt, rtn
        return x


class _LBFGS:
    """Compact limited-memory BFGS approximation B = sigma I - W M^{-1} W'."""

    def __init__(self, n, memory):
        self.n = n
        self.memory = memory
        self.S: List[np.ndarray] = []
        self.Y: List[np.ndarray] = []

    def update(self, s, y):
        sy = float(s @ y)
        if sy <= 1e-8 * np.linalg.norm(s) * np.linalg.norm(y) or sy <= 0:
            return
        self.S.append(s)
        self.Y.append(y)
        if len(self.S) > self.memory:
            self.S.pop(0)
            self.Y.pop(0)

    def compact(self):
        if not self.S:
            return 1.0, None, None
        S = np.column_stack(self.S)
        Y = np.column_stack(self.Y)
        sigma = float(self.Y[-1] @ self.Y[-1] / (self.S[-1] @ self.Y[-1]))
        SY = S.T @ Y
        L = np.tril(SY, -1)
        D = np.diag(np.diag(SY))
        M = np.block([[sigma * S.T @ S, L], [L.T, -D]])
        return sigma, np.hstack([sigma * S, Y]), M


def _full_symmetric(lower):
    lower = sp.csr_matrix(lower)
    lower = sp.tril(lower, format="csr")
    return (lower + sp.tril(lower, -1, format="csr").T).tocsr()


class InteriorPointSolver:
    def __init__(self, problem, options: Optional[SolverOptions] = None):
        self.p = problem
        self.o = options or SolverOptions()
        mode = self.o.hessian
        if mode == "auto":
            mode = "exact" if hasattr(problem, "hessian") else "lbfgs"
        if mode == "exact" and not hasattr(problem, "hessian"):
            raise ValueError("exact Hessian requested but the problem has no hessian()")
        self.mode = mode

    # -- problem pieces in the slack-augmented space --------------------------------

    def _setup(self):
        p = self.p
        lb = np.asarray(p.x_lower, dtype=float).copy()
        ub = np.asarray(p.x_upper, dtype=float).copy()
        if np.any(lb > ub):
            raise ValueError("lower bound above upper bound")
        self.n, self.me, self.mi = int(p.n), int(p.m_eq), int(p.m_ineq)
        self.m = self.me + self.mi
        span = ub - lb
        self.fixed = np.isfinite(span) & (span <= 1e-12 * np.maximum(1.0, np.abs(lb)))
        self.free = np.flatnonzero(~self.fixed)
        self.nf = self.free.size
        self.nX = self.nf + self.mi
        self.lX = np.concatenate([lb[self.free], np.zeros(self.mi)])
        self.uX = np.concatenate([ub[self.free], np.full(self.mi, np.inf)])
        self.hl = np.isfinite(self.lX)
        self.hu = np.isfinite(self.uX)
        self.lb, self.ub = lb, ub
        x = np.asarray(p.x0, dtype=float).copy()
        x[self.fixed] = lb[self.fixed]
        self.xfix = x.copy()
        return x

    def _push(self, v, lo, hi):
        k = self.o.bound_push
        v = v.copy()
        pl = np.where(np.isfinite(lo), k * np.maximum(1.0, np.abs(lo)), 0.0)
        pu = np.where(np.isfinite(hi), k * np.maximum(1.0, np.abs(hi)), 0.0)
        both = np.isfinite(lo) & np.isfinite(hi)
        pl = np.where(both, np.minimum(pl, k * (hi - lo)), pl)
        pu = np.where(both, np.minimum(pu, k * (hi - lo)), pu)
        v = np.where(np.isfinite(lo), np.maximum(v, lo + pl), v)
        v = np.where(np.isfinite(hi), np.minimum(v, hi - pu), v)
        return v

    def _x(self, X):
        x = self.xfix.copy()
        x[self.free] = X[: self.nf]
        return x

    def _eval_fc(self, X):
        x = self._x(X)
        f = float(self.p.objective(x))
        c = np.asarray(self.p.constraints(x), dtype=float)
        C = c.copy()
        C[self.me:] -= X[self.nf:]
        return f, C

    def _jacobian_X(self, x):
        J = sp.csr_matrix(self.p.jacobian(x))
        if J.shape != (self.m, self.n):
            raise ValueError(f"jacobian has shape {J.shape}, expected {(self.m, self.n)}")
        Jf = J[:, self.free]
        if self.mi:
            neg = sp.vstack([sp.csr_matrix((self.me, self.mi)), -sp.identity(self.mi, format="csr")])
            return J, sp.hstack([Jf, neg], format="csr")
        return J, Jf.tocsr()

    def _grad_X(self, g):
        return np.concatenate([g[self.free], np.zeros(self.mi)])

    def _slacks(self, X):
        sl = np.where(self.hl, X - self.lX, 1.0)
        su = np.where(self.hu, self.uX - X, 1.0)
        return sl, su

    def _barrier(self, X, f, mu):
        sl, su = self._slacks(X)
        if np.any(sl[self.hl] <= 0) or np.any(su[self.hu] <= 0):
            return np.inf   # a slack lost to rounding; the line search backs off
        return f - mu * np.sum(np.log(sl[self.hl])) - mu * np.sum(np.log(su[self.hu]))

    # -- main loop --------------------------------------------------------------------

    def solve(self) -> SolveResult:
        o = self.o
        x = self._setup()
        x[self.free] = self._push(x[self.free], self.lb[self.free], self.ub[self.free])
        self.xfix = x.copy()
        c0 = np.asarray(self.p.constraints(x), dtype=float)
        s0 = np.maximum(c0[self.me:], o.bound_push) if self.mi else np.zeros(0)
        X = np.concatenate([x[self.free], s0])
        zl = np.where(self.hl, 1.0, 0.0)
        zu = np.where(self.hu, 1.0, 0.0)
        Y = np.zeros(self.m)
        mu = o.mu_init
        filt: List[tuple] = []
        filt_mu = None
        delta_last = 0.0
        lbfgs = _LBFGS(self.nf, o.lbfgs_memory) if self.mode == "lbfgs" else None
        history: List[dict] = []
        status = "max_iter"
        f, C = self._eval_fc(X)
        theta0 = np.abs(C).sum()
        g = np.asarray(self.p.gradient(x), dtype=float)
        J, JX = self._jacobian_X(x)
        it = 0
        ls_fail = 0
        while True:
            sl, su = self._slacks(X)
            gL = self._grad_X(g) - JX.T @ Y
            rd = gL - zl + zu
            err_d = np.abs(rd).max(initial=0.0)
            err_p = np.abs(C).max(initial=0.0)
            comp_l = np.where(self.hl, sl * zl, 0.0)
            comp_u = np.where(self.hu, su * zu, 0.0)
            err_c = max(np.abs(comp_l).max(initial=0.0), np.abs(comp_u).max(initial=0.0))
            # a weakly active bound can have a small product with neither factor small
            err_m = max(np.where(self.hl, np.minimum(sl, zl), 0.0).max(initial=0.0),
                        np.where(self.hu, np.minimum(su, zu), 0.0).max(initial=0.0))
            if max(err_d, err_p, err_c) <= o.kkt_tolerance and err_m <= o.complementarity_tolerance:
                status = "optimal"
                break
            if it >= o.max_iterations:
                break
            mu_min = min(o.kkt_tolerance, o.complementarity_tolerance ** 2) / 10.0
            while True:
                err_mu = max(err_d, err_p,
                             np.abs(np.where(self.hl, comp_l - mu, 0.0)).max(initial=0.0),
                             np.abs(np.where(self.hu, comp_u - mu, 0.0)).max(initial=0.0))
                if err_mu > o.barrier_tol_factor * mu or mu <= mu_min:
                    break
                mu = max(mu_min, min(o.mu_reduction * mu, mu ** o.mu_superlinear))
            tau = max(o.tau_min, 1.0 - mu)

            # Hessian block
            if self.mode == "exact":
                W = _full_symmetric(self.p.hessian(self._x(X), Y, 1.0))[self.free][:, self.free]
                lb_sigma, lb_W, lb_M = None, None, None
            else:
                lb_sigma, lb_W, lb_M = lbfgs.compact()
                W = sp.identity(self.nf, format="csr") * lb_sigma
            if self.mi:
                W = sp.block_diag([W, sp.csr_matrix((self.mi, self.mi))], format="csr")
            Sig = np.where(self.hl, zl / sl, 0.0) + np.where(self.hu, zu / su, 0.0)
            grad_phi = self._grad_X(g) - np.where(self.hl, mu / sl, 0.0) + np.where(self.hu, mu / su, 0.0)
            rhs = np.concatenate([-(grad_phi - JX.T @ Y), -C])
            try:
                fac, Kex, delta = self._factor(W, Sig, JX, lb_W, lb_M, delta_last)
            except FactorizationError as exc:
                log.warning("factorization failed: %s", exc)
                status = "numerical"
                break
            delta_last = delta
            if lb_W is not None:
                rhs = np.concatenate([rhs, np.zeros(lb_W.shape[1])])
            sol = fac.solve(rhs, Kex, o.refinement_steps)
            dX = sol[: self.nX]
            dY = -sol[self.nX: self.nX + self.m]
            dzl = np.where(self.hl, mu / sl - zl - (zl / sl) * dX, 0.0)
            dzu = np.where(self.hu, mu / su - zu + (zu / su) * dX, 0.0)

            a_pr = self._max_step(X, dX, tau)
            a_du = min(self._frac(zl, dzl, tau, self.hl), self._frac(zu, dzu, tau, self.hu))

            # filter line search on (constraint violation, barrier objective)
            theta = np.abs(C).sum()
            phi = self._barrier(X, f, mu)
            dphi = float(grad_phi @ dX)
            if mu != filt_mu:
                filt, filt_mu = [], mu
            theta_max = 1e4 * max(1.0, theta0)
            theta_min = 1e-4 * max(1.0, theta0)

            def acceptable(alpha_, Xt_):
                ft_, Ct_ = self._eval_fc(Xt_)
                th = np.abs(Ct_).sum()
                ph = self._barrier(Xt_, ft_, mu)
                if not (np.isfinite(ph) and np.isfinite(th)) or th > theta_max:
                    return False, False, ft_, Ct_
                if any(th >= t_ and ph >= p_ for t_, p_ in filt):
                    return False, False, ft_, Ct_
                switching = dphi < 0 and alpha_ * (-dphi) ** o.s_phi > o.filter_delta * theta ** o.s_theta
                if theta <= theta_min and switching:
                    return ph <= phi + o.armijo * alpha_ * dphi, True, ft_, Ct_
                ok = th <= (1 - o.gamma_theta) * theta or ph <= phi - o.gamma_phi * theta
                return ok, False, ft_, Ct_

            if dphi < 0:
                a_min = o.gamma_alpha * min(o.gamma_theta, o.gamma_phi * theta / -dphi,
                                            o.filter_delta * theta ** o.s_theta / (-dphi) ** o.s_phi)
            else:
                a_min = o.gamma_alpha * o.gamma_theta
            alpha = a_pr
            accepted = f_type = soc_used = False
            trials = 0
            while alpha >= a_min and trials < o.max_backtracks:
                trials += 1
                Xt = X + alpha * dX
                accepted, f_type, ft, Ct = acceptable(alpha, Xt)
                if accepted:
                    break
                if trials == 1 and o.second_order_correction and np.abs(Ct).sum() >= theta:
                    c_soc = alpha * C + Ct
                    theta_prev = np.abs(Ct).sum()
                    for _ in range(o.max_soc):
                        r_soc = np.concatenate([-(grad_phi - JX.T @ Y), -c_soc])
                        if lb_W is not None:
                            r_soc = np.concatenate([r_soc, np.zeros(lb_W.shape[1])])
                        d_soc = fac.solve(r_soc, Kex, o.refinement_steps)[: self.nX]
                        a_soc = self._max_step(X, d_soc, tau)
                        Xs = X + a_soc * d_soc
                        ok, ftype_s, fs, Cs = acceptable(alpha, Xs)
                        if ok:
                            Xt, ft, Ct, f_type = Xs, fs, Cs, ftype_s
                            accepted = soc_used = True
                            break
                        th_s = np.abs(Cs).sum()
                        if not th_s <= o.kappa_soc * theta_prev:
                            break
                        theta_prev = th_s
                        c_soc = a_soc * c_soc + Cs
                    if accepted:
                        break
                alpha *= o.backtrack
            if not accepted:
                # crude recovery: forget the filter and take a short step
                ls_fail += 1
                if ls_fail >= o.max_ls_failures:
                    status = "numerical"
                    break
                filt = []
                alpha = a_pr if ls_fail == 1 else max(a_min, a_pr * o.backtrack ** ls_fail)
                Xt = X + alpha * dX
                ft, Ct = self._eval_fc(Xt)
            else:
                ls_fail = 0
                if not f_type:
                    filt.append(((1 - o.gamma_theta) * theta, phi - o.gamma_phi * theta))
            # dual updates
            Yn = Y + alpha * dY
            zl = zl + a_du * dzl
            zu = zu + a_du * dzu
            Xn = Xt
            sln, sun = self._slacks(Xn)
            kappa = 1e10
            zl = np.where(self.hl, np.clip(zl, mu / (kappa * sln), kappa * mu / sln), 0.0)
            zu = np.where(self.hu, np.clip(zu, mu / (kappa * sun), kappa * mu / sun), 0.0)
            xn = self._x(Xn)
            gn = np.asarray(self.p.gradient(xn), dtype=float)
            Jn, JXn = self._jacobian_X(xn)
            if lbfgs is not None:
                gl_new = gn[self.free] - (Jn[:, self.free].T @ Yn)
                gl_old = g[self.free] - (J[:, self.free].T @ Yn)
                lbfgs.update(Xn[: self.nf] - X[: self.nf], gl_new - gl_old)
            it += 1
            history.append(dict(iter=it, objective=ft, inf_pr=float(err_p), inf_du=float(err_d),
                                compl=float(err_c), mu=mu, delta_w=delta, alpha_pr=float(alpha),
                                alpha_du=float(a_du), ls_trials=trials, soc=soc_used, filter=len(filt)))
            X, Y, f, C, g, J, JX = Xn, Yn, ft, Ct, gn, Jn, JXn

        if status in ("numerical", "max_iter") and np.abs(C).max(initial=0.0) > o.kkt_tolerance \
                and self._locally_infeasible(X, C, JX):
            status = "infeasible"
        x = self._x(X)
        sl, su = self._slacks(X)
        result = self._pack(x, X, Y, zl, zu, g, J, f, status, it, mu, history)
        if o.log_path:
            with open(o.log_path, "w") as fh:
                for row in history:
                    fh.write(json.dumps(row) + "\n")
        return result

    def _locally_infeasible(self, X, C, JX, ratio=0.9):
        """True when no step within the bounds cuts the linearized violation by 10%."""
        lo = np.where(self.hl, self.lX - X, -np.inf)
        hi = np.where(self.hu, self.uX - X, np.inf)
        # keep the box nondegenerate for the solver when an iterate sits on a bound
        lo, hi = np.minimum(lo, -1e-14), np.maximum(hi, 1e-14)
        try:
            res = lsq_linear(JX, -C, bounds=(lo, hi), lsmr_tol="auto", max_iter=200)
        except (ValueError, np.linalg.LinAlgError):
            return False
        after = np.linalg.norm(JX @ res.x + C)
        log.debug("feasibility test: |c| %.3e -> %.3e", np.linalg.norm(C), after)
        return bool(after > ratio * np.linalg.norm(C))

    def _max_step(self, X, dX, tau):
        sl, su = self._slacks(X)
        a = 1.0
        m = self.hl & (dX < 0)
        if np.any(m):
            a = min(a, float(np.min(-tau * sl[m] / dX[m])))
        m = self.hu & (dX > 0)
        if np.any(m):
            a = min(a, float(np.min(tau * su[m] / dX[m])))
        return a

    @staticmethod
    def _frac(z, dz, tau, mask):
        m = mask & (dz < 0)
        if not np.any(m):
            return 1.0
        return min(1.0, float(np.min(-tau * z[m] / dz[m])))

    def _factor(self, W, Sig, JX, lb_W, lb_M, delta_last):
        o = self.o
        nX, m = self.nX, self.m
        dc = o.constraint_regularization
        extra_pos = extra_neg = 0
        if lb_W is not None:
            ev = np.linalg.eigvalsh(0.5 * (lb_M + lb_M.T))
            extra_pos, extra_neg = int(np.sum(ev > 0)), int(np.sum(ev < 0))
            q = lb_W.shape[1]
            Wpad = sp.vstack([sp.csr_matrix(lb_W), sp.csr_matrix((nX - self.nf, q))])

        def build(delta, dcv):
            H = W + sp.diags(Sig + delta)
            blocks = [[H, JX.T], [JX, -dcv * sp.identity(m)]]
            if lb_W is not None:
                blocks = [[H, JX.T, Wpad], [JX, -dcv * sp.identity(m), None],
                          [Wpad.T, None, sp.csr_matrix(lb_M)]]
            return sp.bmat(blocks, format="csc")

        delta = 0.0
        first = True
        while True:
            K = build(delta, dc)
            try:
                fac = _KKTFactor(K)
                ok = (fac.n_zero == 0 and fac.n_pos == nX + extra_pos and fac.n_neg == m + extra_neg)
                log.debug("delta %g inertia %d %d %d", delta, fac.n_pos, fac.n_neg, fac.n_zero)
            except (RuntimeError, FactorizationError) as exc:
                log.debug("delta %g factor failed %s", delta, exc)
                ok = False
            if ok:
                return fac, build(delta, 0.0), delta
            if first:
                delta = o.regularization_first if delta_last == 0 else max(o.regularization_floor, delta_last / 3)
                first = False
            else:
                delta *= 100.0 if delta_last == 0 else 8.0
            if delta > o.regularization_max:
                raise FactorizationError("Hessian regularization exceeded its maximum")

    def _pack(self, x, X, Y, zl, zu, g, J, f, status, it, mu, history):
        n = self.n
        z_lower = np.zeros(n)
        z_upper = np.zeros(n)
        z_lower[self.free] = zl[: self.nf]
        z_upper[self.free] = zu[: self.nf]
        y_eq = Y[: self.me].copy()
        y_ineq = zl[self.nf:].copy()
        if np.any(self.fixed):
            r = g - J.T @ np.concatenate([y_eq, y_ineq])
            z_lower[self.fixed] = np.maximum(r[self.fixed], 0.0)
            z_upper[self.fixed] = np.maximum(-r[self.fixed], 0.0)
        kkt = kkt_residuals(self.p, x, y_eq, y_ineq, z_lower, z_upper)
        return SolveResult(x, y_eq, y_ineq, z_lower, z_upper, float(self.p.objective(x)), status, it,
                           kkt, mu, history)


def kkt_residuals(problem, x, y_eq, y_ineq, z_lower, z_upper) -> dict:
    """Max-norm stationarity, feasibility and complementarity at a point."""
    g = np.asarray(problem.gradient(x), dtype=float)
    c = np.asarray(problem.constraints(x), dtype=float)
    J = sp.csr_matrix(problem.jacobian(x))
    me = int(problem.m_eq)
    y = np.concatenate([y_eq, y_ineq])
    stat = g - J.T @ y - z_lower + z_upper
    lb = np.asarray(problem.x_lower, dtype=float)
    ub = np.asarray(problem.x_upper, dtype=float)
    viol = [np.abs(c[:me]), np.maximum(-c[me:], 0.0),
            np.maximum(lb - x, 0.0)[np.isfinite(lb)], np.maximum(x - ub, 0.0)[np.isfinite(ub)]]
    fl, fu = np.isfinite(lb), np.isfinite(ub)
    comp = [np.abs(c[me:] * y_ineq), np.abs((x[fl] - lb[fl]) * z_lower[fl]),
            np.abs((ub[fu] - x[fu]) * z_upper[fu])]
    return dict(stationarity=float(np.abs(stat).max(initial=0.0)),
                feasibility=float(max(v.max(initial=0.0) for v in viol)),
                complementarity=float(max(v.max(initial=0.0) for v in comp)))


def solve(problem, options: Optional[SolverOptions] = None) -> SolveResult:
    """Solve an NLP exposing the adapter contract described in this module."""
    return InteriorPointSolver(problem, options).solve()


class DenseProblem:
    """Adapter for small problems given as plain callables.

    ``hess`` (optional) maps ``(x, y, obj_factor)`` to a dense symmetric array.
    """

    def __init__(self, n, f, grad, cons=None, jac=None, m_eq=0, m_ineq=0, x_lower=None, x_upper=None,
                 x0=None, hess=None):
        self.n, self.m_eq, self.m_ineq = n, m_eq, m_ineq
        self._f, self._g, self._c, self._j, self._h = f, grad, cons, jac, hess
        self.x_lower = np.full(n, -np.inf) if x_lower is None else np.asarray(x_lower, dtype=float)
        self.x_upper = np.full(n, np.inf) if x_upper is None else np.asarray(x_upper, dtype=float)
        self.x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
        if hess is not None:
            self.hessian = self._hessian

    def objective(self, x):
        return self._f(x)

    def gradient(self, x):
        return np.asarray(self._g(x), dtype=float)

    def constraints(self, x):
        if self._c is None:
            return np.zeros(0)
        return np.asarray(self._c(x), dtype=float)

    def jacobian(self, x):
        if self._j is None:
            return sp.csr_matrix((0, self.n))
        return sp.csr_matrix(np.atleast_2d(np.asarray(self._j(x), dtype=float)).reshape(-1, self.n))

    def _hessian(self, x, y, obj_factor):
        return sp.csr_matrix(np.tril(np.asarray(self._h(x, y, obj_factor), dtype=float)))
