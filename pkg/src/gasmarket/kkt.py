"""First-order optimality check that shares no code with the solver.

Everything is recomputed from the problem callbacks at the returned point.
Complementarity uses the ``min(dual, slack)`` form, so a large dual on a
slack constraint and a slightly negative slack both show up.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    feasibility: float
    complementarity: float
    dual_sign: float   # largest negative part among inequality and bound duals

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity, self.dual_sign)

    def ok(self, tol: float) -> bool:
        return self.worst <= tol


def _inf_norm(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.max(np.abs(v))) if v.size else 0.0


def verify_kkt(result, nlp) -> KKTReport:
    """Residuals of the KKT conditions for ``L = f - y'c - zl'(x - lb) - zu'(ub - x)``."""
    x = np.asarray(result.x, dtype=float)
    me, mi = int(nlp.m_eq), int(nlp.m_ineq)
    grad = np.asarray(nlp.gradient(x), dtype=float)
    cons = np.asarray(nlp.constraints(x), dtype=float)
    jac = sp.csc_matrix(nlp.jacobian(x))
    lb = np.asarray(nlp.x_lower, dtype=float)
    ub = np.asarray(nlp.x_upper, dtype=float)
    y = np.concatenate([np.asarray(result.y_eq, dtype=float), np.asarray(result.y_ineq, dtype=float)])
    zl = np.asarray(result.z_lower, dtype=float)
    zu = np.asarray(result.z_upper, dtype=float)

    stat = grad - jac.T.dot(y) - zl + zu

    c_eq, c_in = cons[:me], cons[me:me + mi]
    has_l, has_u = np.isfinite(lb), np.isfinite(ub)
    gap_l = np.where(has_l, x - lb, np.inf)
    gap_u = np.where(has_u, ub - x, np.inf)
    feas = max(_inf_norm(c_eq),
               _inf_norm(np.minimum(c_in, 0.0)),
               _inf_norm(np.minimum(gap_l[has_l], 0.0)),
               _inf_norm(np.minimum(gap_u[has_u], 0.0)))

    y_in = y[me:]
    comp = max(_inf_norm(np.minimum(np.abs(y_in), np.abs(c_in))),
               _inf_norm(np.minimum(np.abs(zl[has_l]), np.abs(gap_l[has_l]))),
               _inf_norm(np.minimum(np.abs(zu[has_u]), np.abs(gap_u[has_u]))))
    # a dual on a side without a bound must vanish
    stray = max(_inf_norm(zl[~has_l]), _inf_norm(zu[~has_u]))
    sign = max(_inf_norm(np.minimum(y_in, 0.0)), _inf_norm(np.minimum(zl, 0.0)),
               _inf_norm(np.minimum(zu, 0.0)), stray)
    return KKTReport(_inf_norm(stat), feas, comp, sign)
