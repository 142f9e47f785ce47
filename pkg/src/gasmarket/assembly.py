"""Vectorized evaluation of sums of small nonlinear terms.

Every constraint row (and the objective) is written as a constant plus a sum
of terms that each touch at most two decision variables.  Collecting all
terms of one problem in flat arrays lets values, the sparse Jacobian and the
lower-triangular Lagrangian Hessian be computed with a handful of numpy
operations and a fixed sparsity pattern.
"""
from __future__ import annotations

from typing import List

import numpy as np
import scipy.sparse as sp

LIN, BIL, SQ1, SQ2, MOM, PWR = range(6)


class TermBuilder:
    """Accumulates terms ``coef * kernel(x[u], x[v])`` and row constants."""

    def __init__(self, n_rows: int):
        self.n_rows = n_rows
        self.const = np.zeros(n_rows)
        self._chunks: List[tuple] = []

    def add(self, kind, row, u, coef, v=None, expo=0.0):
        row = np.atleast_1d(np.asarray(row, dtype=np.int64))
        u = np.broadcast_to(np.asarray(u, dtype=np.int64), row.shape)
        v = np.broadcast_to(np.asarray(-1 if v is None else v, dtype=np.int64), row.shape)
        coef = np.broadcast_to(np.asarray(coef, dtype=float), row.shape)
        expo = np.broadcast_to(np.asarray(expo, dtype=float), row.shape)
        if row.size:
            self._chunks.append((np.full(row.shape, kind, dtype=np.int8), row, u, v, coef, expo))

    def add_const(self, row, value):
        np.add.at(self.const, np.asarray(row, dtype=np.int64), value)

    def build(self, n_vars: int, smoothing: float = 0.0) -> "TermSet":
        if self._chunks:
            cols = [np.concatenate(c) for c in zip(*self._chunks)]
        else:
            cols = [np.zeros(0, dtype=t) for t in (np.int8, np.int64, np.int64, np.int64, float, float)]
        return TermSet(self.n_rows, n_vars, self.const.copy(), *cols, smoothing=smoothing)


class TermSet:
    def __init__(self, n_rows, n_vars, const, kind, row, u, v, coef, expo, smoothing=0.0):
        self.n_rows, self.n_vars = n_rows, n_vars
        self.const = const
        self.kind, self.row, self.u, self.v = kind, row, u, v
        self.coef, self.expo = coef, expo
        self.delta = smoothing
        two = self.v >= 0
        if np.any(two & np.isin(self.kind, (LIN, SQ1, MOM))) or np.any(~two & np.isin(self.kind, (BIL, SQ2, PWR))):
            raise ValueError("term arity does not match its kind")
        if np.any(two & (self.u == self.v)):
            raise ValueError("two-variable terms need distinct variables")
        # Jacobian pattern: (row, u) for all terms, (row, v) where present
        jr = np.concatenate([self.row, self.row[two]])
        jc = np.concatenate([self.u, self.v[two]])
        self._two = two
        key = jr * n_vars + jc
        ukey, self._jmap = np.unique(key, return_inverse=True)
        self.jac_rows, self.jac_cols = ukey // n_vars, ukey % n_vars
        # Hessian pattern (lower triangle): uu, vv, and uv for nonlinear terms
        nl = self.kind != LIN
        self._h_uu = nl & np.isin(self.kind, (SQ1, SQ2, MOM, PWR))
        self._h_vv = two & np.isin(self.kind, (SQ2, PWR))
        self._h_uv = two
        hi = np.concatenate([self.u[self._h_uu], self.v[self._h_vv],
                             np.maximum(self.u, self.v)[self._h_uv]])
        hj = np.concatenate([self.u[self._h_uu], self.v[self._h_vv],
                             np.minimum(self.u, self.v)[self._h_uv]])
        hkey = hi * n_vars + hj
        uh, self._hmap = np.unique(hkey, return_inverse=True)
        self.hess_rows, self.hess_cols = uh // n_vars, uh % n_vars

    @property
    def jacobian_nnz(self) -> int:
        return self.jac_rows.size

    def _kernels(self, x, need_hess=False):
        k, c, e = self.kind, self.coef, self.expo
        xu = x[self.u]
        xv = np.where(self._two, x[np.maximum(self.v, 0)], 1.0)
        val = np.zeros_like(c)
        gu = np.zeros_like(c)
        gv = np.zeros_like(c)
        huu = np.zeros_like(c) if need_hess else None
        hvv = np.zeros_like(c) if need_hess else None
        huv = np.zeros_like(c) if need_hess else None
        d = self.delta

        m = k == LIN
        val[m] = c[m] * xu[m]
        gu[m] = c[m]

        m = k == BIL
        val[m] = c[m] * xu[m] * xv[m]
        gu[m] = c[m] * xv[m]
        gv[m] = c[m] * xu[m]
        if need_hess:
            huv[m] = c[m]

        m = k == SQ1
        val[m] = c[m] * xu[m] ** 2
        gu[m] = 2 * c[m] * xu[m]
        if need_hess:
            huu[m] = 2 * c[m]

        m = k == SQ2
        p = xu[m] * xv[m]
        val[m] = c[m] * p * p
        gu[m] = 2 * c[m] * p * xv[m]
        gv[m] = 2 * c[m] * p * xu[m]
        if need_hess:
            huu[m] = 2 * c[m] * xv[m] ** 2
            hvv[m] = 2 * c[m] * xu[m] ** 2
            huv[m] = 4 * c[m] * p

        m = k == MOM
        y = xu[m]
        a = np.sqrt(y * y + d * d) if d else np.abs(y)
        val[m] = c[m] * y * a
        if d:
            gu[m] = c[m] * (a + y * y / a)
            if need_hess:
                huu[m] = c[m] * (3 * y / a - y ** 3 / a ** 3)
        else:
            gu[m] = 2 * c[m] * a
            if need_hess:
                huu[m] = 2 * c[m] * np.sign(y)

        m = k == PWR
        y, w, h = xu[m], xv[m], e[m]
        a = np.sqrt(y * y + d * d) if d else np.abs(y)
        wh = w ** h
        val[m] = c[m] * a * (wh - 1.0)
        da = y / a if d else np.sign(y)
        gu[m] = c[m] * da * (wh - 1.0)
        gv[m] = c[m] * a * h * w ** (h - 1.0)
        if need_hess:
            huu[m] = c[m] * (d * d / a ** 3 if d else 0.0) * (wh - 1.0)
            hvv[m] = c[m] * a * h * (h - 1.0) * w ** (h - 2.0)
            huv[m] = c[m] * da * h * w ** (h - 1.0)
        return val, gu, gv, huu, hvv, huv

    def values(self, x) -> np.ndarray:
        val = self._kernels(x)[0]
        return self.const + np.bincount(self.row, weights=val, minlength=self.n_rows)

    def jacobian(self, x) -> sp.csr_matrix:
        _, gu, gv, *_ = self._kernels(x)
        data = np.bincount(self._jmap, weights=np.concatenate([gu, gv[self._two]]),
                           minlength=self.jac_rows.size)
        return sp.csr_matrix((data, (self.jac_rows, self.jac_cols)), shape=(self.n_rows, self.n_vars))

    def hessian(self, x, weights) -> sp.csr_matrix:
        """Lower triangle of sum_r weights[r] * grad^2 row_r."""
        _, _, _, huu, hvv, huv = self._kernels(x, need_hess=True)
        w = np.asarray(weights, dtype=float)[self.row]
        # off-diagonal entries of a symmetric pair appear once in the lower triangle
        data = np.bincount(self._hmap, weights=np.concatenate([(w * huu)[self._h_uu], (w * hvv)[self._h_vv],
                                                               (w * huv)[self._h_uv]]),
                           minlength=self.hess_rows.size)
        return sp.csr_matrix((data, (self.hess_rows, self.hess_cols)), shape=(self.n_vars, self.n_vars))
