"""Lumped-element gas flow relations in matrix-vector form.

All functions work on a non-dimensional refined network at a single time
instant.  Node vectors follow the slack-first ordering of
:class:`~gasmarket.network.IncidenceMatrices`; ``ratios`` is the pair of
per-edge (from-end, to-end) compression ratios, ones when omitted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .network import Compressor, IncidenceMatrices, Network, build_incidence


class SteadyStateError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class SystemState:
    rho: np.ndarray   # non-slack node densities
    phi: np.ndarray   # average edge flux


@dataclass
class BoundaryFlows:
    inlet: np.ndarray
    outlet: np.ndarray
    antisymmetric: np.ndarray


def _ratios(inc: IncidenceMatrices, ratios):
    return inc.edge_ratios() if ratios is None else ratios


def smooth_abs(x, delta: float = 0.0):
    """|x|, or sqrt(x^2 + delta^2) when delta > 0."""
    if delta:
        return np.sqrt(x * x + delta * delta)
    return np.abs(x)


def signed_square(phi, delta: float = 0.0):
    """phi*|phi| with optional C1 smoothing, and its derivative."""
    a = smooth_abs(phi, delta)
    if delta:
        return phi * a, a + phi * phi / a
    return phi * a, 2.0 * a


def edge_densities(varrho, inc: IncidenceMatrices, ratios=None):
    """Densities at the from and to ends of every edge after compression."""
    af, at = _ratios(inc, ratios)
    varrho = np.asarray(varrho, dtype=float)
    return af * varrho[inc.tail], at * varrho[inc.head]


def mass_matrices(inc: IncidenceMatrices, ratios=None):
    """Coefficient matrices of the mass balance.

    Returns ``(M_q, M_sigma)`` with ``M_q = |A_q| X Lambda |B_q^T|`` and
    ``M_sigma = |A_q| X Lambda |B_sigma^T|``.
    """
    B = abs(inc.B(_ratios(inc, ratios)))
    W = abs(inc.A_q) @ sp.diags(inc.area * inc.length)
    return (W @ B[inc.n_slack:].T).tocsr(), (W @ B[: inc.n_slack].T).tocsr()


def mass_residual_rate(edge_rate, phi, q, inc: IncidenceMatrices):
    """Mass balance residual given d/dt of (from + to) edge densities per edge."""
    lhs = abs(inc.A_q) @ (inc.area * inc.length * np.asarray(edge_rate, dtype=float))
    return lhs - 4.0 * (inc.A_q @ (inc.area * phi) - q)


def mass_residual(rho_dot, sigma_dot, phi, q, inc: IncidenceMatrices, ratios=None):
    """LHS minus RHS of the nodal mass balance with ratios frozen in time.

    ``|A_q| X Lambda |B_q^T| rho_dot - 4 (A_q X phi - q) + |A_q| X Lambda |B_sigma^T| sigma_dot``
    """
    phi = np.asarray(phi, dtype=float)
    q = np.asarray(q, dtype=float)
    rho_dot = np.asarray(rho_dot, dtype=float)
    sigma_dot = np.asarray(sigma_dot, dtype=float)
    if rho_dot.shape != (inc.n_nonslack,) or q.shape != (inc.n_nonslack,):
        raise ValueError("rho_dot and q must have one entry per non-slack node")
    if sigma_dot.shape != (inc.n_slack,) or phi.shape != (inc.n_edges,):
        raise ValueError("sigma_dot needs one entry per slack node, phi one per edge")
    B = abs(inc.B(_ratios(inc, ratios)))
    rate = B[inc.n_slack:].T @ rho_dot + B[: inc.n_slack].T @ sigma_dot
    return mass_residual_rate(rate, phi, q, inc)


def momentum_residual(varrho, phi, inc: IncidenceMatrices, ratios=None, smoothing: float = 0.0):
    """Per-edge ``L K phi|phi| + (B^T varrho)(|B^T| varrho)``.

    Zero exactly when ``rho_from^2 - rho_to^2 = L K phi |phi|``.
    """
    varrho = np.asarray(varrho, dtype=float)
    if np.any(varrho <= 0):
        raise ValueError("densities must be positive")
    rf, rt = edge_densities(varrho, inc, ratios)
    ss, _ = signed_square(np.asarray(phi, dtype=float), smoothing)
    return inc.length * inc.friction * ss + (rt - rf) * (rt + rf)


@dataclass
class MomentumJacobian:
    d_varrho: sp.csr_matrix   # (E, V)
    d_phi: np.ndarray         # diagonal (E,)
    d_from: np.ndarray        # w.r.t. from-end ratio (E,)
    d_to: np.ndarray          # w.r.t. to-end ratio (E,)


def momentum_jacobian(varrho, phi, inc: IncidenceMatrices, ratios=None, smoothing: float = 0.0):
    af, at = _ratios(inc, ratios)
    varrho = np.asarray(varrho, dtype=float)
    rf, rt = af * varrho[inc.tail], at * varrho[inc.head]
    _, dss = signed_square(np.asarray(phi, dtype=float), smoothing)
    e = np.arange(inc.n_edges)
    dv = sp.csr_matrix((np.concatenate([2 * rt * at, -2 * rf * af]),
                        (np.concatenate([e, e]), np.concatenate([inc.head, inc.tail]))),
                       shape=(inc.n_edges, inc.n_nodes))
    return MomentumJacobian(dv, inc.length * inc.friction * dss,
                            -2 * rf * varrho[inc.tail], 2 * rt * varrho[inc.head])


def compressor_power(alpha, flow, comp: Compressor):
    """Station power eps*|flow|*(alpha^h - 1) for mass flow ``flow`` in kg/s."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 1.0):
        raise ValueError("compression ratio below 1")
    return comp.epsilon * np.abs(flow) * (alpha ** comp.exponent - 1.0)


def compressor_power_grad(alpha, flow, comp: Compressor):
    """Partial derivatives of :func:`compressor_power` in (alpha, flow)."""
    alpha = np.asarray(alpha, dtype=float)
    h = comp.exponent
    d_alpha = comp.epsilon * np.abs(flow) * h * alpha ** (h - 1.0)
    d_flow = comp.epsilon * np.sign(flow) * (alpha ** h - 1.0)
    return d_alpha, d_flow


def pressure_bounds(varrho, inc: IncidenceMatrices, ratios, net: Network):
    """Stacked slacks [cap - rho_from; cap - rho_to; varrho - rho_min], feasible iff all >= 0."""
    rf, rt = edge_densities(varrho, inc, ratios)
    rmin = np.array([net.node(i).density_min for i in inc.node_ids])
    return np.concatenate([inc.density_max - rf, inc.density_max - rt, np.asarray(varrho) - rmin])


def boundary_flows(phi, edge_rate, inc: IncidenceMatrices) -> BoundaryFlows:
    """Recover inlet/outlet flux from the average flux and edge density rate."""
    minus = -0.25 * inc.length * np.asarray(edge_rate, dtype=float)
    return BoundaryFlows(phi - minus, phi + minus, minus)


def linepack(varrho, inc: IncidenceMatrices, ratios=None):
    """Per-edge stored mass (L X / 2)(rho_from + rho_to), non-dimensional."""
    rf, rt = edge_densities(varrho, inc, ratios)
    return 0.5 * inc.length * inc.area * (rf + rt)


def slack_withdrawal(phi, edge_rate, inc: IncidenceMatrices):
    """Net withdrawal at slack nodes; injections are negative."""
    minus = -0.25 * inc.length * np.asarray(edge_rate, dtype=float)
    return inc.A_sigma @ (inc.area * phi) + abs(inc.A_sigma) @ (inc.area * minus)


def _steady_system(z, sigma, q, inc, ratios, smoothing):
    m = inc.n_nonslack
    rho, phi = z[:m], z[m:]
    varrho = np.concatenate([sigma, rho])
    f = np.concatenate([inc.A_q @ (inc.area * phi) - q,
                        momentum_residual(varrho, phi, inc, ratios, smoothing)])
    mj = momentum_jacobian(varrho, phi, inc, ratios, smoothing)
    J = sp.bmat([[None, inc.A_q @ sp.diags(inc.area)],
                 [mj.d_varrho[:, inc.n_slack:], sp.diags(mj.d_phi)]], format="csc")
    if m == 0:
        J = sp.csc_matrix(sp.diags(mj.d_phi))
    return f, J


def steady_state_solve(net: Network, sigma, q, alpha=None, inc: Optional[IncidenceMatrices] = None,
                       tol: float = 1e-10, max_iter: int = 100, smoothing: float = 1e-8,
                       guess: Optional[SystemState] = None) -> SystemState:
    """Newton solve of the algebraic balance with all time derivatives zero.

    ``sigma`` holds slack densities, ``q`` non-slack withdrawals and ``alpha``
    one ratio per compressor.  Raises :class:`SteadyStateError` when the
    residual does not fall below ``tol``.
    """
    if not net.is_nondim:
        raise ValueError("steady_state_solve needs a non-dimensional network")
    inc = inc if inc is not None else build_incidence(net)
    ratios = inc.edge_ratios(alpha)
    sigma = np.asarray(sigma, dtype=float).reshape(inc.n_slack)
    q = np.asarray(q, dtype=float).reshape(inc.n_nonslack)
    m = inc.n_nonslack
    if guess is not None:
        z = np.concatenate([guess.rho, guess.phi])
    else:
        Aq = (inc.A_q @ sp.diags(inc.area)).tocsr()
        phi0 = spla.lsqr(Aq, q, atol=1e-14, btol=1e-14)[0] if m else np.zeros(inc.n_edges)
        z = np.concatenate([np.full(m, sigma.mean()), phi0])
    f, J = _steady_system(z, sigma, q, inc, ratios, smoothing)
    norm = np.abs(f).max(initial=0.0)
    for _ in range(max_iter):
        if norm < tol:
            break
        try:
            dz = spla.spsolve(J, -f)
        except RuntimeError as exc:  # singular factor
            raise SteadyStateError(f"singular Jacobian: {exc}", norm)
        if not np.all(np.isfinite(dz)):
            raise SteadyStateError("singular Jacobian", norm)
        step = 1.0
        drho = dz[:m]
        neg = drho < 0
        if np.any(neg):
            step = min(1.0, 0.9 * np.min(z[:m][neg] / -drho[neg]))
        while True:
            zt = z + step * dz
            ft, Jt = _steady_system(zt, sigma, q, inc, ratios, smoothing)
            nt = np.abs(ft).max(initial=0.0)
            if nt < (1 - 1e-4 * step) * norm or step < 1e-8:
                break
            step *= 0.5
        z, f, J, norm = zt, ft, Jt, nt
    # report the unsmoothed residual
    varrho = np.concatenate([sigma, z[:m]])
    exact = np.concatenate([inc.A_q @ (inc.area * z[m:]) - q,
                            momentum_residual(varrho, z[m:], inc, ratios)])
    res = np.abs(exact).max(initial=0.0)
    if res > tol:
        raise SteadyStateError("steady state did not converge", res)
    return SystemState(z[:m].copy(), z[m:].copy())
