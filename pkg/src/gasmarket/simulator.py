"""Implicit-trapezoid time integration of the lumped network model.

The integrator is independent of the optimizer: it marches the mass
balance with the trapezoid rule and enforces momentum at every step with
Newton's method.  :func:`validate_solution` replays an optimizer plan through
it to expose discretization error and hidden constraint violations.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .collocation import periodic_interpolator
from .dynamics import momentum_jacobian, momentum_residual
from .network import IncidenceMatrices, Network, build_incidence


class SimulationError(RuntimeError):
    def __init__(self, step, residual):
        super().__init__(f"Newton failed at step {step} (residual {residual:.3e})")
        self.step = step
        self.residual = residual


def _const(v):
    v = np.asarray(v, dtype=float)
    return lambda t: v


@dataclass
class SimScenario:
    """Forward simulation setup on a non-dimensional network.

    ``sigma``, ``q`` and ``alpha`` map a non-dimensional time to slack
    densities, non-slack withdrawals and compressor ratios; arrays are taken
    as constants.
    """

    network: Network
    rho0: np.ndarray
    sigma: Callable
    q: Callable
    alpha: Optional[Callable] = None
    step: float = 1.0
    duration: float = 1.0
    phi0: Optional[np.ndarray] = None
    newton_tol: float = 1e-12
    max_newton: int = 30

    def __post_init__(self):
        if not self.network.is_nondim:
            raise ValueError("simulation needs a non-dimensional network")
        if not self.step > 0:
            raise ValueError("step size must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        for name in ("sigma", "q", "alpha"):
            v = getattr(self, name)
            if v is not None and not callable(v):
                setattr(self, name, _const(v))
        if self.alpha is None:
            self.alpha = _const(np.ones(len(self.network.compressors)))


@dataclass
class Trajectory:
    times: np.ndarray        # (n+1,)
    rho: np.ndarray          # (M, n+1)
    phi: np.ndarray          # (E, n+1)
    sigma: np.ndarray        # (S, n+1)
    q: np.ndarray            # (M, n+1)
    alpha: np.ndarray        # (C, n+1)
    inlet: np.ndarray        # (E, n+1)
    outlet: np.ndarray       # (E, n+1)
    linepack: np.ndarray     # (n+1,) total stored mass
    slack_inflow: np.ndarray  # (S, n) mean inflow over each step
    withdrawal: np.ndarray   # (n,) mean total non-slack withdrawal over each step
    incidence: IncidenceMatrices = field(repr=False, default=None)


def consistent_flux(varrho, inc: IncidenceMatrices, ratios=None):
    """Average flux solving the momentum relation exactly for given densities."""
    af, at = ratios if ratios is not None else inc.edge_ratios()
    rf, rt = af * varrho[inc.tail], at * varrho[inc.head]
    d = (rf - rt) * (rf + rt)
    return np.sign(d) * np.sqrt(np.abs(d) / (inc.length * inc.friction))


def _edge_sum(varrho, inc, ratios):
    af, at = ratios
    return af * varrho[inc.tail] + at * varrho[inc.head]


def simulate(sc: SimScenario) -> Trajectory:
    net = sc.network
    inc = build_incidence(net)
    S, M, E = inc.n_slack, inc.n_nonslack, inc.n_edges
    nsteps = max(1, int(round(sc.duration / sc.step)))
    h = sc.duration / nsteps
    t = np.linspace(0.0, sc.duration, nsteps + 1)
    sig = np.column_stack([np.asarray(sc.sigma(ti), dtype=float).reshape(S) for ti in t])
    qq = np.column_stack([np.asarray(sc.q(ti), dtype=float).reshape(M) for ti in t])
    C = len(net.compressors)
    al = np.column_stack([np.asarray(sc.alpha(ti), dtype=float).reshape(C) for ti in t]) if C else np.zeros((0, t.size))
    if np.any(al < 1.0):
        raise ValueError("compression ratio below 1")
    rho = np.zeros((M, nsteps + 1))
    phi = np.zeros((E, nsteps + 1))
    rho[:, 0] = sc.rho0
    ratios0 = inc.edge_ratios(al[:, 0])
    vr0 = np.concatenate([sig[:, 0], rho[:, 0]])
    if sc.phi0 is None:
        phi[:, 0] = consistent_flux(vr0, inc, ratios0)
    else:
        phi[:, 0] = sc.phi0
        res = np.abs(momentum_residual(vr0, phi[:, 0], inc, ratios0)).max(initial=0.0)
        if res > 1e-8:
            raise ValueError(f"initial state violates momentum balance (residual {res:.2e})")
    Aq = inc.A_q.tocsr()
    absAq = abs(Aq)
    cap = 0.25 * inc.area * inc.length
    X = inc.area
    Aqx = (Aq @ sp.diags(X)).tocsr()
    r_prev = _edge_sum(vr0, inc, ratios0)
    flux_prev = Aqx @ phi[:, 0] - qq[:, 0]
    for n in range(nsteps):
        ratios = inc.edge_ratios(al[:, n + 1])
        af, at = ratios
        Bq = abs(inc.B(ratios))[S:].T.tocsr()          # d r / d rho   (E, M)
        z = np.concatenate([rho[:, n], phi[:, n]])
        norm = np.inf
        for it in range(sc.max_newton):
            vr = np.concatenate([sig[:, n + 1], z[:M]])
            if np.any(vr <= 0):
                raise SimulationError(n, norm)
            r = _edge_sum(vr, inc, ratios)
            fm = absAq @ (cap * (r - r_prev)) / h - 0.5 * (Aqx @ z[M:] - qq[:, n + 1] + flux_prev)
            fp = momentum_residual(vr, z[M:], inc, ratios)
            F = np.concatenate([fm, fp])
            norm = np.abs(F).max(initial=0.0)
            if norm < sc.newton_tol * max(1.0, np.abs(r).max()):
                break
            mj = momentum_jacobian(vr, z[M:], inc, ratios, smoothing=1e-10)
            J = sp.bmat([[absAq @ sp.diags(cap / h) @ Bq, -0.5 * Aqx],
                         [mj.d_varrho[:, S:], sp.diags(mj.d_phi)]], format="csc")
            dz = spla.spsolve(J, -F)
            if not np.all(np.isfinite(dz)):
                raise SimulationError(n, norm)
            step = 1.0
            neg = dz[:M] < 0
            if np.any(neg):
                step = min(1.0, 0.9 * np.min(z[:M][neg] / -dz[:M][neg]))
            z = z + step * dz
        else:
            raise SimulationError(n, norm)
        rho[:, n + 1], phi[:, n + 1] = z[:M], z[M:]
        vr = np.concatenate([sig[:, n + 1], z[:M]])
        r_prev = _edge_sum(vr, inc, ratios)
        flux_prev = Aqx @ z[M:] - qq[:, n + 1]
    return _finish(t, rho, phi, sig, qq, al, inc)


def _finish(t, rho, phi, sig, qq, al, inc):
    r = np.zeros((inc.n_edges, t.size))
    for n in range(t.size):
        ratios = inc.edge_ratios(al[:, n])
        r[:, n] = _edge_sum(np.concatenate([sig[:, n], rho[:, n]]), inc, ratios)
    dt = np.diff(t)
    rate = np.diff(r, axis=1) / dt
    rate_pts = np.concatenate([rate, rate[:, -1:]], axis=1)
    minus = -0.25 * inc.length[:, None] * rate_pts
    phi_mid = 0.5 * (phi[:, 1:] + phi[:, :-1])
    minus_mid = -0.25 * inc.length[:, None] * rate
    As = inc.A_sigma
    slack_in = -(As @ (inc.area[:, None] * phi_mid) + abs(As) @ (inc.area[:, None] * minus_mid))
    wd = 0.5 * (qq[:, 1:] + qq[:, :-1]).sum(axis=0)
    lp = 0.5 * (inc.length * inc.area) @ r
    return Trajectory(t, rho, phi, sig, qq, al, phi - minus, phi + minus, lp, np.asarray(slack_in), wd, inc)


@dataclass
class ValidationReport:
    max_deviation: float
    rho_deviation: float
    phi_deviation: float
    periodicity_gap: float
    violations: dict
    ok: bool
    trajectory: Trajectory = field(repr=False, default=None)


def _rel_dev(a, b):
    scale = np.abs(b).max(initial=0.0)
    diff = np.abs(a - b).max(initial=0.0)
    return diff / scale if scale > 0 else diff


def _hold_interpolator(values, grid):
    """Left-constant lookup of grid values, wrapped onto the circle."""
    values = np.asarray(values, dtype=float)

    def f(t):
        k = np.floor(np.mod(t, grid.horizon) / grid.spacing + 1e-9).astype(int) % grid.n_points
        return values[..., k]
    return f


def validate_solution(solution, net: Optional[Network] = None, tol: float = 1e-3,
                      refine: int = 8, controls: str = "linear") -> ValidationReport:
    """Replay an optimizer plan through the simulator and compare.

    Controls are interpolated on the collocation circle, either piecewise
    linearly (``controls="linear"``) or held constant over each grid
    interval (``"hold"``, which matches the forward difference of the
    transcription).  The run starts from the optimizer's densities at the
    first grid point and covers the full transcribed horizon with ``refine``
    steps per grid interval.
    """
    if refine < 4:
        raise ValueError("validation needs at least 4 simulation steps per grid interval")
    if controls not in ("linear", "hold"):
        raise ValueError(f"unknown control interpolation {controls!r}")
    interp = periodic_interpolator if controls == "linear" else _hold_interpolator
    nlp = solution.problem
    net = net if net is not None else nlp.net
    grid = nlp.grid
    a = solution.arrays
    sc = SimScenario(net, a["rho"][:, 0], interp(a["sigma"], grid), interp(a["q"], grid),
                     interp(a["alpha"], grid) if a["alpha"].size else None,
                     step=grid.spacing / refine, duration=grid.horizon)
    tr = simulate(sc)
    idx = np.arange(grid.n_points) * refine
    drho = _rel_dev(tr.rho[:, idx], a["rho"])
    dphi = _rel_dev(tr.phi[:, idx], a["phi"])
    gap = _rel_dev(tr.rho[:, -1], tr.rho[:, 0])
    viol = constraint_violations(tr, net)
    worst = max(viol.values(), default=0.0)
    dev = max(drho, dphi)
    return ValidationReport(dev, drho, dphi, gap, viol, dev <= tol and worst <= tol, tr)


def constraint_violations(tr: Trajectory, net: Network) -> dict:
    """Largest bound excess along a trajectory, relative to the bound."""
    inc = tr.incidence
    S = inc.n_slack
    nodes = [net.node(i) for i in inc.node_ids[S:]]
    lo = np.array([n.density_min for n in nodes])[:, None]
    hi = np.array([n.density_max for n in nodes])[:, None]
    out = {"density_min": float(np.max(np.maximum(lo - tr.rho, 0.0) / lo, initial=0.0))}
    with np.errstate(invalid="ignore"):
        excess = np.where(np.isfinite(hi), (tr.rho - hi) / hi, 0.0)
    out["density_max"] = float(np.max(np.maximum(excess, 0.0), initial=0.0))
    maop = 0.0
    for n in range(tr.times.size):
        af, at = inc.edge_ratios(tr.alpha[:, n])
        vr = np.concatenate([tr.sigma[:, n], tr.rho[:, n]])
        ends = np.maximum(af * vr[inc.tail], at * vr[inc.head])
        fin = np.isfinite(inc.density_max)
        if np.any(fin):
            maop = max(maop, float(np.max(np.maximum(ends[fin] / inc.density_max[fin] - 1.0, 0.0))))
    out["maop"] = maop
    power = 0.0
    for c, comp in enumerate(net.compressors):
        if not np.isfinite(comp.power_max):
            continue
        e = int(inc.comp_edge[c])
        flow = np.abs(tr.phi[e]) * inc.area[e] * net.scaling.mass_flow
        p = comp.epsilon * flow * (tr.alpha[c] ** comp.exponent - 1.0)
        power = max(power, float(np.max(np.maximum(p / comp.power_max - 1.0, 0.0))))
    out["power"] = power
    return out


def trajectory_from_solution(solution, report_only: bool = True) -> Trajectory:
    """Optimizer states as a :class:`Trajectory` on the grid points.

    With ``report_only`` the points past the data horizon (the closing ramp
    of an extended horizon) are dropped.
    """
    nlp = solution.problem
    a = solution.arrays
    n = nlp.data.n_report if report_only else nlp.grid.n_points
    cut = slice(0, n)
    return Trajectory(nlp.grid.points[cut].copy(), a["rho"][:, cut], a["phi"][:, cut], a["sigma"][:, cut],
                      a["q"][:, cut], a["alpha"][:, cut], a["inlet"][:, cut], a["outlet"][:, cut],
                      a["linepack"][:, cut].sum(axis=0), -a["slack_withdrawal"][:, cut],
                      a["q"][:, cut].sum(axis=0), nlp.inc)


def write_trajectory_csv(path, tr: Trajectory, net: Network, si: bool = True) -> None:
    """Columns: time, node densities, edge inlet/outlet flows, linepack."""
    inc = tr.incidence
    sc = net.scaling
    ts = sc.time if si else 1.0
    rs = sc.density if si else 1.0
    fs = sc.mass_flow if si else 1.0
    header = ["time"] + [f"rho:{i}" for i in inc.node_ids] \
        + [f"inlet:{e}" for e in inc.edge_ids] + [f"outlet:{e}" for e in inc.edge_ids] + ["linepack"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n, t in enumerate(tr.times):
            dens = np.concatenate([tr.sigma[:, n], tr.rho[:, n]]) * rs
            row = [t * ts, *dens, *(tr.inlet[:, n] * inc.area * fs), *(tr.outlet[:, n] * inc.area * fs),
                   tr.linepack[n] * rs * sc.length * sc.area]
            w.writerow([f"{v:.12g}" for v in row])
