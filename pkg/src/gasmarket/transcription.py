"""Circular-collocation transcription of the market-clearing control problem.

The decision vector is time-major: at each collocation point it holds the
non-slack densities, the average edge fluxes, the compressor ratios and the
cleared quantity of every transfer node that is a decision variable.  Time
derivatives are the circular forward differences, so periodicity needs no
extra constraints.

Dual convention (see :mod:`gasmarket.ipm`): ``L = f - y'c``.  Mass rows are
scaled so that the partial derivative of a row with respect to the nodal
withdrawal is +1, which makes the locational trade value
``lambda = -y / (S * w_k)`` with ``S`` the objective scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp

from .assembly import BIL, LIN, MOM, PWR, SQ1, SQ2, TermBuilder
from .collocation import CollocationGrid, build_grid, extended_hourly
from .dynamics import SteadyStateError, steady_state_solve
from .ipm import SolveResult, SolverOptions, solve
from .market import MarketData, MarketError
from .network import Network, build_incidence


class TranscriptionError(ValueError):
    pass


@dataclass
class TranscriptionOptions:
    smoothing: float = 1e-6
    extension: str = "auto"            # auto | on | off
    tau_hours: Optional[float] = None  # extension length; a quarter horizon when unset
    objective_scale: Optional[float] = None

    def __post_init__(self):
        if self.extension not in ("auto", "on", "off"):
            raise TranscriptionError("extension must be auto, on or off")
        if self.tau_hours is not None and not self.tau_hours > 0:
            raise TranscriptionError("extension length must be positive")
        if not self.smoothing >= 0:
            raise TranscriptionError("smoothing must be nonnegative")


@dataclass
class HorizonData:
    """Parameters sampled on the transcribed (possibly extended) grid, non-dimensional."""

    grid: CollocationGrid
    horizon: float          # reported horizon T
    tau: float              # extension length, 0 when none
    n_report: int           # grid points inside [0, T)
    hour_length: float
    sigma: np.ndarray       # (S, N)
    qbar: np.ndarray        # (M, N) baseline withdrawals at non-slack nodes
    slack_base: np.ndarray  # (S, N) baseline withdrawals at slack nodes
    price: np.ndarray       # (G_all, N)
    qmin: np.ndarray
    qmax: np.ndarray


class Layout:
    def __init__(self, M, E, C, G, N):
        self.M, self.E, self.C, self.G, self.N = M, E, C, G, N
        self.block = M + E + C + G
        self.n = self.block * N

    def rho(self, j, k):
        return np.asarray(k) * self.block + j

    def phi(self, e, k):
        return np.asarray(k) * self.block + self.M + e

    def alpha(self, c, k):
        return np.asarray(k) * self.block + self.M + self.E + c

    def qty(self, g, k):
        return np.asarray(k) * self.block + self.M + self.E + self.C + g

    def split(self, x):
        X = np.asarray(x).reshape(self.N, self.block).T
        M, E, C = self.M, self.E, self.C
        return X[:M], X[M:M + E], X[M + E:M + E + C], X[M + E + C:]


def _is_periodic(series_list) -> bool:
    for s in series_list:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if s.ndim and s.shape[-1] > 1 and not np.allclose(s[..., 0], s[..., -1]):
            return False
    return True


def horizon_data(net: Network, market: MarketData, grid: CollocationGrid,
                 options: TranscriptionOptions) -> HorizonData:
    """Sample every hourly input onto the grid, adding a closing ramp when needed."""
    if not net.is_nondim:
        raise TranscriptionError("transcription needs a non-dimensional network")
    sc = net.scaling
    hour = market.hour_seconds / sc.time
    T = market.hours * hour
    if not math.isclose(grid.horizon, T, rel_tol=1e-9):
        raise TranscriptionError(f"grid horizon {grid.horizon} does not match {market.hours} data hours ({T})")
    slack = net.slack_nodes
    nonslack = net.nonslack_nodes
    transfers = market.transfers
    sig_h = np.array([market.hourly(n.slack_density) for n in slack])
    qb_h = np.array([market.baseline_series(n.id) for n in nonslack]).reshape(len(nonslack), market.hours)
    sb_h = np.array([market.baseline_series(n.id) for n in slack]).reshape(len(slack), market.hours)
    pr_h = np.array([market.hourly(t.price) for t in transfers]).reshape(len(transfers), market.hours)
    lo_h = np.array([market.hourly(t.qty_min) for t in transfers]).reshape(len(transfers), market.hours)
    hi_h = np.array([market.hourly(t.qty_max) for t in transfers]).reshape(len(transfers), market.hours)
    extend = options.extension == "on" or (
        options.extension == "auto" and not _is_periodic([sig_h, qb_h, sb_h, pr_h, lo_h, hi_h]))
    n = grid.n_points
    tau = 0.0
    if extend:
        tau_h = options.tau_hours if options.tau_hours is not None else market.hours / 4.0
        steps = max(1, int(round(tau_h * hour / grid.spacing)))
        tau = steps * grid.spacing
        g = build_grid(T + tau, n + steps)
    else:
        g = grid
    t = g.points
    flow = sc.mass_flow

    def samp(a):
        if a.size == 0:
            return np.zeros(a.shape[:-1] + (g.n_points,))
        if tau:
            return extended_hourly(a, t, T, tau, hour)
        from .collocation import sample_hourly
        return sample_hourly(a, t, hour)

    return HorizonData(g, T, tau, n, hour, samp(sig_h), samp(qb_h) / flow, samp(sb_h) / flow,
                       samp(pr_h), samp(lo_h) / flow, samp(hi_h) / flow)


class NlpProblem:
    """Sparse NLP built from a refined, non-dimensional network and market data.

    Implements the solver adapter contract of :mod:`gasmarket.ipm`.
    """

    def __init__(self, net: Network, market: MarketData, grid: CollocationGrid,
                 options: Optional[TranscriptionOptions] = None, pin: Optional[np.ndarray] = None):
        self.options = options or TranscriptionOptions()
        market.check_against(net)
        for t in market.transfers:
            if np.any(t.qty_min > t.qty_max):
                raise MarketError(f"transfer {t.id}: qty_min exceeds qty_max")
        self.net, self.market = net, market
        self.inc = inc = build_incidence(net)
        self.data = hd = horizon_data(net, market, grid, self.options)
        self.report_grid = grid
        self.grid = g = hd.grid
        S, M, E, C = inc.n_slack, inc.n_nonslack, inc.n_edges, len(net.compressors)
        N = g.n_points
        slack_ids = {n.id: i for i, n in enumerate(net.slack_nodes)}
        self.decision = [i for i, t in enumerate(market.transfers) if t.node not in slack_ids]
        self.suppliers = [i for i, t in enumerate(market.transfers) if t.node in slack_ids]
        G = len(self.decision)
        self.layout = L = Layout(M, E, C, G, N)
        self.n = L.n
        h = g.spacing
        w = g.weights
        k = np.arange(N)
        kn = (k + 1) % N

        prices = [np.abs(hd.price[i]) for i in range(len(market.transfers))]
        pmax = max((float(np.max(p * w)) for p in prices), default=0.0)
        self.scale = S_obj = options_scale = (self.options.objective_scale
                                              or (1.0 / pmax if pmax > 0 else 1.0))
        del options_scale

        comp_at = {}
        for ci, (e, end) in enumerate(zip(inc.comp_edge, inc.comp_end)):
            comp_at[(int(e), int(end))] = ci

        def end_node(e, end):
            return int(inc.tail[e] if end == 0 else inc.head[e])

        def add_end(b, rows, coef, e, end, kk):
            """coef * (ratio * density) at edge end, times kk."""
            nd = end_node(e, end)
            ci = comp_at.get((e, end))
            coef = np.broadcast_to(np.asarray(coef, dtype=float), rows.shape)
            if nd < S:
                sig = hd.sigma[nd, kk]
                if ci is None:
                    b.add_const(rows, coef * sig)
                else:
                    b.add(LIN, rows, L.alpha(ci, kk), coef * sig)
            else:
                r = L.rho(nd - S, kk)
                if ci is None:
                    b.add(LIN, rows, r, coef)
                else:
                    b.add(BIL, rows, r, coef, v=L.alpha(ci, kk))

        def add_end_sq(b, rows, coef, e, end):
            nd = end_node(e, end)
            ci = comp_at.get((e, end))
            if nd < S:
                sig2 = hd.sigma[nd, k] ** 2
                if ci is None:
                    b.add_const(rows, coef * sig2)
                else:
                    b.add(SQ1, rows, L.alpha(ci, k), coef * sig2)
            else:
                r = L.rho(nd - S, k)
                if ci is None:
                    b.add(SQ1, rows, r, coef)
                else:
                    b.add(SQ2, rows, r, coef, v=L.alpha(ci, k))

        def add_rate(b, rows, coef, e):
            """coef * d/dt (rho_from + rho_to) on edge e by the circular difference."""
            for end in (0, 1):
                add_end(b, rows, coef / h, e, end, kn)
                add_end(b, rows, -coef / h, e, end, k)

        # equalities: per time point, M mass rows then E momentum rows
        self.m_eq = (M + E) * N
        eq = TermBuilder(self.m_eq)
        mass_row = lambda j: k * (M + E) + j
        mom_row = lambda e: k * (M + E) + M + e
        for e in range(E):
            for end, sgn in ((0, 1.0), (1, -1.0)):   # -A_q X phi: +X at the tail, -X at the head
                nd = end_node(e, end)
                if nd < S:
                    continue
                rows = mass_row(nd - S)
                add_rate(eq, rows, 0.25 * inc.area[e] * inc.length[e], e)
                eq.add(LIN, rows, L.phi(e, k), sgn * inc.area[e])
            rows = mom_row(e)
            eq.add(MOM, rows, L.phi(e, k), inc.length[e] * inc.friction[e])
            add_end_sq(eq, rows, 1.0, e, 1)
            add_end_sq(eq, rows, -1.0, e, 0)
        for j in range(M):
            eq.add_const(mass_row(j), hd.qbar[j])
        node_row = {nid: i - S for i, nid in enumerate(inc.node_ids)}
        for g_i, t_i in enumerate(self.decision):
            t = market.transfers[t_i]
            eq.add(LIN, mass_row(node_row[t.node]), L.qty(g_i, k), 1.0 if t.is_buyer else -1.0)
        if pin is not None:
            pin = np.asarray(pin, dtype=float)
            if pin.shape != (M,):
                raise TranscriptionError(f"pinned state has {pin.size} entries, network has {M} free densities")
        self.pin = pin
        self.mass_rows = np.stack([mass_row(j) for j in range(M)]) if M else np.zeros((0, N), dtype=int)

        # inequalities
        ineq_specs = []   # (kind tag, payload)
        for ci, comp in enumerate(net.compressors):
            e, end = int(inc.comp_edge[ci]), int(inc.comp_end[ci])
            if math.isfinite(inc.density_max[e]):
                ineq_specs.append(("maop", ci))
            if math.isfinite(comp.power_max):
                ineq_specs.append(("power", ci))
        for si in self.suppliers:
            t = market.transfers[si]
            if np.all(np.isfinite(hd.qmin[si])):
                ineq_specs.append(("smin", si))
            if np.all(np.isfinite(hd.qmax[si])):
                ineq_specs.append(("smax", si))
        self.m_ineq = len(ineq_specs) * N
        iq = TermBuilder(self.m_ineq)
        self.ineq_kinds = []
        obj = TermBuilder(1)
        zero_rows = np.zeros(N, dtype=np.int64)

        def add_inflow(b, rows, coef, i):
            """coef * (slack inflow) at slack node i: -A_sigma X phi + 1/4 |A_sigma| X Lambda rate."""
            for e in range(E):
                if inc.tail[e] == i:
                    sgn = 1.0
                elif inc.head[e] == i:
                    sgn = -1.0
                else:
                    continue
                b.add(LIN, rows, L.phi(e, k), coef * sgn * inc.area[e])
                add_rate(b, rows, coef * 0.25 * inc.area[e] * inc.length[e], e)

        for r, (tag, p) in enumerate(ineq_specs):
            rows = r * N + k
            self.ineq_kinds.append((tag, p))
            if tag == "maop":
                e, end = int(inc.comp_edge[p]), int(inc.comp_end[p])
                iq.add_const(rows, np.full(N, inc.density_max[e]))
                add_end(iq, rows, -1.0, e, end, k)
            elif tag == "power":
                comp = net.compressors[p]
                e = int(inc.comp_edge[p])
                eps = comp.epsilon * net.scaling.mass_flow / comp.power_max
                iq.add_const(rows, np.ones(N))
                iq.add(PWR, rows, L.phi(e, k), -eps * inc.area[e], v=L.alpha(p, k), expo=comp.exponent)
            else:
                t = market.transfers[p]
                i = slack_ids[t.node]
                sgn = 1.0 if tag == "smin" else -1.0
                add_inflow(iq, rows, sgn, i)
                if tag == "smin":
                    iq.add_const(rows, hd.slack_base[i] - hd.qmin[p])
                else:
                    iq.add_const(rows, hd.qmax[p] - hd.slack_base[i])

        # objective: -S * (buyer value - seller cost)
        for g_i, t_i in enumerate(self.decision):
            t = market.transfers[t_i]
            sgn = -1.0 if t.is_buyer else 1.0
            obj.add(LIN, zero_rows, L.qty(g_i, k), sgn * S_obj * hd.price[t_i] * w)
        for si in self.suppliers:
            t = market.transfers[si]
            i = slack_ids[t.node]
            cw = S_obj * hd.price[si] * w
            add_inflow(obj, zero_rows, cw, i)
            obj.add_const(zero_rows, cw * hd.slack_base[i])

        delta = self.options.smoothing
        self.eq_terms = eq.build(self.n, delta)
        self.ineq_terms = iq.build(self.n, delta)
        self.obj_terms = obj.build(self.n, delta)

        # bounds
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        nodes = [net.node(nid) for nid in inc.node_ids[S:]]
        rmin = np.array([n.density_min for n in nodes])
        rmax = np.array([n.density_max for n in nodes])
        for e in range(E):
            for end in (0, 1):
                nd = end_node(e, end)
                if nd >= S and (e, end) not in comp_at:
                    rmax[nd - S] = min(rmax[nd - S], inc.density_max[e])
        if np.any(rmin >= rmax):
            bad = [nodes[j].id for j in np.flatnonzero(rmin >= rmax)]
            raise TranscriptionError(f"empty density range at nodes {bad}")
        for j in range(M):
            lo[L.rho(j, k)] = rmin[j]
            hi[L.rho(j, k)] = rmax[j]
        for ci, comp in enumerate(net.compressors):
            lo[L.alpha(ci, k)] = 1.0
            hi[L.alpha(ci, k)] = comp.ratio_max
        for g_i, t_i in enumerate(self.decision):
            lo[L.qty(g_i, k)] = hd.qmin[t_i]
            hi[L.qty(g_i, k)] = hd.qmax[t_i]
        if pin is not None:
            # the pin is an equality carried as coincident bounds, so the solver
            # eliminates these variables and the match is exact
            idx = self.pin_index
            if np.any(pin < lo[idx] - 1e-9) or np.any(pin > hi[idx] + 1e-9):
                raise TranscriptionError("pinned state lies outside the density bounds")
            lo[idx] = hi[idx] = np.clip(pin, lo[idx], hi[idx])
        if np.any(lo > hi):
            raise TranscriptionError("variable bounds are inconsistent")
        self.x_lower, self.x_upper = lo, hi
        self.x0 = self._initial_guess()

    @property
    def pin_index(self) -> np.ndarray:
        """Decision-vector positions of the first-point non-slack densities."""
        return self.layout.rho(np.arange(self.layout.M), 0)

    def pin_duals(self, result: SolveResult) -> np.ndarray:
        """Objective sensitivity to the pinned densities (zeros when unpinned)."""
        if self.pin is None:
            return np.zeros(0)
        i = self.pin_index
        return result.z_lower[i] - result.z_upper[i]

    # -- initialization ----------------------------------------------------------------

    def _initial_guess(self):
        L, hd, inc = self.layout, self.data, self.inc
        x = np.zeros(self.n)
        k = np.arange(L.N)
        sigma = hd.sigma.mean(axis=1)
        q = hd.qbar.mean(axis=1)
        try:
            st = steady_state_solve(self.net, sigma, q, inc=inc)
            rho, phi = st.rho, st.phi
        except (SteadyStateError, ValueError):
            rho = np.full(L.M, sigma.mean() if sigma.size else 1.0)
            phi = np.zeros(L.E)
        for j in range(L.M):
            x[L.rho(j, k)] = rho[j]
        for e in range(L.E):
            x[L.phi(e, k)] = phi[e]
        for c in range(L.C):
            x[L.alpha(c, k)] = 1.0
        if self.pin is not None:
            for j in range(L.M):
                x[L.rho(j, k)] = self.pin[j]
        return np.clip(x, self.x_lower, self.x_upper)

    # -- adapter contract --------------------------------------------------------------

    def objective(self, x):
        return float(self.obj_terms.values(x)[0])

    def gradient(self, x):
        return np.asarray(self.obj_terms.jacobian(x).toarray()).ravel()

    def constraints(self, x):
        return np.concatenate([self.eq_terms.values(x), self.ineq_terms.values(x)])

    def jacobian(self, x):
        return sp.vstack([self.eq_terms.jacobian(x), self.ineq_terms.jacobian(x)], format="csr")

    def hessian(self, x, y, obj_factor):
        y = np.asarray(y, dtype=float)
        H = self.eq_terms.hessian(x, -y[: self.m_eq])
        if self.m_ineq:
            H = H + self.ineq_terms.hessian(x, -y[self.m_eq:])
        return H + self.obj_terms.hessian(x, [obj_factor])

    @property
    def jacobian_nnz(self) -> int:
        return self.eq_terms.jacobian_nnz + self.ineq_terms.jacobian_nnz

    @property
    def jacobian_density(self) -> float:
        m = self.m_eq + self.m_ineq
        return self.jacobian_nnz / float(m * self.n) if m and self.n else 0.0

    def mass_conservation_terms(self, x):
        """Per time point: total non-slack withdrawal and total slack inflow (non-dimensional)."""
        sol = self.unpack_arrays(x)
        inflow = -sol["slack_withdrawal"].sum(axis=0)
        return sol["q"].sum(axis=0), inflow

    def unpack_arrays(self, x) -> dict:
        L, inc, hd = self.layout, self.inc, self.data
        rho, phi, alpha, qty = L.split(x)
        S = inc.n_slack
        varrho = np.vstack([hd.sigma, rho])
        af = np.ones((L.E, L.N))
        at = np.ones((L.E, L.N))
        for ci, (e, end) in enumerate(zip(inc.comp_edge, inc.comp_end)):
            (af if end == 0 else at)[e] = alpha[ci]
        rf = af * varrho[inc.tail]
        rt = at * varrho[inc.head]
        r = rf + rt
        rate = (np.roll(r, -1, axis=1) - r) / self.grid.spacing
        minus = -0.25 * inc.length[:, None] * rate
        q = hd.qbar.copy()
        row = {nid: i - S for i, nid in enumerate(inc.node_ids)}
        for g_i, t_i in enumerate(self.decision):
            t = self.market.transfers[t_i]
            q[row[t.node]] += qty[g_i] if t.is_buyer else -qty[g_i]
        As = inc.A_sigma
        slack_w = As @ (inc.area[:, None] * phi) + abs(As) @ (inc.area[:, None] * minus)
        return dict(rho=rho, phi=phi, alpha=alpha, qty=qty, sigma=hd.sigma, rho_from=rf, rho_to=rt,
                    inlet=phi - minus, outlet=phi + minus, q=q, slack_withdrawal=np.asarray(slack_w),
                    linepack=0.5 * (inc.length * inc.area)[:, None] * r)


def transcribe(net: Network, market: MarketData, grid: CollocationGrid,
               options: Optional[TranscriptionOptions] = None) -> NlpProblem:
    return NlpProblem(net, market, grid, options)


@dataclass
class Solution:
    """Optimizer output on the transcribed grid plus SI views on [0, T)."""

    problem: NlpProblem
    result: SolveResult
    arrays: dict
    ltv: np.ndarray            # (M, N_report) currency per kg at non-slack nodes
    schedule: Dict[str, np.ndarray]   # transfer id -> kg/s on the reported points
    surplus: float             # currency, over [0, T)

    @property
    def status(self) -> str:
        return self.result.status

    @property
    def n_report(self) -> int:
        return self.problem.data.n_report

    @property
    def times(self) -> np.ndarray:
        """Reported grid times in seconds."""
        g = self.problem.grid
        return g.points[: self.n_report] * self.problem.net.scaling.time

    def state_at(self, t_nondim: float) -> np.ndarray:
        """Non-slack densities at a time on the transcribed circle (linear interpolant)."""
        from .collocation import interpolate
        return interpolate(self.arrays["rho"], self.problem.grid, np.mod(t_nondim, self.problem.grid.horizon))


def extract_ltv(result: SolveResult, nlp: NlpProblem, grid: Optional[CollocationGrid] = None) -> np.ndarray:
    """Locational trade values at non-slack nodes, one column per grid point.

    Dividing the mass-row dual by the quadrature weight turns a per-interval
    sensitivity into a price per unit mass.
    """
    if result.status != "optimal":
        raise TranscriptionError(f"cannot price a {result.status} solution")
    g = grid or nlp.grid
    if g.n_points != nlp.grid.n_points:
        raise TranscriptionError("grid does not match the transcribed problem")
    y = result.y_eq[nlp.mass_rows]
    return -y / (nlp.scale * nlp.grid.weights[None, :])


def unpack(nlp: NlpProblem, result: SolveResult) -> Solution:
    arrays = nlp.unpack_arrays(result.x)
    nr = nlp.data.n_report
    flow = nlp.net.scaling.mass_flow
    qty = arrays["qty"]
    schedule = {}
    for g_i, t_i in enumerate(nlp.decision):
        schedule[nlp.market.transfers[t_i].id] = qty[g_i, :nr] * flow
    slack_idx = {n.id: i for i, n in enumerate(nlp.net.slack_nodes)}
    for si in nlp.suppliers:
        t = nlp.market.transfers[si]
        i = slack_idx[t.node]
        dev = -arrays["slack_withdrawal"][i] + nlp.data.slack_base[i]
        schedule[t.id] = dev[:nr] * flow
    ltv = extract_ltv(result, nlp)[:, :nr] if result.status == "optimal" else np.full((nlp.layout.M, nr), np.nan)
    w_si = nlp.grid.weights[:nr] * nlp.net.scaling.time
    surplus = 0.0
    for t in nlp.market.transfers:
        p = nlp.data.price[nlp.market.transfers.index(t), :nr]
        v = float(np.sum(p * schedule[t.id] * w_si))
        surplus += v if t.is_buyer else -v
    return Solution(nlp, result, arrays, ltv, schedule, surplus)


def optimize(net: Network, market: MarketData, grid: CollocationGrid,
             options: Optional[TranscriptionOptions] = None,
             solver_options: Optional[SolverOptions] = None, pin=None) -> Solution:
    nlp = NlpProblem(net, market, grid, options, pin=pin)
    return unpack(nlp, solve(nlp, solver_options))


def shift_market(market: MarketData, hours: int) -> MarketData:
    """Roll all hourly series forward by ``hours`` (data for the next window)."""
    def roll(a):
        a = np.asarray(a, dtype=float)
        return a if a.size == 1 else np.roll(a, -hours)
    tr = tuple(replace(t, price=roll(t.price), qty_min=roll(t.qty_min), qty_max=roll(t.qty_max))
               for t in market.transfers)
    return MarketData(tr, {k: roll(v) for k, v in market.baseline.items()}, market.hours, market.hour_seconds)


def mpc_step(previous: Solution, new_market: MarketData, shift_hours: float,
             net: Optional[Network] = None, options: Optional[TranscriptionOptions] = None) -> NlpProblem:
    """Next rolling-horizon problem, its first state pinned to the previous plan at the shift."""
    prev = previous.problem
    net = net if net is not None else prev.net
    hour = prev.data.hour_length
    H = shift_hours * hour
    if not 0 <= H < prev.data.horizon:
        raise TranscriptionError("shift must lie in [0, T)")
    pin = previous.state_at(H)
    if build_incidence(net).n_nonslack != pin.size:
        raise TranscriptionError("network state dimension changed between rolling steps")
    return NlpProblem(net, new_market, prev.report_grid, options or prev.options, pin=pin)
