"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 solver did not reach an optimal (or
converged) state, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .collocation import build_grid
from .dynamics import SteadyStateError, steady_state_solve, linepack
from .io import (Config, InputError, config_from_dict, load_config, load_market, load_network,
                 network_scaling_table, read_baseline, scaling_for)
from .ipm import solve
from .kkt import verify_kkt
from .market import MarketData, MarketError, check_baseline_balance
from .network import Network, NetworkError, build_incidence, nondimensionalize, refine_network
from .simulator import (SimScenario, SimulationError, simulate, trajectory_from_solution,
                        validate_solution, write_trajectory_csv)
from .transcription import Solution, TranscriptionError, mpc_step, optimize, shift_market, unpack

log = logging.getLogger("gasmarket")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_INTERNAL = 0, 1, 2, 3
_INPUT_ERRORS = (InputError, NetworkError, MarketError, TranscriptionError, OSError)


# ------------------------------------------------------------------ helpers

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _fmt(v) -> str:
    return f"{float(v):.12g}"


class Run:
    """Collects the manifest of one command invocation."""

    def __init__(self, command: str, args, config: Config, out_dir: Path):
        self.command = command
        self.config = config
        self.out_dir = out_dir
        self.started = _now()
        self.t0 = time.perf_counter()
        self.inputs = {}
        for name in ("network", "bids", "baseline", "schedule", "ratios", "initial", "config"):
            p = getattr(args, name, None)
            if p:
                self.inputs[name] = {"path": str(p), "sha256": _sha256(p)}
        self.cli = {k: v for k, v in vars(args).items() if k not in ("func",)}
        self.status = "running"
        self.metrics: Dict[str, object] = {}
        self.outputs: List[str] = []
        self.extra: Dict[str, object] = {}

    def path(self, name: str, sub: Optional[str] = None) -> Path:
        d = self.out_dir / sub if sub else self.out_dir
        d.mkdir(parents=True, exist_ok=True)
        p = d / name
        self.outputs.append(str(p.relative_to(self.out_dir)))
        return p

    def write(self, exit_code: int) -> Path:
        doc = {
            "tool": "gasmarket", "version": __version__, "command": self.command,
            "inputs": self.inputs, "options": self.config.as_dict(), "cli": self.cli,
            "started": self.started, "finished": _now(),
            "wall_time_s": time.perf_counter() - self.t0,
            "status": self.status, "exit_code": exit_code, "metrics": self.metrics,
            "outputs": sorted(set(self.outputs)), **self.extra,
        }
        self.out_dir.mkdir(parents=True, exist_ok=True)
        p = self.out_dir / "manifest.json"
        with open(p, "w") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=False)
            fh.write("\n")
        return p


def _build_config(args) -> Config:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    run, tr, so = cfg.run, cfg.transcription, cfg.solver
    over_run = {k: getattr(args, k, None) for k in ("points", "segment_length", "mpc_steps", "shift_hours",
                                                    "horizon_hours", "hour_seconds", "sim_refine")}
    over_run = {k: v for k, v in over_run.items() if v is not None}
    if getattr(args, "no_validate", False):
        over_run["validate"] = False
    over_tr = {k: v for k, v in (("tau_hours", getattr(args, "tau_hours", None)),
                                 ("smoothing", getattr(args, "smoothing", None)),
                                 ("extension", getattr(args, "extension", None))) if v is not None}
    over_so = {k: v for k, v in (("kkt_tolerance", getattr(args, "tolerance", None)),
                                 ("max_iterations", getattr(args, "max_iterations", None)),
                                 ("hessian", getattr(args, "hessian", None))) if v is not None}
    try:
        return Config(replace(run, **over_run), replace(tr, **over_tr), replace(so, **over_so))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(str(exc)) from None


def _prepare_network(args, cfg: Config):
    """Load, refine and scale the network; returns (input network, nondim refined network)."""
    net = load_network(args.network)
    if net.is_nondim:
        nd = refine_network(net, cfg.run.segment_length)
    else:
        table = dict(network_scaling_table(args.network) or {})
        table.update(cfg.run.scaling or {})
        nd = nondimensionalize(refine_network(net, cfg.run.segment_length), scaling_for(net, table))
    return net, nd


def _grid(nd: Network, market: MarketData, cfg: Config):
    hour = market.hour_seconds / nd.scaling.time
    return build_grid(market.hours * hour, cfg.run.points)


# ------------------------------------------------------------ output writers

def _hour_of(times_s, hour_seconds):
    return np.floor(np.asarray(times_s) / hour_seconds + 1e-9).astype(int)


def write_schedule(path, sol: Solution, market: MarketData):
    """Hourly mean cleared quantity per transfer (kg/s, or flow units when non-dimensional)."""
    hours = _hour_of(sol.times, market.hour_seconds)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["transfer_id", "node_id", "role", "hour", "quantity", "price"])
        for t in market.transfers:
            q = sol.schedule[t.id]
            price = market.hourly(t.price)
            for h in range(market.hours):
                sel = hours == h
                val = float(np.mean(q[sel])) if np.any(sel) else float("nan")
                w.writerow([t.id, t.node, t.role, h, _fmt(val), _fmt(price[h])])


def write_pressures(path, sol: Solution, source: Network, market: MarketData):
    """Pressure and net withdrawal at every input node on the reported points."""
    nlp = sol.problem
    inc = nlp.inc
    sc = nlp.net.scaling
    a2 = source.gas.sound_speed ** 2 if not source.is_nondim else 1.0
    rs = sc.density if not source.is_nondim else 1.0
    fs = sc.mass_flow
    n = sol.n_report
    varrho = np.vstack([sol.arrays["sigma"], sol.arrays["rho"]])[:, :n]
    withdraw = np.vstack([sol.arrays["slack_withdrawal"], sol.arrays["q"]])[:, :n]
    idx = {nid: i for i, nid in enumerate(inc.node_ids)}
    ids = [nd.id for nd in source.nodes]
    times = sol.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "hour"] + [f"p:{i}" for i in ids] + [f"withdrawal:{i}" for i in ids])
        for k in range(n):
            row = [_fmt(times[k]), int(_hour_of(times[k], market.hour_seconds))]
            row += [_fmt(varrho[idx[i], k] * rs * a2) for i in ids]
            row += [_fmt(withdraw[idx[i], k] * fs) for i in ids]
            w.writerow(row)


def write_ltv(path, sol: Solution, source: Network, market: MarketData):
    inc = sol.problem.inc
    S = inc.n_slack
    idx = {nid: i - S for i, nid in enumerate(inc.node_ids) if i >= S}
    ids = [nd.id for nd in source.nonslack_nodes]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "hour"] + [f"ltv:{i}" for i in ids])
        for k, t in enumerate(sol.times):
            w.writerow([_fmt(t), int(_hour_of(t, market.hour_seconds))]
                       + [_fmt(sol.ltv[idx[i], k]) for i in ids])


def write_ratios(path, sol: Solution, net: Network, market: MarketData):
    ids = [c.id for c in net.compressors]
    al = sol.arrays["alpha"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "hour"] + ids)
        for k, t in enumerate(sol.times):
            w.writerow([_fmt(t), int(_hour_of(t, market.hour_seconds))] + [_fmt(al[c, k]) for c in range(len(ids))])


def _emit_solution(run: Run, sol: Solution, source: Network, nd: Network, market: MarketData,
                   cfg: Config, nondim_dump: bool, sub: Optional[str] = None) -> dict:
    write_schedule(run.path("schedule.csv", sub), sol, market)
    tr = trajectory_from_solution(sol)
    write_trajectory_csv(run.path("state.csv", sub), tr, nd, si=not source.is_nondim)
    write_pressures(run.path("pressures.csv", sub), sol, source, market)
    if sol.status == "optimal":
        write_ltv(run.path("ltv.csv", sub), sol, source, market)
    write_ratios(run.path("ratios.csv", sub), sol, nd, market)
    r = sol.result
    metrics = {
        "status": r.status, "iterations": r.iterations,
        "objective": r.objective, "surplus": sol.surplus,
        "max_kkt_residual": verify_kkt(r, sol.problem).worst, "kkt": r.kkt,
        "jacobian_nnz": sol.problem.jacobian_nnz, "jacobian_nnz_fraction": sol.problem.jacobian_density,
        "variables": sol.problem.n, "equalities": sol.problem.m_eq, "inequalities": sol.problem.m_ineq,
        "grid_points": sol.problem.grid.n_points, "extension_s": sol.problem.data.tau * nd.scaling.time,
    }
    if cfg.run.validate and sol.status == "optimal":
        rep = validate_solution(sol, tol=cfg.run.validate_tolerance, refine=cfg.run.sim_refine)
        metrics["validation"] = {"max_deviation": rep.max_deviation, "periodicity_gap": rep.periodicity_gap,
                                 "violations": rep.violations, "ok": rep.ok}
        if not rep.ok:
            log.warning("simulator replay deviates by %.3g (violations %s)", rep.max_deviation, rep.violations)
    if nondim_dump:
        arrays = {k: v for k, v in sol.arrays.items() if isinstance(v, np.ndarray)}
        np.savez(run.path("nondim_dump.npz", sub), x=r.x, y_eq=r.y_eq, y_ineq=r.y_ineq,
                 z_lower=r.z_lower, z_upper=r.z_upper, ltv=sol.ltv, grid_points=sol.problem.grid.points,
                 **{f"arr_{k}": v for k, v in arrays.items()})
    return metrics


# ----------------------------------------------------------------- commands

def cmd_validate(args, cfg: Config, run: Run) -> int:
    errors: List[str] = []
    warnings: List[str] = []
    net = None
    try:
        net = load_network(args.network)
        refine_network(net, cfg.run.segment_length)
    except _INPUT_ERRORS as exc:
        errors.append(str(exc))
    market = None
    if args.baseline:
        try:
            market = load_market(args.bids, args.baseline, cfg.run.hour_seconds)
        except _INPUT_ERRORS as exc:
            errors.append(str(exc))
    elif args.bids:
        errors.append("bids need a baseline file to fix the horizon")
    if net is not None and market is not None:
        try:
            market.check_against(net)
        except MarketError as exc:
            errors.append(f"{args.bids or args.baseline}: {exc}")
        grid = build_grid(float(market.hours), market.hours)
        residual = check_baseline_balance(market.baseline, grid, 1.0)
        total = sum(float(np.sum(np.abs(v))) for v in market.baseline.values()) * market.hours / max(
            1, max(v.size for v in market.baseline.values()))
        run.metrics["baseline_balance_residual"] = residual
        if abs(residual) > 1e-9 * max(1.0, total):
            warnings.append(f"{args.baseline}: baseline withdrawals do not balance over the horizon "
                            f"(residual {residual:.6g} flow-hours)")
        slack = {n.id for n in net.slack_nodes}
        for t in market.transfers:
            if t.node not in slack and t.role == "seller" and np.any(np.isinf(t.qty_max)):
                warnings.append(f"{args.bids}: seller {t.id} at non-slack node {t.node} has unbounded quantity")
            if t.role == "buyer" and np.any(np.isinf(t.qty_max)):
                warnings.append(f"{args.bids}: buyer {t.id} has unbounded quantity")
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    run.metrics.update(errors=errors, warnings=warnings)
    if errors:
        run.status = "invalid"
        return EXIT_INPUT
    run.status = "warnings" if warnings else "clean"
    print("inputs valid" + (f" ({len(warnings)} warning(s))" if warnings else ""))
    return EXIT_INPUT if warnings and args.strict else EXIT_OK


def cmd_steady(args, cfg: Config, run: Run) -> int:
    source, nd = _prepare_network(args, cfg)
    inc = build_incidence(nd)
    S = inc.n_slack
    if args.baseline:
        base, hours = read_baseline(args.baseline)
        if not 0 <= args.hour < hours:
            raise InputError(f"hour {args.hour} outside the {hours}-hour baseline")
    else:
        base, hours = {}, 1
    flow = nd.scaling.mass_flow
    q = np.array([base[i][args.hour] / flow if i in base else 0.0 for i in inc.node_ids[S:]])
    sig = np.array([float(np.atleast_1d(n.slack_density)[args.hour % np.size(n.slack_density)])
                    for n in nd.slack_nodes])
    alpha = np.full(len(nd.compressors), args.ratio) if args.ratio is not None else None
    try:
        st = steady_state_solve(nd, sig, q, alpha, inc=inc)
    except SteadyStateError as exc:
        run.status = "failed"
        print(f"steady state failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    si = not source.is_nondim
    a2 = source.gas.sound_speed ** 2 if si else 1.0
    rs = nd.scaling.density
    varrho = np.concatenate([sig, st.rho])
    with open(run.path("steady_nodes.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "slack", "density", "pressure"])
        for i, nid in enumerate(inc.node_ids):
            w.writerow([nid, int(i < S), _fmt(varrho[i] * rs), _fmt(varrho[i] * rs * a2)])
    with open(run.path("steady_edges.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge_id", "from", "to", "flow"])
        for e, eid in enumerate(inc.edge_ids):
            w.writerow([eid, inc.node_ids[inc.tail[e]], inc.node_ids[inc.head[e]],
                        _fmt(st.phi[e] * inc.area[e] * flow)])
    ratios = inc.edge_ratios(alpha)
    run.metrics.update(linepack=float(linepack(varrho, inc, ratios).sum()) * rs * nd.scaling.length * nd.scaling.area,
                       min_density=float(varrho.min() * rs), max_density=float(varrho.max() * rs))
    run.status = "converged"
    print(f"steady state: {inc.n_nonslack} densities, {inc.n_edges} flows")
    return EXIT_OK


def _read_table(path) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError("file is empty", f"{path}:1")
    return rows[0], rows[1:]


def _series_from_schedule(path, market: MarketData) -> Dict[str, np.ndarray]:
    header, rows = _read_table(path)
    need = ["transfer_id", "hour", "quantity"]
    if any(c not in header for c in need):
        raise InputError(f"schedule needs columns {', '.join(need)}", f"{path}:1")
    col = {c: header.index(c) for c in need}
    out = {t.id: np.full(market.hours, np.nan) for t in market.transfers}
    for line, row in enumerate(rows, start=2):
        tid = row[col["transfer_id"]]
        if tid not in out:
            raise InputError(f"schedule names unknown transfer {tid}", f"{path}:{line}")
        try:
            h = int(row[col["hour"]])
            out[tid][h] = float(row[col["quantity"]])
        except (ValueError, IndexError):
            raise InputError("bad hour or quantity", f"{path}:{line}") from None
    for tid, v in out.items():
        if np.any(np.isnan(v)):
            raise InputError(f"schedule for {tid} misses hours", str(path))
    return out


def cmd_simulate(args, cfg: Config, run: Run) -> int:
    from .collocation import periodic_interpolator
    from .market import compose_injection
    source, nd = _prepare_network(args, cfg)
    inc = build_incidence(nd)
    S = inc.n_slack
    market = load_market(args.bids, args.baseline, cfg.run.hour_seconds)
    market.check_against(source)
    sched = _series_from_schedule(args.schedule, market) if args.schedule else {}
    if sched and not args.bids:
        raise InputError("a schedule needs the bids file that defines its transfers")
    hours = market.hours
    flow = nd.scaling.mass_flow
    hour = market.hour_seconds / nd.scaling.time
    base = {k: market.baseline_series(k) / flow for k in market.baseline}
    sch = {k: v / flow for k, v in sched.items()}
    q_h = compose_injection(base, sch, market.transfers, nd)
    if q_h.shape[1] == 1:
        q_h = np.repeat(q_h, hours, axis=1)
    sig_h = np.array([market.hourly(n.slack_density) for n in nd.slack_nodes])
    hgrid = build_grid(hours * hour, hours)
    C = len(nd.compressors)
    if args.ratios:
        header, rows = _read_table(args.ratios)
        ids = [c.id for c in nd.compressors]
        try:
            cols = [header.index(c) for c in ids]
            t_col = header.index("time")
            times = np.array([float(r[t_col]) for r in rows]) / (1.0 if source.is_nondim else nd.scaling.time)
            vals = np.array([[float(r[c]) for c in cols] for r in rows]).T
        except ValueError as exc:
            raise InputError(f"ratios file: {exc}", str(args.ratios)) from None
        rgrid = build_grid(hours * hour, times.size)
        if not np.allclose(times, rgrid.points, rtol=1e-6, atol=1e-9 * hour):
            raise InputError("ratio rows must sit on a uniform grid over the horizon", str(args.ratios))
        alpha = periodic_interpolator(vals, rgrid)
    else:
        ratio = args.ratio if args.ratio is not None else 1.0
        alpha = np.full(C, ratio)
    steps = args.steps_per_hour or cfg.run.sim_refine * max(1, cfg.run.points // hours)
    duration = hours * hour
    qf = periodic_interpolator(q_h, hgrid)
    sf = periodic_interpolator(sig_h, hgrid)
    if args.initial:
        header, rows = _read_table(args.initial)
        try:
            cols = [header.index(f"rho:{i}") for i in inc.node_ids[S:]]
            rho0 = np.array([float(rows[0][c]) for c in cols]) / (1.0 if source.is_nondim else nd.scaling.density)
        except (ValueError, IndexError) as exc:
            raise InputError(f"initial state: {exc}", str(args.initial)) from None
    else:
        al0 = alpha(0.0) if callable(alpha) else alpha
        rho0 = steady_state_solve(nd, sf(0.0), qf(0.0), al0, inc=inc).rho
    sc = SimScenario(nd, rho0, sf, qf, alpha, step=hour / steps, duration=duration)
    tr = simulate(sc)
    write_trajectory_csv(run.path("state.csv"), tr, nd, si=not source.is_nondim)
    a2 = source.gas.sound_speed ** 2 if not source.is_nondim else 1.0
    rs = nd.scaling.density
    idx = {nid: i for i, nid in enumerate(inc.node_ids)}
    ids = [n.id for n in source.nodes]
    ts = nd.scaling.time if not source.is_nondim else 1.0
    with open(run.path("pressures.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "hour"] + [f"p:{i}" for i in ids])
        vr = np.vstack([tr.sigma, tr.rho])
        for k, t in enumerate(tr.times):
            w.writerow([_fmt(t * ts), int(min(hours - 1, _hour_of(t / hour, 1.0)))]
                       + [_fmt(vr[idx[i], k] * rs * a2) for i in ids])
    run.metrics.update(steps=int(tr.times.size - 1), step_s=float(sc.step * ts),
                       periodicity_gap=float(np.abs(tr.rho[:, -1] - tr.rho[:, 0]).max() / np.abs(tr.rho).max()))
    run.status = "completed"
    print(f"simulated {hours} h in {tr.times.size - 1} steps")
    return EXIT_OK


def cmd_optimize(args, cfg: Config, run: Run) -> int:
    source, nd = _prepare_network(args, cfg)
    market = load_market(args.bids, args.baseline, cfg.run.hour_seconds)
    market.check_against(source)
    grid = _grid(nd, market, cfg)
    so = replace(cfg.solver, log_path=str(run.path("solver_log.jsonl")))
    t = time.perf_counter()
    sol = optimize(nd, market, grid, cfg.transcription, so)
    run.metrics["solve_time_s"] = time.perf_counter() - t
    run.metrics.update(_emit_solution(run, sol, source, nd, market, cfg, args.nondim_dump))
    run.status = sol.status
    print(f"status {sol.status} after {sol.result.iterations} iterations, surplus {sol.surplus:.6g}")
    return EXIT_OK if sol.status == "optimal" else EXIT_SOLVER


def window_market(market: MarketData, start: int, hours: int) -> MarketData:
    """Hours ``start .. start+hours-1`` of longer hourly data."""
    def cut(a):
        a = np.asarray(a, dtype=float)
        return a if a.size == 1 else a[start:start + hours]
    tr = tuple(replace(t, price=cut(t.price), qty_min=cut(t.qty_min), qty_max=cut(t.qty_max))
               for t in market.transfers)
    return MarketData(tr, {k: cut(v) for k, v in market.baseline.items()}, hours, market.hour_seconds)


def cmd_mpc(args, cfg: Config, run: Run) -> int:
    source, nd = _prepare_network(args, cfg)
    data = load_market(args.bids, args.baseline, cfg.run.hour_seconds)
    data.check_against(source)
    H, K = cfg.run.shift_hours, cfg.run.mpc_steps
    if args.wrap:
        T = cfg.run.horizon_hours or data.hours
        if T != data.hours:
            raise InputError("--wrap needs the horizon to equal the data length")
        if cfg.transcription.extension == "on":
            raise InputError("--wrap declares the data periodic; it cannot be combined with --extension on")
        # rolled windows must share one periodic closure, or the pin is inconsistent
        cfg.transcription = replace(cfg.transcription, extension="off")
    else:
        T = cfg.run.horizon_hours or data.hours - (K - 1) * H
        if T < 1 or T + (K - 1) * H > data.hours:
            raise InputError(f"{K} steps of {H} h need {(K - 1) * H} hours of data beyond the horizon; "
                             "supply longer files, set run.horizon_hours, or pass --wrap for periodic data")
    if H >= T:
        raise InputError(f"shift of {H} h must be shorter than the {T}-hour horizon")
    market = data if args.wrap else window_market(data, 0, T)
    run.extra["mpc"] = {"horizon_hours": T, "shift_hours": H, "steps": K, "wrap": bool(args.wrap)}
    grid = _grid(nd, market, cfg)
    steps_meta = []
    stitched_sched: List[list] = []
    stitched_ltv: List[list] = []
    prev: Optional[Solution] = None
    mk = market
    code = EXIT_OK
    for i in range(cfg.run.mpc_steps):
        sub = f"step_{i:03d}"
        so = replace(cfg.solver, log_path=str(run.path("solver_log.jsonl", sub)))
        t = time.perf_counter()
        if prev is None:
            sol = optimize(nd, mk, grid, cfg.transcription, so)
            pin_err = 0.0
        else:
            mk = shift_market(mk, H) if args.wrap else window_market(data, i * H, T)
            nlp = mpc_step(prev, mk, H, options=cfg.transcription)
            sol = unpack(nlp, solve(nlp, so))
            pin_err = float(np.abs(sol.arrays["rho"][:, 0] - nlp.pin).max())
        meta = _emit_solution(run, sol, source, nd, mk, cfg, args.nondim_dump, sub)
        meta.update(step=i, start_hour=i * H, solve_time_s=time.perf_counter() - t, pin_error=pin_err)
        steps_meta.append(meta)
        print(f"step {i}: status {sol.status}, surplus {sol.surplus:.6g}")
        if sol.status != "optimal":
            code = EXIT_SOLVER
            break
        hours = _hour_of(sol.times, mk.hour_seconds)
        inc = sol.problem.inc
        S = inc.n_slack
        idx = {nid: j - S for j, nid in enumerate(inc.node_ids) if j >= S}
        for h in range(H):
            sel = hours == h
            for tnode in mk.transfers:
                stitched_sched.append([i * H + h, tnode.id, tnode.node, tnode.role,
                                       _fmt(np.mean(sol.schedule[tnode.id][sel]))])
            stitched_ltv.append([i * H + h] + [_fmt(np.mean(sol.ltv[idx[n.id], sel])) for n in source.nonslack_nodes])
        prev = sol
    with open(run.path("stitched_schedule.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "transfer_id", "node_id", "role", "quantity"])
        w.writerows(stitched_sched)
    with open(run.path("stitched_ltv.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour"] + [f"ltv:{n.id}" for n in source.nonslack_nodes])
        w.writerows(stitched_ltv)
    run.extra["steps"] = steps_meta
    run.metrics.update(steps_completed=sum(1 for m in steps_meta if m["status"] == "optimal"),
                       max_pin_error=max((m["pin_error"] for m in steps_meta), default=0.0))
    run.status = "optimal" if code == EXIT_OK else steps_meta[-1]["status"]
    return code


# ------------------------------------------------------------------- parser

def _add_common(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="JSON config with run/transcription/solver sections")
    p.add_argument("--out-dir", default=d if suppress else "out", help="directory for artifacts")
    p.add_argument("--nondim-dump", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="also write non-dimensional arrays (npz)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _add_options(p: argparse.ArgumentParser):
    g = p.add_argument_group("options (override the config file)")
    g.add_argument("--points", type=int, help="collocation points N over the horizon")
    g.add_argument("--segment-length", type=float, help="refinement length (network length units)")
    g.add_argument("--hour-seconds", type=float, help="length of one data hour in seconds")
    g.add_argument("--tau-hours", type=float, help="horizon extension length in hours")
    g.add_argument("--extension", choices=["auto", "on", "off"])
    g.add_argument("--smoothing", type=float, help="smoothing of |x| in the friction term")
    g.add_argument("--tolerance", type=float, help="KKT tolerance")
    g.add_argument("--max-iterations", type=int)
    g.add_argument("--hessian", choices=["auto", "exact", "lbfgs"])
    g.add_argument("--sim-refine", type=int, help="simulation steps per collocation interval")
    g.add_argument("--no-validate", action="store_true", help="skip the simulator replay")


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors: exit 1, keeping 2 for solver outcomes."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gasmarket", description="Gas pipeline market clearing tools")
    parser.add_argument("--version", action="version", version=f"gasmarket {__version__}")
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check input files")
    _add_common(p, True)
    p.add_argument("--network", required=True)
    p.add_argument("--bids")
    p.add_argument("--baseline")
    p.add_argument("--strict", action="store_true", help="treat warnings as errors")
    p.add_argument("--segment-length", type=float)
    p.add_argument("--hour-seconds", type=float)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("steady", help="steady state for one hour of baseline data")
    _add_common(p, True)
    p.add_argument("--network", required=True)
    p.add_argument("--baseline")
    p.add_argument("--hour", type=int, default=0)
    p.add_argument("--ratio", type=float, help="common compression ratio (default 1)")
    p.add_argument("--segment-length", type=float)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("simulate", help="forward simulation under fixed controls")
    _add_common(p, True)
    p.add_argument("--network", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--bids", help="transfer definitions for --schedule")
    p.add_argument("--schedule", help="schedule.csv with hourly quantities")
    p.add_argument("--ratios", help="ratios.csv with compressor ratios on a uniform grid")
    p.add_argument("--ratio", type=float, help="constant compression ratio when no ratios file")
    p.add_argument("--initial", help="state.csv whose first row gives the initial densities")
    p.add_argument("--steps-per-hour", type=int)
    _add_options(p)
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (("optimize", cmd_optimize, "clear the market over one horizon"),
                             ("mpc", cmd_mpc, "rolling-horizon clearing")):
        p = sub.add_parser(name, help=text)
        _add_common(p, True)
        p.add_argument("--network", required=True)
        p.add_argument("--bids", required=True)
        p.add_argument("--baseline", required=True)
        _add_options(p)
        if name == "mpc":
            p.add_argument("--mpc-steps", type=int, help="number of rolling steps")
            p.add_argument("--shift-hours", type=int, help="hours between steps (H)")
            p.add_argument("--horizon-hours", type=int, help="window length T (default: data hours minus the rolled span)")
            p.add_argument("--wrap", action="store_true", help="treat the data as periodic and roll it")
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = Path(args.out_dir)
    run = None
    try:
        cfg = _build_config(args)
        run = Run(args.command, args, cfg, out_dir)
        code = args.func(args, cfg, run)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INPUT
        if run is not None:
            run.status = "input_error"
            run.metrics["error"] = str(exc)
    except (SimulationError, SteadyStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
        if run is not None:
            run.status = "failed"
            run.metrics["error"] = str(exc)
    except Exception as exc:  # noqa: BLE001 - last-resort guard for the exit code contract
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        code = EXIT_INTERNAL
        if run is not None:
            run.status = "internal_error"
            run.metrics["error"] = repr(exc)
    if run is not None:
        run.write(code)
    return code


if __name__ == "__main__":
    sys.exit(main())
