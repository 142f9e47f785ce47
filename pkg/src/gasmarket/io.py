"""Readers for network, bid, baseline and configuration files.

Network file (JSON)::

    {
      "units": "si",                       # or "nondim"; mandatory
      "gas": {"sound_speed": 377.0},       # or compressibility/gas_constant/temperature
      "scaling": {"length": 10000, "density": 35},   # optional, si only
      "nodes": [{"id": "S", "slack": true, "density_min": 14, "density_max": 56,
                 "slack_density": 31.7}, ...],
      "pipes": [{"id": "P1", "from": "S", "to": "J1", "length": 50000,
                 "diameter": 0.8, "friction": 0.01}, ...],
      "compressors": [{"id": "C1", "pipe": "P2", "orientation": "+", "ratio_max": 1.6}, ...]
    }

Densities are kg/m^3, lengths and diameters m, areas m^2, power W.  A slack
density is a number or an hourly list.  Unknown keys are rejected.

Bids CSV columns: ``transfer_id,node_id,role,hour,price,qty_min,qty_max``.
Baseline CSV columns: ``node_id,hour,baseline_flow``.  Hours run 0..T-1 and
every series must cover all of them.
"""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from .ipm import SolverOptions
from .market import MarketData, MarketError, TransferNode
from .network import Compressor, GasProperties, Network, NetworkError, Node, Pipe, Scaling
from .transcription import TranscriptionOptions


class InputError(ValueError):
    """Malformed input; ``location`` is ``path:line`` when known."""

    def __init__(self, message: str, location: Optional[str] = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


_TOP = {"units", "gas", "scaling", "nodes", "pipes", "compressors", "name", "description"}
_GAS = {"sound_speed", "compressibility", "gas_constant", "temperature"}
_SCALING = {"length", "density", "sound_speed", "area"}
_NODE = {"id", "slack", "density_min", "density_max", "slack_density"}
_PIPE = {"id", "from", "to", "length", "diameter", "friction", "area", "density_max"}
_COMP = {f.name for f in fields(Compressor)}


def _line_of(text: str, ident: str) -> Optional[int]:
    m = re.search(r'"id"\s*:\s*"%s"' % re.escape(ident), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _number(value, what: str) -> float:
    if value is None:
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{what} must be a number, got {value!r}")
    return float(value)


def load_network(path) -> Network:
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(exc.msg, f"{path}:{exc.lineno}") from None
    return network_from_dict(doc, path=str(path), text=text)


def network_from_dict(doc: dict, path: str = "<network>", text: str = "") -> Network:
    if not isinstance(doc, dict):
        raise InputError("network document must be a JSON object", path)

    def where(ident=None):
        line = _line_of(text, ident) if ident is not None and text else None
        return f"{path}:{line}" if line else path

    def check_keys(obj, allowed, what, ident=None):
        if not isinstance(obj, dict):
            raise InputError(f"{what} must be an object", where(ident))
        extra = sorted(set(obj) - allowed)
        if extra:
            raise InputError(f"{what}: unknown key(s) {', '.join(extra)}", where(ident))

    check_keys(doc, _TOP, "network")
    units = doc.get("units")
    if units not in ("si", "nondim"):
        raise InputError("'units' is mandatory and must be 'si' or 'nondim'", path)

    gas_doc = doc.get("gas", {})
    check_keys(gas_doc, _GAS, "gas")
    try:
        if "sound_speed" in gas_doc:
            gas = GasProperties(**{k: _number(v, k) for k, v in gas_doc.items()})
        elif gas_doc:
            gas = GasProperties.from_state(*(_number(gas_doc[k], k) for k in
                                             ("compressibility", "gas_constant", "temperature")))
        elif units == "nondim":
            gas = GasProperties(1.0)
        else:
            raise InputError("gas.sound_speed (or Z, R, T) is required in si units", path)
    except (KeyError, ValueError, NetworkError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"gas: {exc}", path) from None

    nodes, pipes, comps = [], [], []
    for raw in doc.get("nodes", []):
        ident = raw.get("id") if isinstance(raw, dict) else None
        check_keys(raw, _NODE, f"node {ident}", ident)
        try:
            if not isinstance(ident, str):
                raise ValueError("id must be a string")
            slack = bool(raw.get("slack", False))
            prof = raw.get("slack_density")
            if prof is not None:
                prof = np.atleast_1d(np.asarray(prof, dtype=float))
            nodes.append(Node(ident, slack=slack, density_min=_number(raw.get("density_min", 1e-3), "density_min"),
                              density_max=_number(raw.get("density_max"), "density_max"), slack_density=prof))
        except (TypeError, ValueError) as exc:
            raise InputError(f"node {ident}: {exc}", where(ident)) from None
    for raw in doc.get("pipes", []):
        ident = raw.get("id") if isinstance(raw, dict) else None
        check_keys(raw, _PIPE, f"pipe {ident}", ident)
        try:
            if not isinstance(ident, str):
                raise ValueError("id must be a string")
            for k in ("from", "to", "length", "diameter", "friction"):
                if k not in raw:
                    raise ValueError(f"missing '{k}'")
            area = raw.get("area")
            pipes.append(Pipe(ident, str(raw["from"]), str(raw["to"]), _number(raw["length"], "length"),
                              _number(raw["diameter"], "diameter"), _number(raw["friction"], "friction"),
                              area=None if area is None else _number(area, "area"),
                              density_max=_number(raw.get("density_max"), "density_max")))
        except (TypeError, ValueError) as exc:
            raise InputError(f"pipe {ident}: {exc}", where(ident)) from None
    for raw in doc.get("compressors", []):
        ident = raw.get("id") if isinstance(raw, dict) else None
        check_keys(raw, _COMP, f"compressor {ident}", ident)
        try:
            kw = {k: (v if k in ("id", "pipe", "orientation") else _number(v, k)) for k, v in raw.items()}
            comps.append(Compressor(**kw))
        except (TypeError, ValueError) as exc:
            raise InputError(f"compressor {ident}: {exc}", where(ident)) from None

    scaling = None
    if units == "nondim":
        if "scaling" in doc:
            raise InputError("'scaling' only applies to si networks", path)
        scaling = Scaling.identity()
    try:
        net = Network(tuple(nodes), tuple(pipes), tuple(comps), gas, scaling)
    except NetworkError as exc:
        ident = next((w for w in str(exc).split() if text and _line_of(text, w.rstrip(":"))), None)
        raise InputError(str(exc), where(ident.rstrip(":")) if ident else path) from None
    return net


def scaling_for(net: Network, doc_scaling: Optional[dict] = None) -> Scaling:
    """Scaling from an explicit table, else 10 km and the largest slack density."""
    doc_scaling = dict(doc_scaling or {})
    extra = sorted(set(doc_scaling) - _SCALING)
    if extra:
        raise InputError(f"scaling: unknown key(s) {', '.join(extra)}")
    dens = max(float(np.max(n.slack_density)) for n in net.slack_nodes)
    try:
        return Scaling(length=float(doc_scaling.get("length", 10_000.0)),
                       density=float(doc_scaling.get("density", dens)),
                       sound_speed=float(doc_scaling.get("sound_speed", net.gas.sound_speed)),
                       area=float(doc_scaling.get("area", 1.0)))
    except NetworkError as exc:
        raise InputError(str(exc)) from None


def network_scaling_table(path) -> Optional[dict]:
    """The raw ``scaling`` object of a network file, if any."""
    with open(path) as fh:
        return json.load(fh).get("scaling")


# ---------------------------------------------------------------- CSV inputs

BID_COLUMNS = ("transfer_id", "node_id", "role", "hour", "price", "qty_min", "qty_max")
BASELINE_COLUMNS = ("node_id", "hour", "baseline_flow")


def _rows(path, columns):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError("file is empty", f"{path}:1") from None
        header = [h.strip() for h in header]
        if tuple(header) != columns:
            raise InputError(f"expected header {','.join(columns)}, got {','.join(header)}", f"{path}:1")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            line = reader.line_num
            if len(row) != len(columns):
                raise InputError(f"expected {len(columns)} fields, got {len(row)}", f"{path}:{line}")
            yield line, dict(zip(columns, (c.strip() for c in row)))


def _float(text, what, loc):
    low = text.lower()
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    if low in ("-inf", "-infinity"):
        return -math.inf
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{what} is not a number: {text!r}", loc) from None
    if math.isnan(v):
        raise InputError(f"{what} is NaN", loc)
    return v


def _hour(text, loc):
    try:
        h = int(text)
    except ValueError:
        raise InputError(f"hour is not an integer: {text!r}", loc) from None
    if h < 0:
        raise InputError(f"hour must be non-negative, got {h}", loc)
    return h


def _check_cover(seen: Dict[int, int], hours: int, what: str, path):
    missing = [h for h in range(hours) if h not in seen]
    if missing:
        raise InputError(f"{what}: missing hour(s) {', '.join(map(str, missing[:8]))}"
                         + (" ..." if len(missing) > 8 else ""), str(path))
    extra = sorted(h for h in seen if h >= hours)
    if extra:
        raise InputError(f"{what}: hour {extra[0]} beyond the {hours}-hour horizon", f"{path}:{seen[extra[0]]}")


def read_baseline(path, hours: Optional[int] = None) -> Tuple[Dict[str, np.ndarray], int]:
    """Baseline withdrawals per node; returns the series and the horizon length."""
    data: Dict[str, Dict[int, float]] = {}
    lines: Dict[str, Dict[int, int]] = {}
    for line, row in _rows(path, BASELINE_COLUMNS):
        loc = f"{path}:{line}"
        node = row["node_id"]
        if not node:
            raise InputError("empty node_id", loc)
        h = _hour(row["hour"], loc)
        if h in data.setdefault(node, {}):
            raise InputError(f"duplicate hour {h} for node {node} (first on line {lines[node][h]})", loc)
        v = _float(row["baseline_flow"], "baseline_flow", loc)
        if not math.isfinite(v):
            raise InputError("baseline_flow must be finite", loc)
        data[node][h] = v
        lines.setdefault(node, {})[h] = line
    if not data:
        raise InputError("no baseline rows", str(path))
    if hours is None:
        hours = max(max(d) for d in data.values()) + 1
    out = {}
    for node, series in data.items():
        _check_cover(lines[node], hours, f"baseline at node {node}", path)
        out[node] = np.array([series[h] for h in range(hours)])
    return out, hours


def read_bids(path, hours: int) -> List[TransferNode]:
    per: Dict[str, dict] = {}
    for line, row in _rows(path, BID_COLUMNS):
        loc = f"{path}:{line}"
        tid = row["transfer_id"]
        if not tid or not row["node_id"]:
            raise InputError("empty transfer_id or node_id", loc)
        role = row["role"].lower()
        if role not in ("buyer", "seller"):
            raise InputError(f"role must be buyer or seller, got {row['role']!r}", loc)
        h = _hour(row["hour"], loc)
        price = _float(row["price"], "price", loc)
        if not math.isfinite(price):
            raise InputError("price must be finite", loc)
        lo = _float(row["qty_min"], "qty_min", loc)
        hi = _float(row["qty_max"], "qty_max", loc)
        if lo > hi:
            raise InputError(f"qty_min {lo} exceeds qty_max {hi}", loc)
        rec = per.setdefault(tid, dict(node=row["node_id"], role=role, first=line, hours={}, lines={}))
        if rec["node"] != row["node_id"] or rec["role"] != role:
            raise InputError(f"transfer {tid} changes node or role (first seen on line {rec['first']})", loc)
        if h in rec["hours"]:
            raise InputError(f"duplicate hour {h} for transfer {tid}", loc)
        rec["hours"][h] = (price, lo, hi)
        rec["lines"][h] = line
    out = []
    for tid, rec in per.items():
        _check_cover(rec["lines"], hours, f"transfer {tid}", path)
        arr = np.array([rec["hours"][h] for h in range(hours)])
        try:
            out.append(TransferNode(tid, rec["node"], rec["role"], arr[:, 0], arr[:, 1], arr[:, 2]))
        except MarketError as exc:
            raise InputError(str(exc), f"{path}:{rec['first']}") from None
    return out


def load_market(bids_path, baseline_path, hour_seconds: float = 3600.0,
                hours: Optional[int] = None) -> MarketData:
    baseline, hours = read_baseline(baseline_path, hours)
    transfers = read_bids(bids_path, hours) if bids_path else []
    try:
        return MarketData(tuple(transfers), baseline, hours=hours, hour_seconds=hour_seconds)
    except MarketError as exc:
        raise InputError(str(exc)) from None


def write_bids(path, market: MarketData) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BID_COLUMNS)
        for t in market.transfers:
            p, lo, hi = market.hourly(t.price), market.hourly(t.qty_min), market.hourly(t.qty_max)
            for h in range(market.hours):
                w.writerow([t.id, t.node, t.role, h, f"{p[h]:.12g}", f"{lo[h]:.12g}", f"{hi[h]:.12g}"])


def write_baseline(path, market: MarketData) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BASELINE_COLUMNS)
        for node in market.baseline:
            v = market.baseline_series(node)
            for h in range(market.hours):
                w.writerow([node, h, f"{v[h]:.12g}"])


def write_network(path, net: Network, scaling: Optional[Scaling] = None) -> None:
    """Inverse of :func:`load_network` for dimensional or non-dimensional networks."""
    def num(v):
        return None if v == math.inf else float(v)

    doc = {"units": "nondim" if net.is_nondim else "si"}
    if not net.is_nondim:
        doc["gas"] = {"sound_speed": net.gas.sound_speed}
        if scaling is not None:
            doc["scaling"] = {"length": scaling.length, "density": scaling.density}
    nodes = []
    for n in net.nodes:
        rec = {"id": n.id}
        if n.slack:
            rec["slack"] = True
            prof = np.atleast_1d(n.slack_density)
            rec["slack_density"] = float(prof[0]) if prof.size == 1 else [float(v) for v in prof]
        rec["density_min"] = n.density_min
        rec["density_max"] = num(n.density_max)
        nodes.append(rec)
    doc["nodes"] = nodes
    doc["pipes"] = [{"id": p.id, "from": p.from_node, "to": p.to_node, "length": p.length,
                     "diameter": p.diameter, "friction": p.friction, "area": p.area,
                     "density_max": num(p.density_max)} for p in net.pipes]
    doc["compressors"] = [{k: (num(v) if isinstance(v, float) else v)
                           for k, v in ((f.name, getattr(c, f.name)) for f in fields(Compressor))}
                          for c in net.compressors]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ------------------------------------------------------------------- config

@dataclass
class RunOptions:
    points: int = 24                 # collocation points N over the data horizon
    segment_length: float = 10_000.0  # refinement length, network length units
    hour_seconds: float = 3600.0
    mpc_steps: int = 3
    shift_hours: int = 1             # MPC shift H
    horizon_hours: Optional[int] = None  # MPC window T; default from the data length
    sim_refine: int = 8              # simulation steps per collocation interval
    validate: bool = True            # replay optimizer plans through the simulator
    validate_tolerance: float = 1e-3
    scaling: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.points) != self.points or self.points < 2:
            raise InputError("run.points must be an integer >= 2")
        if not self.segment_length > 0:
            raise InputError("run.segment_length must be positive")
        if not self.hour_seconds > 0:
            raise InputError("run.hour_seconds must be positive")
        if int(self.mpc_steps) != self.mpc_steps or self.mpc_steps < 1:
            raise InputError("run.mpc_steps must be a positive integer")
        if int(self.shift_hours) != self.shift_hours or self.shift_hours < 1:
            raise InputError("run.shift_hours must be a positive integer")
        if self.horizon_hours is not None and (int(self.horizon_hours) != self.horizon_hours
                                               or self.horizon_hours < 1):
            raise InputError("run.horizon_hours must be a positive integer")
        if int(self.sim_refine) != self.sim_refine or self.sim_refine < 4:
            raise InputError("run.sim_refine must be an integer >= 4")


@dataclass
class Config:
    run: RunOptions = field(default_factory=RunOptions)
    transcription: TranscriptionOptions = field(default_factory=TranscriptionOptions)
    solver: SolverOptions = field(default_factory=SolverOptions)

    def as_dict(self) -> dict:
        def plain(obj):
            return {f.name: getattr(obj, f.name) for f in fields(obj)}
        return {"run": plain(self.run), "transcription": plain(self.transcription), "solver": plain(self.solver)}


def _section(cls, values, name):
    if not isinstance(values, dict):
        raise InputError(f"config section '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(values) - known)
    if extra:
        raise InputError(f"config section '{name}': unknown key(s) {', '.join(extra)}")
    try:
        return cls(**values)
    except InputError:
        raise
    except (TypeError, ValueError) as exc:
        raise InputError(f"config section '{name}': {exc}") from None


def config_from_dict(doc: dict) -> Config:
    if not isinstance(doc, dict):
        raise InputError("config must be a JSON object")
    extra = sorted(set(doc) - {"run", "transcription", "solver"})
    if extra:
        raise InputError(f"config: unknown section(s) {', '.join(extra)}")
    return Config(_section(RunOptions, doc.get("run", {}), "run"),
                  _section(TranscriptionOptions, doc.get("transcription", {}), "transcription"),
                  _section(SolverOptions, doc.get("solver", {}), "solver"))


def load_config(path) -> Config:
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(exc.msg, f"{path}:{exc.lineno}") from None
    return config_from_dict(doc)
