"""Pipeline network as a directed metric graph.

Holds the value types for gas properties, scaling, nodes, pipes and
compressors, plus the three graph operations the rest of the package relies
on: refinement into short segments, non-dimensionalization, and incidence
matrix construction with slack nodes ordered first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class NetworkError(ValueError):
    """Raised for structurally invalid networks or parameters."""


@dataclass(frozen=True)
class GasProperties:
    sound_speed: float
    compressibility: float = 1.0
    gas_constant: float = 518.28
    temperature: float = 288.15

    def __post_init__(self):
        if not self.sound_speed > 0:
            raise NetworkError(f"sound speed must be positive, got {self.sound_speed}")

    @classmethod
    def from_state(cls, compressibility: float, gas_constant: float, temperature: float) -> "GasProperties":
        """Derive the sound speed from a^2 = Z R T."""
        a2 = compressibility * gas_constant * temperature
        if not a2 > 0:
            raise NetworkError("Z*R*T must be positive")
        return cls(math.sqrt(a2), compressibility, gas_constant, temperature)


@dataclass(frozen=True)
class Scaling:
    """Nominal length, density and sound speed used to remove units.

    Mass flows are scaled by ``sound_speed * density * area``; the nominal
    area defaults to 1 m^2 so non-dimensional areas stay numerically in m^2.
    """

    length: float
    density: float
    sound_speed: float
    area: float = 1.0

    def __post_init__(self):
        for name in ("length", "density", "sound_speed", "area"):
            if not getattr(self, name) > 0:
                raise NetworkError(f"scaling {name} must be positive")

    @property
    def time(self) -> float:
        return self.length / self.sound_speed

    @property
    def flux(self) -> float:
        return self.sound_speed * self.density

    @property
    def mass_flow(self) -> float:
        return self.flux * self.area

    @classmethod
    def identity(cls) -> "Scaling":
        return cls(1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True, eq=False)
class Node:
    id: str
    slack: bool = False
    density_min: float = 1e-3
    density_max: float = math.inf
    slack_density: Optional[np.ndarray] = None

    @property
    def kind(self) -> str:
        return "slack" if self.slack else "nonslack"


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float
    diameter: float
    friction: float
    area: Optional[float] = None
    density_max: float = math.inf

    def __post_init__(self):
        if self.area is None:
            object.__setattr__(self, "area", math.pi * self.diameter ** 2 / 4.0)


@dataclass(frozen=True)
class Compressor:
    """Compression station acting at one end of a pipe.

    ``orientation`` is ``"+"`` for a station at the pipe's from-node boosting
    gas into the pipe, ``"-"`` for one at the to-node boosting in the reverse
    direction.  Power coefficients follow the standard adiabatic formula.
    """

    id: str
    pipe: str
    orientation: str = "+"
    ratio_max: float = 2.0
    power_max: float = math.inf
    gamma: float = 1.4
    adiabatic_eff: float = 1.0
    mechanical_eff: float = 1.0
    gravity: float = 0.6
    discharge_temp: float = 288.15

    @property
    def exponent(self) -> float:
        return (self.gamma - 1.0) / self.gamma

    @property
    def epsilon(self) -> float:
        return 286.76 * self.discharge_temp / (
            self.adiabatic_eff * self.mechanical_eff * self.gravity * self.exponent)


@dataclass(frozen=True, eq=False)
class Network:
    nodes: tuple
    pipes: tuple
    compressors: tuple = ()
    gas: GasProperties = field(default_factory=lambda: GasProperties(1.0))
    scaling: Optional[Scaling] = None
    # segment/node id -> original pipe id, filled by refinement
    parent: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        object.__setattr__(self, "compressors", tuple(self.compressors))
        self.validate()

    @property
    def is_nondim(self) -> bool:
        return self.scaling is not None

    @property
    def ordered_nodes(self) -> tuple:
        """Slack nodes in input order, then non-slack nodes in input order."""
        return tuple(n for n in self.nodes if n.slack) + tuple(n for n in self.nodes if not n.slack)

    @property
    def slack_nodes(self) -> tuple:
        return tuple(n for n in self.nodes if n.slack)

    @property
    def nonslack_nodes(self) -> tuple:
        return tuple(n for n in self.nodes if not n.slack)

    @cached_property
    def _node_map(self) -> dict:
        return {n.id: n for n in self.nodes}

    @cached_property
    def _pipe_map(self) -> dict:
        return {p.id: p for p in self.pipes}

    def node(self, node_id: str) -> Node:
        return self._node_map[node_id]

    def pipe(self, pipe_id: str) -> Pipe:
        return self._pipe_map[pipe_id]

    def validate(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate node ids")
        if not self.nodes:
            raise NetworkError("network has no nodes")
        pids = [p.id for p in self.pipes]
        if len(set(pids)) != len(pids):
            raise NetworkError("duplicate pipe ids")
        known = set(ids)
        for n in self.nodes:
            if not 0 < n.density_min < n.density_max:
                raise NetworkError(f"node {n.id}: need 0 < density_min < density_max")
            if n.slack and n.slack_density is None:
                raise NetworkError(f"slack node {n.id} has no density profile")
            if not n.slack and n.slack_density is not None:
                raise NetworkError(f"non-slack node {n.id} carries a density profile")
        for p in self.pipes:
            if p.from_node not in known or p.to_node not in known:
                raise NetworkError(f"pipe {p.id} references an unknown node")
            if p.from_node == p.to_node:
                raise NetworkError(f"pipe {p.id} is a self-loop")
            for attr in ("length", "diameter", "friction", "area"):
                v = getattr(p, attr)
                if not (v > 0 and math.isfinite(v)):
                    raise NetworkError(f"pipe {p.id}: {attr} must be positive, got {v}")
            if not p.density_max > 0:
                raise NetworkError(f"pipe {p.id}: density_max must be positive")
        cids = [c.id for c in self.compressors]
        if len(set(cids)) != len(cids):
            raise NetworkError("duplicate compressor ids")
        ends = set()
        for c in self.compressors:
            if c.pipe not in set(pids):
                raise NetworkError(f"compressor {c.id} references unknown pipe {c.pipe}")
            if c.orientation not in ("+", "-"):
                raise NetworkError(f"compressor {c.id}: orientation must be '+' or '-'")
            if (c.pipe, c.orientation) in ends:
                raise NetworkError(f"compressor {c.id}: two stations on one pipe end")
            ends.add((c.pipe, c.orientation))
            if not c.ratio_max >= 1.0:
                raise NetworkError(f"compressor {c.id}: ratio_max must be >= 1")
            if not 0 < c.exponent < 1:
                raise NetworkError(f"compressor {c.id}: gamma must exceed 1")
            if not c.epsilon > 0:
                raise NetworkError(f"compressor {c.id}: efficiencies and gravity must be positive")
        if not self.slack_nodes:
            raise NetworkError("network needs at least one slack node")
        if not is_connected(self):
            raise NetworkError("network graph is not connected")


def is_connected(net: Network) -> bool:
    index = {n.id: k for k, n in enumerate(net.nodes)}
    if len(index) <= 1:
        return True
    rows = [index[p.from_node] for p in net.pipes]
    cols = [index[p.to_node] for p in net.pipes]
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(index),) * 2)
    ncomp, _ = connected_components(adj, directed=False)
    return ncomp == 1


def segment_count(length: float, delta: float) -> int:
    """Smallest number of equal segments with length strictly below ``delta``."""
    return int(math.floor(length / delta)) + 1


def refine_network(net: Network, delta: float) -> Network:
    """Split every pipe into equal segments shorter than ``delta``.

    Interior nodes are non-slack, take the pipe's density cap as their upper
    bound and the looser endpoint minimum as their lower bound.  Compressors
    move to the first (``+``) or last (``-``) segment of their pipe.
    """
    if not (delta > 0 and math.isfinite(delta)):
        raise NetworkError(f"refinement length must be positive, got {delta}")
    nodes = list(net.nodes)
    pipes = []
    parent = dict(net.parent)
    first_seg, last_seg = {}, {}
    for p in net.pipes:
        nseg = segment_count(p.length, delta)
        if nseg == 1:
            pipes.append(p)
            first_seg[p.id] = last_seg[p.id] = p.id
            continue
        lo = min(net.node(p.from_node).density_min, net.node(p.to_node).density_min)
        chain = [p.from_node]
        for k in range(1, nseg):
            nid = f"{p.id}#n{k}"
            nodes.append(Node(nid, slack=False, density_min=lo, density_max=p.density_max))
            parent[nid] = parent.get(p.id, p.id)
            chain.append(nid)
        chain.append(p.to_node)
        seg_len = p.length / nseg
        for k in range(nseg):
            sid = f"{p.id}#{k}"
            pipes.append(replace(p, id=sid, from_node=chain[k], to_node=chain[k + 1], length=seg_len))
            parent[sid] = parent.get(p.id, p.id)
        first_seg[p.id] = f"{p.id}#0"
        last_seg[p.id] = f"{p.id}#{nseg - 1}"
    comps = [replace(c, pipe=(first_seg if c.orientation == "+" else last_seg)[c.pipe])
             for c in net.compressors]
    return Network(tuple(nodes), tuple(pipes), tuple(comps), net.gas, net.scaling, parent)


def _scale_profile(profile, factor):
    if profile is None:
        return None
    return np.asarray(profile, dtype=float) * factor


def nondimensionalize(net: Network, scaling: Scaling) -> Network:
    """Divide lengths by l0, densities by rho0 and areas by the nominal area."""
    if net.is_nondim:
        raise NetworkError("network is already non-dimensional")
    if not isinstance(scaling, Scaling):
        raise NetworkError("scaling must be a Scaling instance")
    return _rescale(net, 1.0 / scaling.length, 1.0 / scaling.density, 1.0 / scaling.area, scaling)


def redimensionalize(net: Network) -> Network:
    if not net.is_nondim:
        raise NetworkError("network is already dimensional")
    s = net.scaling
    return _rescale(net, s.length, s.density, s.area, None)


def _rescale(net, fl, fr, fa, scaling):
    nodes = tuple(replace(n, density_min=n.density_min * fr, density_max=n.density_max * fr,
                          slack_density=_scale_profile(n.slack_density, fr)) for n in net.nodes)
    pipes = tuple(replace(p, length=p.length * fl, diameter=p.diameter * fl, area=p.area * fa,
                          density_max=p.density_max * fr) for p in net.pipes)
    return Network(nodes, pipes, net.compressors, net.gas, scaling, dict(net.parent))


@dataclass(frozen=True)
class IncidenceMatrices:
    """Signed incidence of the (refined) graph with slack rows first.

    ``A[i, k]`` is +1 when edge k enters node i and -1 when it leaves.  The
    compressor ratio at each edge end is carried by index arrays so that the
    weighted matrix ``B`` can be rebuilt for any ratio values.
    """

    A: sp.csr_matrix
    n_slack: int
    node_ids: tuple
    edge_ids: tuple
    tail: np.ndarray      # node index each edge leaves
    head: np.ndarray      # node index each edge enters
    length: np.ndarray    # Lambda diagonal
    friction: np.ndarray  # K diagonal, lambda / D (non-dimensional l0*lambda/D)
    area: np.ndarray      # X diagonal
    density_max: np.ndarray
    comp_edge: np.ndarray  # edge index per compressor
    comp_end: np.ndarray   # 0 = from end (under-alpha), 1 = to end (over-alpha)

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]

    @property
    def n_edges(self) -> int:
        return self.A.shape[1]

    @property
    def n_nonslack(self) -> int:
        return self.n_nodes - self.n_slack

    @property
    def A_sigma(self):
        return self.A[: self.n_slack]

    @property
    def A_q(self):
        return self.A[self.n_slack:]

    def edge_ratios(self, alpha: Optional[np.ndarray] = None):
        """Per-edge (from-end, to-end) ratios given one value per compressor."""
        af = np.ones(self.n_edges)
        at = np.ones(self.n_edges)
        if alpha is not None and len(self.comp_edge):
            alpha = np.asarray(alpha, dtype=float)
            fr = self.comp_end == 0
            af[self.comp_edge[fr]] = alpha[fr]
            at[self.comp_edge[~fr]] = alpha[~fr]
        return af, at

    def B(self, ratios=None) -> sp.csr_matrix:
        """Weighted incidence: +to-ratio where an edge enters, -from-ratio where it leaves."""
        af, at = ratios if ratios is not None else self.edge_ratios()
        e = np.arange(self.n_edges)
        data = np.concatenate([at, -af])
        rows = np.concatenate([self.head, self.tail])
        return sp.csr_matrix((data, (rows, np.concatenate([e, e]))), shape=self.A.shape)

    def B_sigma(self, ratios=None):
        return self.B(ratios)[: self.n_slack]

    def B_q(self, ratios=None):
        return self.B(ratios)[self.n_slack:]


def build_incidence(net: Network) -> IncidenceMatrices:
    ordered = net.ordered_nodes
    index = {n.id: k for k, n in enumerate(ordered)}
    ne = len(net.pipes)
    tail = np.array([index[p.from_node] for p in net.pipes], dtype=np.int64)
    head = np.array([index[p.to_node] for p in net.pipes], dtype=np.int64)
    e = np.arange(ne)
    A = sp.csr_matrix((np.concatenate([np.ones(ne), -np.ones(ne)]),
                       (np.concatenate([head, tail]), np.concatenate([e, e]))),
                      shape=(len(ordered), ne))
    eidx = {p.id: k for k, p in enumerate(net.pipes)}
    comp_edge = np.array([eidx[c.pipe] for c in net.compressors], dtype=np.int64)
    comp_end = np.array([0 if c.orientation == "+" else 1 for c in net.compressors], dtype=np.int64)
    return IncidenceMatrices(
        A=A,
        n_slack=len(net.slack_nodes),
        node_ids=tuple(n.id for n in ordered),
        edge_ids=tuple(p.id for p in net.pipes),
        tail=tail,
        head=head,
        length=np.array([p.length for p in net.pipes], dtype=float),
        friction=np.array([p.friction / p.diameter for p in net.pipes], dtype=float),
        area=np.array([p.area for p in net.pipes], dtype=float),
        density_max=np.array([p.density_max for p in net.pipes], dtype=float),
        comp_edge=comp_edge,
        comp_end=comp_end,
    )


def total_length(net: Network) -> float:
    return float(sum(p.length for p in net.pipes))


def node_bounds(net: Network, node_ids: Sequence[str]):
    lo = np.array([net.node(i).density_min for i in node_ids], dtype=float)
    hi = np.array([net.node(i).density_max for i in node_ids], dtype=float)
    return lo, hi
