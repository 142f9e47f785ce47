"""Bids, offers, baseline flows and the market-surplus objective."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence

import numpy as np

from .collocation import CollocationGrid, sample_hourly
from .network import Network


class MarketError(ValueError):
    pass


ROLES = ("buyer", "seller")


@dataclass(frozen=True, eq=False)
class TransferNode:
    """One buyer or one seller attached to a physical node.

    Price and quantity limits are hourly series (scalars are broadcast).
    Quantities are mass-flow deviations from the node's baseline.
    """

    id: str
    node: str
    role: str
    price: np.ndarray
    qty_min: np.ndarray
    qty_max: np.ndarray

    def __post_init__(self):
        if self.role not in ROLES:
            raise MarketError(f"transfer {self.id}: role must be buyer or seller, got {self.role!r}")
        for name in ("price", "qty_min", "qty_max"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if np.any(self.qty_min > self.qty_max):
            raise MarketError(f"transfer {self.id}: qty_min exceeds qty_max")
        if np.any(~np.isfinite(self.price)):
            raise MarketError(f"transfer {self.id}: prices must be finite")

    @property
    def is_buyer(self) -> bool:
        return self.role == "buyer"


@dataclass(eq=False)
class MarketData:
    transfers: tuple = ()
    baseline: Dict[str, np.ndarray] = field(default_factory=dict)
    hours: int = 24
    hour_seconds: float = 3600.0

    def __post_init__(self):
        if int(self.hours) != self.hours or self.hours < 1:
            raise MarketError("hours must be a positive integer")
        if not self.hour_seconds > 0:
            raise MarketError("hour_seconds must be positive")
        self.transfers = tuple(self.transfers)
        self.baseline = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in self.baseline.items()}
        ids = [t.id for t in self.transfers]
        if len(set(ids)) != len(ids):
            raise MarketError("duplicate transfer ids")
        for t in self.transfers:
            for name in ("price", "qty_min", "qty_max"):
                if getattr(t, name).size not in (1, self.hours):
                    raise MarketError(f"transfer {t.id}: {name} must cover {self.hours} hours")
        for k, v in self.baseline.items():
            if v.size not in (1, self.hours):
                raise MarketError(f"baseline at {k} must cover {self.hours} hours")

    def check_against(self, net: Network) -> None:
        known = {n.id for n in net.nodes}
        slack = {n.id for n in net.slack_nodes}
        at_slack: Dict[str, int] = {}
        for t in self.transfers:
            if t.node not in known:
                raise MarketError(f"transfer {t.id} attached to unknown node {t.node}")
            if t.node in slack:
                if t.is_buyer:
                    raise MarketError(f"transfer {t.id}: buyer attached to slack node {t.node}")
                at_slack[t.node] = at_slack.get(t.node, 0) + 1
                if at_slack[t.node] > 1:
                    raise MarketError(f"slack node {t.node} carries more than one supplier")
        for k in self.baseline:
            if k not in known:
                raise MarketError(f"baseline given for unknown node {k}")

    def hourly(self, values) -> np.ndarray:
        v = np.atleast_1d(np.asarray(values, dtype=float))
        return np.broadcast_to(v, (self.hours,)).copy() if v.size == 1 else v

    def baseline_series(self, node_id: str) -> np.ndarray:
        return self.hourly(self.baseline.get(node_id, 0.0))


def check_baseline_balance(baseline: Mapping[str, np.ndarray], grid: CollocationGrid,
                           hour_length: float = 1.0) -> float:
    """Quadrature of the summed baseline withdrawals over the grid."""
    total = 0.0
    for series in baseline.values():
        total += float(np.sum(sample_hourly(series, grid.points, hour_length) * grid.weights))
    return total


def bounds_from_bid(baseline, bid):
    """Purchase/sale room between a baseline flow and a desired quantity bid.

    Returns ``(d_min, d_max, s_min, s_max)``: a bid above the baseline opens
    room to buy the difference, a bid below it opens room to sell.
    """
    baseline = np.asarray(baseline, dtype=float)
    bid = np.asarray(bid, dtype=float)
    if baseline.shape != bid.shape:
        raise MarketError("baseline and bid must share a grid")
    zero = np.zeros_like(baseline)
    return zero, np.maximum(bid - baseline, 0.0), zero.copy(), np.maximum(baseline - bid, 0.0)


def compose_injection(baseline: Mapping[str, np.ndarray], schedule: Mapping[str, np.ndarray],
                      transfers: Sequence[TransferNode], net: Network) -> np.ndarray:
    """Withdrawal q_j = baseline + purchases - sales at every non-slack node.

    Rows follow the non-slack order of ``net``; columns are time points.
    Suppliers at slack nodes do not enter: slack inflow is free.
    """
    slack = {n.id for n in net.slack_nodes}
    ids = [n.id for n in net.nonslack_nodes]
    row = {k: i for i, k in enumerate(ids)}
    lengths = {np.size(v) for v in schedule.values()} | {np.size(v) for v in baseline.values()}
    npts = max(lengths, default=1)
    q = np.zeros((len(ids), npts))
    for k, v in baseline.items():
        if k in row:
            q[row[k]] += v
    for t in transfers:
        if t.node in slack:
            if t.is_buyer:
                raise MarketError(f"transfer {t.id}: buyer attached to slack node {t.node}")
            continue
        if t.node not in row:
            raise MarketError(f"transfer {t.id} attached to unknown node {t.node}")
        amount = np.asarray(schedule.get(t.id, 0.0), dtype=float)
        q[row[t.node]] += amount if t.is_buyer else -amount
    return q


def market_surplus(schedule: Mapping[str, np.ndarray], transfers: Sequence[TransferNode],
                   grid: CollocationGrid, hour_length: float = 1.0) -> float:
    """Trapezoid (circular) quadrature of buyer value minus seller cost."""
    total = 0.0
    for t in transfers:
        if t.id not in schedule:
            continue
        price = sample_hourly(t.price if t.price.size > 1 else t.price[0], grid.points, hour_length)
        value = float(np.sum(price * np.asarray(schedule[t.id], dtype=float) * grid.weights))
        total += value if t.is_buyer else -value
    return total
