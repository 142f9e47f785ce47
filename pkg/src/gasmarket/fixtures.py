"""Small reference networks and markets used by tests, examples and the CLI.

The 25-node network follows the layout of a common 25-junction benchmark
(24 pipes, 5 compressors, one supply node) but every length, diameter,
bound and bid here is synthetic.
"""
from __future__ import annotations

import numpy as np

from .market import MarketData, TransferNode
from .network import Compressor, GasProperties, Network, Node, Pipe, Scaling

SOUND_SPEED = 377.0
BAR = 1e5


def density(pressure_pa: float, sound_speed: float = SOUND_SPEED) -> float:
    return pressure_pa / sound_speed ** 2


def default_scaling() -> Scaling:
    return Scaling(length=10_000.0, density=35.0, sound_speed=SOUND_SPEED)


def single_pipe(friction_length: float = 1.0, inlet_density: float = 1.0) -> Network:
    """Non-dimensional slack -> junction pipe with L*K = ``friction_length``."""
    return Network(
        (Node("S", slack=True, slack_density=np.array([inlet_density])), Node("J", density_min=1e-3)),
        (Pipe("P", "S", "J", length=1.0, diameter=1.0, friction=friction_length, area=1.0),),
        scaling=Scaling.identity())


def toy_market(seller_price: float = 3.0, buyer_price: float = 5.0, supplier_price: float = 4.0,
               buyer_cap: float = 0.2, seller_cap: float = 1.0, hours: int = 24) -> MarketData:
    """One delivery node with a capped buyer, a cheap seller and a dearer supply node."""
    return MarketData((
        TransferNode("supply", "S", "seller", supplier_price, 0.0, np.inf),
        TransferNode("buyer", "J", "buyer", buyer_price, 0.0, buyer_cap),
        TransferNode("seller", "J", "seller", seller_price, 0.0, seller_cap),
    ), {}, hours=hours, hour_seconds=1.0)


def line3(maop_bar: float = 55.0, ratio_max: float = 1.6, compressor: bool = True) -> Network:
    """Supply S -> J1 -> J2 in SI units; a booster at the head of the second pipe."""
    gas = GasProperties(SOUND_SPEED)
    nodes = (
        Node("S", slack=True, density_min=density(20 * BAR), density_max=density(80 * BAR),
             slack_density=np.array([density(45 * BAR)])),
        Node("J1", density_min=density(30 * BAR), density_max=density(maop_bar * BAR)),
        Node("J2", density_min=density(30 * BAR), density_max=density(maop_bar * BAR)),
    )
    pipes = (
        Pipe("P1", "S", "J1", 50_000.0, 0.8, 0.01, density_max=density(maop_bar * BAR)),
        Pipe("P2", "J1", "J2", 50_000.0, 0.6, 0.01, density_max=density(maop_bar * BAR)),
    )
    comps = (Compressor("C1", "P2", "+", ratio_max=ratio_max),) if compressor else ()
    return Network(nodes, pipes, comps, gas)


def line3_market(peak_cap: float = 100.0, offpeak_cap: float = 10.0, buyer_price: float = 10.0,
                 supply_price: float = 2.0, seller_price: float = 3.0, base: float = 60.0) -> MarketData:
    """Buyer at J2 with a daytime peak, seller at J1, priced supply at S (kg/s, currency/kg)."""
    hours = np.arange(24)
    cap = np.where((hours >= 8) & (hours < 20), peak_cap, offpeak_cap)
    return MarketData((
        TransferNode("supply", "S", "seller", supply_price, -base, np.inf),
        TransferNode("buyer", "J2", "buyer", buyer_price, 0.0, cap),
        TransferNode("seller", "J1", "seller", seller_price, 0.0, 20.0),
    ), {"J2": np.full(24, base), "S": np.full(24, -base)}, hours=24)


def smooth_line_market(base: float = 50.0, swing: float = 10.0) -> MarketData:
    """Slowly varying baseline on the 3-node line; bids never bind."""
    t = np.arange(24) + 0.5
    prof = base + swing * np.sin(2 * np.pi * t / 24)
    return MarketData((
        TransferNode("supply", "S", "seller", 2.0, -np.inf, np.inf),
        TransferNode("buyer", "J2", "buyer", 2.5, 0.0, 5.0),
    ), {"J2": prof, "S": -prof}, hours=24)


def long_line(length_km: float = 300.0, diameter: float = 0.6, supply_bar: float = 60.0) -> Network:
    """Two equal pipes S -> J1 -> J2 without compression.

    Long enough that the slowest capacitive mode spans several hours, so a
    one-hour collocation step resolves the dynamics.
    """
    gas = GasProperties(SOUND_SPEED)
    nodes = (
        Node("S", slack=True, density_min=density(20 * BAR), density_max=density(80 * BAR),
             slack_density=np.array([density(supply_bar * BAR)])),
        Node("J1", density_min=density(10 * BAR), density_max=density(80 * BAR)),
        Node("J2", density_min=density(10 * BAR), density_max=density(80 * BAR)),
    )
    half = length_km * 500.0
    pipes = (Pipe("P1", "S", "J1", half, diameter, 0.01), Pipe("P2", "J1", "J2", half, diameter, 0.01))
    return Network(nodes, pipes, (), gas)


def long_line_market(base: float = 40.0, swing: float = 0.2) -> MarketData:
    """Gentle daily demand cycle at J2; the single bid never binds."""
    t = np.arange(24) + 0.5
    prof = base + swing * np.sin(2 * np.pi * t / 24)
    return MarketData((
        TransferNode("supply", "S", "seller", 2.0, -np.inf, np.inf),
        TransferNode("buyer", "J2", "buyer", 2.5, 0.0, 1.0),
    ), {"J2": prof, "S": -prof}, hours=24)


# 25-junction synthetic layout: trunk J1..J10 with five laterals
_PIPES25 = [
    # id, from, to, km, diameter m
    ("P1", "J1", "J2", 40, 0.9), ("P2", "J2", "J3", 35, 0.9), ("P3", "J3", "J4", 45, 0.9),
    ("P4", "J4", "J5", 30, 0.9), ("P5", "J5", "J6", 40, 0.9), ("P6", "J6", "J7", 35, 0.8),
    ("P7", "J7", "J8", 30, 0.8), ("P8", "J8", "J9", 45, 0.8), ("P9", "J9", "J10", 25, 0.7),
    ("P10", "J3", "J11", 30, 0.6), ("P11", "J11", "J12", 40, 0.6), ("P12", "J12", "J13", 25, 0.5),
    ("P13", "J13", "J14", 20, 0.5), ("P14", "J6", "J15", 35, 0.6), ("P15", "J15", "J16", 30, 0.6),
    ("P16", "J16", "J17", 25, 0.5), ("P17", "J17", "J18", 20, 0.5), ("P18", "J8", "J19", 30, 0.6),
    ("P19", "J19", "J20", 25, 0.5), ("P20", "J20", "J21", 20, 0.5), ("P21", "J12", "J22", 30, 0.5),
    ("P22", "J22", "J23", 20, 0.4), ("P23", "J16", "J24", 25, 0.5), ("P24", "J24", "J25", 20, 0.4),
]
_COMPS25 = [("C1", "P1"), ("C2", "P4"), ("C3", "P7"), ("C4", "P11"), ("C5", "P15")]
_LOADS25 = {"J10": 40.0, "J14": 25.0, "J18": 25.0, "J21": 30.0, "J23": 15.0, "J25": 15.0, "J9": 20.0}


def synthetic25(maop_bar: float = 70.0, min_bar: float = 30.0, supply_bar: float = 50.0) -> Network:
    gas = GasProperties(SOUND_SPEED)
    ids = [f"J{i}" for i in range(1, 26)]
    nodes = tuple(
        Node(j, slack=(j == "J1"), density_min=density(min_bar * BAR), density_max=density(maop_bar * BAR),
             slack_density=np.array([density(supply_bar * BAR)]) if j == "J1" else None)
        for j in ids)
    pipes = tuple(Pipe(p, a, b, km * 1000.0, d, 0.01, density_max=density(maop_bar * BAR))
                  for p, a, b, km, d in _PIPES25)
    comps = tuple(Compressor(c, p, "+", ratio_max=1.8, power_max=15e6) for c, p in _COMPS25)
    return Network(nodes, pipes, comps, gas)


def synthetic25_market() -> MarketData:
    hours = np.arange(24)
    day = (hours >= 7) & (hours < 21)
    total = sum(_LOADS25.values())
    baseline = {j: np.full(24, v) for j, v in _LOADS25.items()}
    baseline["J1"] = np.full(24, -total)
    transfers = [TransferNode("supply", "J1", "seller", 2.0, -total, np.inf)]
    for k, (j, price) in enumerate([("J10", 9.0), ("J14", 8.0), ("J18", 7.5), ("J21", 8.5), ("J25", 7.0)]):
        cap = np.where(day, 40.0, 10.0)
        transfers.append(TransferNode(f"buy{k + 1}", j, "buyer", price + 0.5 * day, 0.0, cap))
    for k, (j, price) in enumerate([("J13", 2.5), ("J20", 3.0)]):
        transfers.append(TransferNode(f"sell{k + 1}", j, "seller", price, 0.0, 15.0))
    return MarketData(tuple(transfers), baseline, hours=24)
