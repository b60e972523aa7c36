"""Deterministic builder for the bundled 33-bus / 32-node community case.

The feeder uses the standard 33-bus radial impedances (ohm, converted to p.u.
on 12.66 kV / 1 MVA). Loads, heat demand, tariffs and renewable mixtures are
synthetic daily profiles. ``python -m ihpdispatch.casegen`` rewrites the JSON
files shipped in ``ihpdispatch/data``.
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .case import (
    Bus,
    CommunityCase,
    Consumer,
    Corridor,
    Generator,
    HeatNetwork,
    HeatNode,
    HeatPlant,
    Line,
    Pipe,
    PowerNetwork,
    RenewableUnit,
    RiskLevels,
    SharedStorage,
    Tariff,
    Weights,
    dump_case,
)
from .network import downstream_buses
from .uncertainty import GmmModel

Z_BASE = 12.66 ** 2 / 1.0

# (from, to, r ohm, x ohm)
FEEDER = [
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864), (4, 5, 0.3811, 0.1941),
    (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188), (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400),
    (9, 10, 1.0440, 0.7400), (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450), (16, 17, 1.2890, 1.7210),
    (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565), (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784),
    (21, 22, 0.7089, 0.9373), (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337), (28, 29, 0.8042, 0.7006),
    (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630), (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
]

# nominal (kW, kvar) at buses 2..33
BUS_LOAD = [
    (100, 60), (90, 40), (120, 80), (60, 30), (60, 20), (200, 100), (200, 100), (60, 20), (60, 20), (45, 30),
    (60, 35), (60, 35), (120, 80), (60, 10), (60, 20), (60, 20), (90, 40), (90, 40), (90, 40), (90, 40),
    (90, 40), (90, 50), (420, 200), (420, 200), (60, 25), (60, 25), (60, 20), (120, 70), (200, 600), (150, 70),
    (210, 100), (60, 40),
]

# heat tree: node 1 is the source; 2, 3, 6 and 9 are junctions
HEAT_PIPES = [
    (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 9), (9, 10), (10, 11),
    (2, 12), (12, 13), (13, 14), (14, 15),
    (3, 16), (16, 17), (17, 18), (18, 19),
    (6, 20), (20, 21), (21, 22), (22, 23), (23, 24),
    (9, 25), (25, 26), (26, 27), (27, 28), (28, 29), (29, 30),
    (11, 31), (31, 32),
]
HEAT_JUNCTIONS = {2, 3, 6, 9}

LOAD_SHAPE = np.array([0.55, 0.50, 0.48, 0.47, 0.48, 0.55, 0.68, 0.82, 0.88, 0.85, 0.82, 0.80,
                       0.78, 0.77, 0.78, 0.82, 0.90, 0.97, 1.00, 0.98, 0.92, 0.82, 0.70, 0.60])
HEAT_SHAPE = np.array([0.85, 0.88, 0.90, 0.92, 0.95, 1.00, 1.00, 0.95, 0.85, 0.75, 0.68, 0.62,
                       0.60, 0.60, 0.62, 0.68, 0.78, 0.88, 0.95, 0.98, 0.96, 0.93, 0.90, 0.87])
WIND_SHAPE = np.array([0.62, 0.66, 0.70, 0.72, 0.70, 0.64, 0.55, 0.45, 0.38, 0.33, 0.30, 0.28,
                       0.28, 0.30, 0.33, 0.36, 0.40, 0.44, 0.48, 0.52, 0.55, 0.58, 0.60, 0.61])
SOLAR_SHAPE = np.array([0, 0, 0, 0, 0, 0, 0.05, 0.18, 0.35, 0.52, 0.66, 0.75,
                        0.78, 0.74, 0.63, 0.48, 0.30, 0.12, 0.02, 0, 0, 0, 0, 0], dtype=float)
POWER_PRICE = np.array([40, 38, 36, 36, 38, 44, 55, 66, 70, 68, 64, 60,
                        58, 58, 60, 66, 76, 86, 90, 88, 78, 64, 52, 44], dtype=float)
HEAT_PRICE = np.array([44, 44, 44, 45, 46, 50, 55, 58, 56, 52, 50, 48,
                       47, 47, 48, 50, 55, 60, 62, 62, 58, 54, 50, 46], dtype=float)
GAS_PRICE = np.array([100] * 7 + [120] * 16 + [100], dtype=float)


def _mixture(mean: float, cap: float, spread: float) -> GmmModel:
    """Two-component mixture with the given mean, skewed towards forecast over-estimation."""
    if mean <= 1e-3 * cap:
        return GmmModel.from_components([(1.0, 2e-3 * cap, 6e-4 * cap)])
    sd = spread * cap * min(1.0, 2.5 * mean / cap + 0.1)
    # keep the lower tail inside [0, C]
    sd = min(sd, mean / 3.2, (cap - mean) / 3.2)
    low, high = mean - 0.6 * sd, mean + 0.9 * sd
    return GmmModel.from_components([(0.6, low, 0.8 * sd), (0.4, high, 0.9 * sd)])


def build_case(tight: bool = False) -> CommunityCase:
    """Bundled case; ``tight`` raises wind capacity so night-time surplus needs curtailment."""
    T = 24
    buses = tuple(Bus(b, 0.81, 1.21) for b in range(1, 34))
    lines = tuple(Line(f, t, r / Z_BASE, x / Z_BASE, 3.0, 3.5) for f, t, r, x in FEEDER)
    net0 = PowerNetwork(1.0, 1, buses, lines, ())

    gens = (
        Generator("G1", 1, 300.0, 40.0, 5.0, 0.1, 1.6, 0.8, 0.8, 0.5, 20.0, -1.5, 1.5),
        Generator("G2", 22, 160.0, 400.0, 4.0, 0.1, 0.8, 0.5, 0.5, 0.25, 25.0, -0.8, 0.8),
        Generator("G3", 33, 160.0, 405.0, 4.0, 0.1, 0.8, 0.5, 0.5, 0.25, 25.0, -0.8, 0.8),
    )
    wind_cap = 2.6 if tight else 1.5
    rens = []
    for rid, bus, kind, cap, shape, spread, pen in (("W1", 25, "wind", wind_cap, WIND_SHAPE, 0.10, 2000.0),
                                                    ("S1", 18, "solar", 1.0, SOLAR_SHAPE, 0.08, 1500.0)):
        gmm = tuple(_mixture(float(s) * cap, cap, spread) for s in shape)
        rens.append(RenewableUnit(rid, bus, kind, cap, pen, tuple(m.mean() for m in gmm), gmm))

    consumers = []
    load_nodes = [n for n in range(2, 33) if n not in HEAT_JUNCTIONS]
    for k, (kw, kvar) in enumerate(BUS_LOAD):
        bus = k + 2
        heat_scale = 0.030 + 0.008 * (k % 4)
        consumers.append(Consumer(
            f"C{bus}", bus, load_nodes[k % len(load_nodes)], 0.3, 2.0,
            tuple(np.round(0.45 * kw / 1000 * LOAD_SHAPE, 6)),
            tuple(np.round(heat_scale * HEAT_SHAPE, 6)),
            tuple(np.round(0.45 * kvar / 1000 * LOAD_SHAPE, 6))))

    corridors = []
    for cid, (f, t), limit in (("L1-2", (1, 2), 1.5), ("L3-23", (3, 23), 1.2), ("L6-26", (6, 26), 1.0)):
        below = downstream_buses(net0, f, t)
        corridors.append(Corridor(
            cid, limit,
            {g.id: -1.0 for g in gens if g.bus in below},
            {r.id: -1.0 for r in rens if r.bus in below},
            {c.id: 1.0 for c in consumers if c.bus in below}))
    net = PowerNetwork(1.0, 1, buses, lines, tuple(corridors))

    # heat: 2 kg/s through every exchanger, pipe flows sum what lies downstream
    children = {}
    for f, t in HEAT_PIPES:
        children.setdefault(f, []).append(t)

    def subtree_flow(n):
        own = 0.0 if n in HEAT_JUNCTIONS or n == 1 else 2.0
        return own + sum(subtree_flow(c) for c in children.get(n, []))

    pipes = tuple(Pipe(f, t, 400.0 + 40.0 * (t % 5), subtree_flow(t), 0.15) for f, t in HEAT_PIPES)
    nodes = tuple(HeatNode(n, "source" if n == 1 else "mixing" if n in HEAT_JUNCTIONS else "load")
                  for n in range(1, 33))
    heat = HeatNetwork(4182.0, 10.0, 70.0, 110.0, 30.0, 75.0, nodes, pipes)

    plant = HeatPlant("HP1", 1, 1, 0.95, 0.9, 0.0, 0.6, 0.0, 3.5, tuple(GAS_PRICE))
    ses = SharedStorage(1000.0, 0.125, 0.125, 0.1, 0.9, 0.9, 0.9, 200.0)
    shs = SharedStorage(1000.0, 0.125, 0.125, 0.1, 0.9, 0.9, 0.9, 200.0, heat_node=1)
    return CommunityCase(
        name="case33_32_tight" if tight else "case33_32", steps=T, step_hours=1.0,
        generators=gens, renewables=tuple(rens), heat_plants=(plant,),
        storage_electric=ses, storage_heat=shs, consumers=tuple(consumers),
        power_network=net, heat_network=heat,
        tariff=Tariff(tuple(POWER_PRICE), tuple(HEAT_PRICE), 100.0),
        risk=RiskLevels(0.05, 0.05, 0.05, 0.05), weights=Weights())


def write_bundled(directory: Path | None = None) -> list:
    directory = Path(directory or Path(__file__).parent / "data")
    out = []
    for tight, name in ((False, "case33_32.json"), (True, "case33_32_tight.json")):
        path = directory / name
        dump_case(build_case(tight), path)
        out.append(path)
    return out


if __name__ == "__main__":
    for p in write_bundled(Path(sys.argv[1]) if len(sys.argv) > 1 else None):
        print(p)
