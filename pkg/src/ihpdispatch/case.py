"""Community case: domain types, case-file loading and validation.

Case files are JSON documents (``schema_version: 1``); see ``docs/case_schema.md``.
Units: power MW, heat MW (thermal), storage energy kWh, prices currency/MWh,
temperatures degC, pipe length m, mass flow kg/s, leakage W/(m K).
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .uncertainty import GmmModel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class CaseError(ValueError):
    """Base class for case-file problems."""


class CaseParseError(CaseError):
    pass


class CaseValidationError(CaseError):
    def __init__(self, diagnostic: "Diagnostic"):
        super().__init__(f"{diagnostic.path}: {diagnostic.message}")
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    path: str
    message: str


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Generator:
    id: str
    bus: int
    a: float
    b: float
    c: float
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float
    participation: float
    adjust_cost: float
    q_min: float
    q_max: float


@dataclass(frozen=True)
class RenewableUnit:
    id: str
    bus: int
    kind: str  # "wind" | "solar"
    capacity: float
    penalty: float
    forecast: tuple
    gmm: tuple  # one GmmModel per day-ahead step


@dataclass(frozen=True)
class HeatPlant:
    id: str
    bus: int
    heat_node: int
    eta_ph: float
    eta_gh: float
    p2h_min: float
    p2h_max: float
    gas_min: float
    gas_max: float
    gas_price: tuple


@dataclass(frozen=True)
class SharedStorage:
    capacity_kwh: float
    charge_rate: float
    discharge_rate: float
    soc_min: float
    soc_max: float
    eta_c: float
    eta_d: float
    initial_kwh: float
    bus: int | None = None
    heat_node: int | None = None

    @property
    def capacity_mwh(self) -> float:
        return self.capacity_kwh / 1000.0

    @property
    def initial_mwh(self) -> float:
        return self.initial_kwh / 1000.0

    @property
    def max_charge(self) -> float:
        """Charging power limit (MW)."""
        return self.charge_rate * self.capacity_mwh

    @property
    def max_discharge(self) -> float:
        return self.discharge_rate * self.capacity_mwh


@dataclass(frozen=True)
class Consumer:
    id: str
    bus: int
    heat_node: int
    alpha: float
    budget: float
    base_power: tuple
    base_heat: tuple
    base_reactive: tuple


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float  # squared voltage magnitude, p.u.
    v_max: float


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    p_max: float
    i_max: float  # current magnitude limit, p.u.


@dataclass(frozen=True)
class Corridor:
    """Monitored line with PTDF rows keyed by element id."""
    id: str
    limit: float
    ptdf_generators: dict
    ptdf_renewables: dict
    ptdf_consumers: dict


@dataclass(frozen=True)
class PowerNetwork:
    base_mva: float
    root_bus: int
    buses: tuple
    lines: tuple
    corridors: tuple

    @property
    def bus_ids(self) -> list:
        return [b.id for b in self.buses]


@dataclass(frozen=True)
class HeatNode:
    id: int
    kind: str  # "source" | "load" | "mixing"


@dataclass(frozen=True)
class Pipe:
    from_node: int
    to_node: int
    length: float
    mass_flow: float
    leakage: float


@dataclass(frozen=True)
class HeatNetwork:
    cp: float
    ambient: float
    supply_min: float
    supply_max: float
    return_min: float
    return_max: float
    nodes: tuple
    pipes: tuple

    def node_ids(self, kind: str | None = None) -> list:
        return [n.id for n in self.nodes if kind is None or n.kind == kind]


@dataclass(frozen=True)
class Tariff:
    base_power: tuple
    base_heat: tuple
    slope: float


@dataclass(frozen=True)
class RiskLevels:
    alpha_up: float
    alpha_dr: float
    alpha_line_up: float
    alpha_line_down: float


@dataclass(frozen=True)
class Weights:
    slack_reserve: float = 1000.0
    slack_line: float = 1000.0
    taylor_cuts: int = 20


@dataclass(frozen=True)
class CommunityCase:
    name: str
    steps: int
    step_hours: float
    generators: tuple
    renewables: tuple
    heat_plants: tuple
    storage_electric: SharedStorage
    storage_heat: SharedStorage
    consumers: tuple
    power_network: PowerNetwork
    heat_network: HeatNetwork
    tariff: Tariff
    risk: RiskLevels
    weights: Weights = field(default_factory=Weights)
    rt_electric_minutes: int = 5
    rt_heat_minutes: int = 60

    def replace(self, **changes) -> "CommunityCase":
        return dataclasses.replace(self, **changes)

    def with_alpha(self, alpha: float) -> "CommunityCase":
        return self.replace(consumers=tuple(dataclasses.replace(c, alpha=alpha) for c in self.consumers))

    def with_storage_capacity(self, kwh: float, initial_fraction: float = 0.2) -> "CommunityCase":
        def resize(s):
            return dataclasses.replace(s, capacity_kwh=kwh, initial_kwh=initial_fraction * kwh)
        return self.replace(storage_electric=resize(self.storage_electric),
                            storage_heat=resize(self.storage_heat))

    def with_p2h_max(self, value: float) -> "CommunityCase":
        return self.replace(heat_plants=tuple(dataclasses.replace(h, p2h_max=value) for h in self.heat_plants))

    def with_risk(self, **levels) -> "CommunityCase":
        levels = {k: v for k, v in levels.items() if v is not None}
        return self.replace(risk=dataclasses.replace(self.risk, **levels))

    @property
    def rt_steps_per_hour(self) -> int:
        return int(round(60 * self.step_hours / self.rt_electric_minutes))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

class _Reader:
    """Pulls typed fields out of the raw JSON tree, recording the path."""

    def __init__(self, warnings: list):
        self.warnings = warnings

    def get(self, obj: dict, key: str, path: str, default: Any = ...):
        if not isinstance(obj, dict):
            raise CaseParseError(f"{path}: expected an object")
        if key not in obj:
            if default is ...:
                raise CaseParseError(f"{path}.{key}: missing required field")
            return default
        return obj[key]

    def num(self, obj, key, path, default=...):
        v = self.get(obj, key, path, default)
        try:
            return float(v)
        except (TypeError, ValueError):
            raise CaseParseError(f"{path}.{key}: expected a number, got {v!r}") from None

    def series(self, obj, key, path, steps, optional=False):
        if optional and key not in obj:
            self.warnings.append(Diagnostic("warning", f"{path}.{key}", "missing series, defaulting to zero"))
            return tuple([0.0] * steps)
        v = self.get(obj, key, path)
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) for x in v):
            raise CaseParseError(f"{path}.{key}: expected a list of numbers")
        return tuple(float(x) for x in v)


def _parse_gmm(raw, path) -> GmmModel:
    try:
        comps = [tuple(float(v) for v in c) for c in raw]
        if not comps or any(len(c) != 3 for c in comps):
            raise ValueError("each component must be [weight, mean, std]")
        return GmmModel.from_components(comps)
    except (TypeError, ValueError) as exc:
        raise CaseParseError(f"{path}: {exc}") from None


def case_from_dict(doc: dict, warnings: list | None = None) -> CommunityCase:
    """Build a case from a parsed JSON document (no invariant checks)."""
    warnings = [] if warnings is None else warnings
    rd = _Reader(warnings)
    if not isinstance(doc, dict):
        raise CaseParseError("case document must be a JSON object")
    version = rd.get(doc, "schema_version", "$")
    if version != SCHEMA_VERSION:
        raise CaseParseError(f"$.schema_version: unsupported version {version!r}")
    hz = rd.get(doc, "horizon", "$")
    steps = int(rd.num(hz, "steps", "$.horizon"))

    gens = []
    for i, g in enumerate(rd.get(doc, "generators", "$")):
        p = f"$.generators[{i}]"
        gens.append(Generator(
            id=str(rd.get(g, "id", p)), bus=int(rd.num(g, "bus", p)),
            a=rd.num(g, "a", p), b=rd.num(g, "b", p), c=rd.num(g, "c", p),
            p_min=rd.num(g, "p_min", p), p_max=rd.num(g, "p_max", p),
            ramp_up=rd.num(g, "ramp_up", p), ramp_down=rd.num(g, "ramp_down", p),
            participation=rd.num(g, "participation", p), adjust_cost=rd.num(g, "adjust_cost", p),
            q_min=rd.num(g, "q_min", p, -1e3), q_max=rd.num(g, "q_max", p, 1e3)))

    rens = []
    for i, r in enumerate(rd.get(doc, "renewables", "$")):
        p = f"$.renewables[{i}]"
        raw = rd.get(r, "gmm", p)
        if not isinstance(raw, list):
            raise CaseParseError(f"{p}.gmm: expected one mixture per step")
        gmm = tuple(_parse_gmm(m, f"{p}.gmm[{t}]") for t, m in enumerate(raw))
        if "forecast" in r:
            forecast = rd.series(r, "forecast", p, steps)
        else:
            forecast = tuple(m.mean() for m in gmm)
        rens.append(RenewableUnit(
            id=str(rd.get(r, "id", p)), bus=int(rd.num(r, "bus", p)), kind=str(rd.get(r, "kind", p)),
            capacity=rd.num(r, "capacity", p), penalty=rd.num(r, "penalty", p),
            forecast=forecast, gmm=gmm))

    plants = []
    for i, h in enumerate(rd.get(doc, "heat_plants", "$")):
        p = f"$.heat_plants[{i}]"
        plants.append(HeatPlant(
            id=str(rd.get(h, "id", p)), bus=int(rd.num(h, "bus", p)), heat_node=int(rd.num(h, "heat_node", p)),
            eta_ph=rd.num(h, "eta_ph", p), eta_gh=rd.num(h, "eta_gh", p),
            p2h_min=rd.num(h, "p2h_min", p), p2h_max=rd.num(h, "p2h_max", p),
            gas_min=rd.num(h, "gas_min", p), gas_max=rd.num(h, "gas_max", p),
            gas_price=rd.series(h, "gas_price", p, steps)))

    def storage(key):
        s = rd.get(doc, key, "$")
        p = f"$.{key}"
        bus = s.get("bus") if isinstance(s, dict) else None
        node = s.get("heat_node") if isinstance(s, dict) else None
        return SharedStorage(
            capacity_kwh=rd.num(s, "capacity_kwh", p), charge_rate=rd.num(s, "charge_rate", p),
            discharge_rate=rd.num(s, "discharge_rate", p), soc_min=rd.num(s, "soc_min", p),
            soc_max=rd.num(s, "soc_max", p), eta_c=rd.num(s, "eta_c", p), eta_d=rd.num(s, "eta_d", p),
            initial_kwh=rd.num(s, "initial_kwh", p),
            bus=None if bus is None else int(bus), heat_node=None if node is None else int(node))

    consumers = []
    for i, c in enumerate(rd.get(doc, "consumers", "$")):
        p = f"$.consumers[{i}]"
        consumers.append(Consumer(
            id=str(rd.get(c, "id", p)), bus=int(rd.num(c, "bus", p)), heat_node=int(rd.num(c, "heat_node", p)),
            alpha=rd.num(c, "alpha", p), budget=rd.num(c, "budget", p),
            base_power=rd.series(c, "base_power", p, steps),
            base_heat=rd.series(c, "base_heat", p, steps),
            base_reactive=rd.series(c, "base_reactive", p, steps, optional=True)))

    pn = rd.get(doc, "power_network", "$")
    p = "$.power_network"
    buses = tuple(Bus(int(rd.num(b, "id", f"{p}.buses[{i}]")), rd.num(b, "v_min", f"{p}.buses[{i}]"),
                      rd.num(b, "v_max", f"{p}.buses[{i}]")) for i, b in enumerate(rd.get(pn, "buses", p)))
    lines = tuple(Line(int(rd.num(ln, "from", f"{p}.lines[{i}]")), int(rd.num(ln, "to", f"{p}.lines[{i}]")),
                       rd.num(ln, "r", f"{p}.lines[{i}]"), rd.num(ln, "x", f"{p}.lines[{i}]"),
                       rd.num(ln, "p_max", f"{p}.lines[{i}]"), rd.num(ln, "i_max", f"{p}.lines[{i}]"))
                  for i, ln in enumerate(rd.get(pn, "lines", p)))
    corridors = []
    for i, cr in enumerate(rd.get(pn, "corridors", p, [])):
        q = f"{p}.corridors[{i}]"
        ptdf = rd.get(cr, "ptdf", q)

        def row(key):
            v = ptdf.get(key, {}) if isinstance(ptdf, dict) else None
            if not isinstance(v, dict):
                raise CaseParseError(f"{q}.ptdf.{key}: expected an object of id -> factor")
            return {str(k): float(x) for k, x in v.items()}
        corridors.append(Corridor(str(rd.get(cr, "id", q)), rd.num(cr, "limit", q),
                                  row("generators"), row("renewables"), row("consumers")))
    network = PowerNetwork(rd.num(pn, "base_mva", p, 1.0), int(rd.num(pn, "root_bus", p)),
                           buses, lines, tuple(corridors))

    hn = rd.get(doc, "heat_network", "$")
    p = "$.heat_network"
    heat = HeatNetwork(
        cp=rd.num(hn, "cp", p), ambient=rd.num(hn, "ambient", p),
        supply_min=rd.num(hn, "supply_min", p), supply_max=rd.num(hn, "supply_max", p),
        return_min=rd.num(hn, "return_min", p), return_max=rd.num(hn, "return_max", p),
        nodes=tuple(HeatNode(int(rd.num(n, "id", f"{p}.nodes[{i}]")), str(rd.get(n, "kind", f"{p}.nodes[{i}]")))
                    for i, n in enumerate(rd.get(hn, "nodes", p))),
        pipes=tuple(Pipe(int(rd.num(q, "from", f"{p}.pipes[{i}]")), int(rd.num(q, "to", f"{p}.pipes[{i}]")),
                         rd.num(q, "length", f"{p}.pipes[{i}]"), rd.num(q, "mass_flow", f"{p}.pipes[{i}]"),
                         rd.num(q, "leakage", f"{p}.pipes[{i}]"))
                    for i, q in enumerate(rd.get(hn, "pipes", p))))

    tf = rd.get(doc, "tariff", "$")
    tariff = Tariff(rd.series(tf, "base_power", "$.tariff", steps), rd.series(tf, "base_heat", "$.tariff", steps),
                    rd.num(tf, "slope", "$.tariff"))
    rk = rd.get(doc, "risk", "$")
    risk = RiskLevels(rd.num(rk, "alpha_up", "$.risk"), rd.num(rk, "alpha_dr", "$.risk"),
                      rd.num(rk, "alpha_line_up", "$.risk"), rd.num(rk, "alpha_line_down", "$.risk"))
    wt = doc.get("weights", {})
    weights = Weights(rd.num(wt, "slack_reserve", "$.weights", 1000.0),
                      rd.num(wt, "slack_line", "$.weights", 1000.0),
                      int(rd.num(wt, "taylor_cuts", "$.weights", 20)))

    return CommunityCase(
        name=str(doc.get("name", "case")), steps=steps, step_hours=rd.num(hz, "step_hours", "$.horizon", 1.0),
        generators=tuple(gens), renewables=tuple(rens), heat_plants=tuple(plants),
        storage_electric=storage("storage_electric"), storage_heat=storage("storage_heat"),
        consumers=tuple(consumers), power_network=network, heat_network=heat,
        tariff=tariff, risk=risk, weights=weights,
        rt_electric_minutes=int(rd.num(hz, "rt_electric_minutes", "$.horizon", 5)),
        rt_heat_minutes=int(rd.num(hz, "rt_heat_minutes", "$.horizon", 60)))


def case_to_dict(case: CommunityCase) -> dict:
    """Inverse of :func:`case_from_dict`."""
    def storage(s):
        d = {"capacity_kwh": s.capacity_kwh, "charge_rate": s.charge_rate, "discharge_rate": s.discharge_rate,
             "soc_min": s.soc_min, "soc_max": s.soc_max, "eta_c": s.eta_c, "eta_d": s.eta_d,
             "initial_kwh": s.initial_kwh}
        if s.bus is not None:
            d["bus"] = s.bus
        if s.heat_node is not None:
            d["heat_node"] = s.heat_node
        return d

    pn, hn = case.power_network, case.heat_network
    return {
        "schema_version": SCHEMA_VERSION,
        "name": case.name,
        "horizon": {"steps": case.steps, "step_hours": case.step_hours,
                    "rt_electric_minutes": case.rt_electric_minutes, "rt_heat_minutes": case.rt_heat_minutes},
        "generators": [{"id": g.id, "bus": g.bus, "a": g.a, "b": g.b, "c": g.c, "p_min": g.p_min,
                        "p_max": g.p_max, "ramp_up": g.ramp_up, "ramp_down": g.ramp_down,
                        "participation": g.participation, "adjust_cost": g.adjust_cost,
                        "q_min": g.q_min, "q_max": g.q_max} for g in case.generators],
        "renewables": [{"id": r.id, "bus": r.bus, "kind": r.kind, "capacity": r.capacity, "penalty": r.penalty,
                        "forecast": list(r.forecast),
                        "gmm": [[list(c) for c in m.components] for m in r.gmm]} for r in case.renewables],
        "heat_plants": [{"id": h.id, "bus": h.bus, "heat_node": h.heat_node, "eta_ph": h.eta_ph,
                         "eta_gh": h.eta_gh, "p2h_min": h.p2h_min, "p2h_max": h.p2h_max,
                         "gas_min": h.gas_min, "gas_max": h.gas_max, "gas_price": list(h.gas_price)}
                        for h in case.heat_plants],
        "storage_electric": storage(case.storage_electric),
        "storage_heat": storage(case.storage_heat),
        "consumers": [{"id": c.id, "bus": c.bus, "heat_node": c.heat_node, "alpha": c.alpha, "budget": c.budget,
                       "base_power": list(c.base_power), "base_heat": list(c.base_heat),
                       "base_reactive": list(c.base_reactive)} for c in case.consumers],
        "power_network": {
            "base_mva": pn.base_mva, "root_bus": pn.root_bus,
            "buses": [{"id": b.id, "v_min": b.v_min, "v_max": b.v_max} for b in pn.buses],
            "lines": [{"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x, "p_max": ln.p_max,
                       "i_max": ln.i_max} for ln in pn.lines],
            "corridors": [{"id": c.id, "limit": c.limit,
                           "ptdf": {"generators": dict(c.ptdf_generators), "renewables": dict(c.ptdf_renewables),
                                    "consumers": dict(c.ptdf_consumers)}} for c in pn.corridors]},
        "heat_network": {
            "cp": hn.cp, "ambient": hn.ambient, "supply_min": hn.supply_min, "supply_max": hn.supply_max,
            "return_min": hn.return_min, "return_max": hn.return_max,
            "nodes": [{"id": n.id, "kind": n.kind} for n in hn.nodes],
            "pipes": [{"from": q.from_node, "to": q.to_node, "length": q.length, "mass_flow": q.mass_flow,
                       "leakage": q.leakage} for q in hn.pipes]},
        "tariff": {"base_power": list(case.tariff.base_power), "base_heat": list(case.tariff.base_heat),
                   "slope": case.tariff.slope},
        "risk": {"alpha_up": case.risk.alpha_up, "alpha_dr": case.risk.alpha_dr,
                 "alpha_line_up": case.risk.alpha_line_up, "alpha_line_down": case.risk.alpha_line_down},
        "weights": {"slack_reserve": case.weights.slack_reserve, "slack_line": case.weights.slack_line,
                    "taylor_cuts": case.weights.taylor_cuts},
    }


def dump_case(case: CommunityCase, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=1) + "\n")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _check(diags, ok, path, message, severity="error"):
    if not ok:
        diags.append(Diagnostic(severity, path, message))


def _check_storage(diags, s: SharedStorage, path):
    _check(diags, 0 <= s.soc_min < s.soc_max <= 1, f"{path}.soc_min",
           f"storage SOC bounds must satisfy 0 <= soc_min < soc_max <= 1 (got {s.soc_min}, {s.soc_max})")
    _check(diags, 0 < s.eta_c <= 1 and 0 < s.eta_d <= 1, f"{path}.eta_c", "storage efficiencies must lie in (0, 1]")
    _check(diags, s.capacity_kwh >= 0, f"{path}.capacity_kwh", "storage capacity must be nonnegative")
    _check(diags, s.charge_rate >= 0 and s.discharge_rate >= 0, f"{path}.charge_rate",
           "charge/discharge rates must be nonnegative")
    tol = 1e-9 * max(1.0, s.capacity_kwh)
    _check(diags, s.soc_min * s.capacity_kwh - tol <= s.initial_kwh <= s.soc_max * s.capacity_kwh + tol,
           f"{path}.initial_kwh", "initial energy must lie within the SOC bounds")


def _tree_order(root, edges, path, diags, what):
    """BFS order of a tree given (parent, child) edges; reports cycles/disconnection."""
    children = {}
    seen_child = set()
    for k, (u, w) in enumerate(edges):
        if w in seen_child:
            diags.append(Diagnostic("error", f"{path}[{k}]", f"{what} {w} has two incoming edges (not radial)"))
        seen_child.add(w)
        children.setdefault(u, []).append(w)
    order, stack, visited = [], [root], {root}
    while stack:
        u = stack.pop(0)
        order.append(u)
        for w in children.get(u, []):
            if w in visited:
                diags.append(Diagnostic("error", path, f"cycle through {what} {w}"))
                continue
            visited.add(w)
            stack.append(w)
    return order, visited


def validate_case(case: CommunityCase) -> list:
    """All invariant violations as diagnostics; never raises on a parsed case."""
    diags: list = []
    try:
        _validate(case, diags)
    except Exception as exc:  # validation must stay total
        diags.append(Diagnostic("error", "$", f"validation aborted: {exc!r}"))
    return diags


def _series_ok(diags, series, steps, path):
    _check(diags, len(series) == steps, path, f"series has {len(series)} entries, horizon is {steps}")
    _check(diags, all(np.isfinite(series)), path, "series contains non-finite values")


def _validate(case: CommunityCase, diags: list) -> None:
    T = case.steps
    _check(diags, T >= 1, "$.horizon.steps", "horizon must have at least one step")
    _check(diags, case.step_hours > 0, "$.horizon.step_hours", "step length must be positive")
    _check(diags, case.rt_electric_minutes > 0 and (60 * case.step_hours) % case.rt_electric_minutes == 0,
           "$.horizon.rt_electric_minutes", "real-time step must divide the day-ahead step")
    bus_ids = set(case.power_network.bus_ids)
    node_ids = set(case.heat_network.node_ids())

    _check(diags, len(case.generators) >= 1, "$.generators", "at least one generator is required")
    for i, g in enumerate(case.generators):
        p = f"$.generators[{i}]"
        _check(diags, g.bus in bus_ids, f"{p}.bus", f"unknown bus {g.bus}")
        _check(diags, g.p_min <= g.p_max, f"{p}.p_min", "generator limits must satisfy p_min <= p_max")
        _check(diags, g.ramp_up >= 0 and g.ramp_down >= 0, f"{p}.ramp_up", "ramp limits must be nonnegative")
        _check(diags, g.a >= 0, f"{p}.a", "quadratic cost coefficient must be nonnegative")
        _check(diags, g.participation >= 0, f"{p}.participation", "participation factor must be nonnegative")
        _check(diags, g.adjust_cost >= 0, f"{p}.adjust_cost", "adjustment cost must be nonnegative")
        _check(diags, g.q_min <= g.q_max, f"{p}.q_min", "reactive limits must be ordered")
    if case.generators:
        total = sum(g.participation for g in case.generators)
        _check(diags, abs(total - 1.0) <= 1e-9, "$.generators[*].participation",
               f"participation factors must sum to 1 (sum is {total:.6g})")
    ids = [g.id for g in case.generators]
    _check(diags, len(set(ids)) == len(ids), "$.generators", "duplicate generator ids")

    for i, r in enumerate(case.renewables):
        p = f"$.renewables[{i}]"
        _check(diags, r.bus in bus_ids, f"{p}.bus", f"unknown bus {r.bus}")
        _check(diags, r.kind in ("wind", "solar"), f"{p}.kind", f"kind must be wind or solar, got {r.kind!r}")
        _check(diags, r.capacity > 0, f"{p}.capacity", "capacity must be positive")
        _check(diags, r.penalty >= 0, f"{p}.penalty", "curtailment penalty must be nonnegative")
        _check(diags, len(r.gmm) == T, f"{p}.gmm", f"need one mixture per step ({T}), got {len(r.gmm)}")
        _series_ok(diags, r.forecast, T, f"{p}.forecast")
        for t, m in enumerate(r.gmm):
            outside = float(m.cdf(0.0) + 1.0 - m.cdf(r.capacity))
            _check(diags, outside <= 0.05, f"{p}.gmm[{t}]",
                   f"{outside:.1%} of the mixture lies outside [0, capacity]; clamping dominates", "warning")

    for i, h in enumerate(case.heat_plants):
        p = f"$.heat_plants[{i}]"
        _check(diags, 0 < h.eta_ph <= 1 and 0 < h.eta_gh <= 1, f"{p}.eta_ph", "efficiencies must lie in (0, 1]")
        _check(diags, h.p2h_min <= h.p2h_max, f"{p}.p2h_min", "power-to-heat bounds must be ordered")
        _check(diags, h.gas_min <= h.gas_max, f"{p}.gas_min", "gas bounds must be ordered")
        _check(diags, h.bus in bus_ids, f"{p}.bus", f"unknown bus {h.bus}")
        _check(diags, h.heat_node in node_ids, f"{p}.heat_node", f"unknown heat node {h.heat_node}")
        _series_ok(diags, h.gas_price, T, f"{p}.gas_price")
    _check(diags, len(case.heat_plants) >= 1, "$.heat_plants", "at least one heat plant is required")

    _check_storage(diags, case.storage_electric, "$.storage_electric")
    _check_storage(diags, case.storage_heat, "$.storage_heat")
    if case.storage_electric.bus is not None:
        _check(diags, case.storage_electric.bus in bus_ids, "$.storage_electric.bus", "unknown bus")
    if case.storage_heat.heat_node is not None:
        _check(diags, case.storage_heat.heat_node in node_ids, "$.storage_heat.heat_node", "unknown heat node")

    for i, c in enumerate(case.consumers):
        p = f"$.consumers[{i}]"
        _check(diags, 0 < c.alpha < 1, f"{p}.alpha", f"preference alpha must lie in (0, 1), got {c.alpha}")
        _check(diags, c.budget > 0, f"{p}.budget", "budget must be positive")
        _check(diags, c.bus in bus_ids, f"{p}.bus", f"unknown bus {c.bus}")
        _check(diags, c.heat_node in node_ids, f"{p}.heat_node", f"unknown heat node {c.heat_node}")
        for key in ("base_power", "base_heat", "base_reactive"):
            _series_ok(diags, getattr(c, key), T, f"{p}.{key}")
        _check(diags, min(c.base_power, default=0) >= 0 and min(c.base_heat, default=0) >= 0,
               f"{p}.base_power", "base loads must be nonnegative")

    _validate_power_network(case, diags)
    _validate_heat_network(case, diags)

    tf = case.tariff
    _check(diags, tf.slope >= 0, "$.tariff.slope", "level-of-use slope must be nonnegative")
    _series_ok(diags, tf.base_power, T, "$.tariff.base_power")
    _series_ok(diags, tf.base_heat, T, "$.tariff.base_heat")
    _check(diags, min(tf.base_power + tf.base_heat, default=0) >= 0, "$.tariff", "base prices must be nonnegative")
    for key in ("alpha_up", "alpha_dr", "alpha_line_up", "alpha_line_down"):
        v = getattr(case.risk, key)
        _check(diags, 0 < v < 0.5, f"$.risk.{key}", f"risk level must lie in (0, 0.5), got {v}")
    _check(diags, case.weights.taylor_cuts >= 2, "$.weights.taylor_cuts", "need at least two Taylor cuts")


def _validate_power_network(case, diags):
    pn = case.power_network
    p = "$.power_network"
    bus_ids = set(pn.bus_ids)
    _check(diags, pn.root_bus in bus_ids, f"{p}.root_bus", "root bus not among buses")
    for i, b in enumerate(pn.buses):
        _check(diags, 0 <= b.v_min <= b.v_max, f"{p}.buses[{i}]", "voltage-square bounds must be ordered")
    for i, ln in enumerate(pn.lines):
        q = f"{p}.lines[{i}]"
        _check(diags, ln.from_bus in bus_ids and ln.to_bus in bus_ids, q, "line references an unknown bus")
        _check(diags, ln.r >= 0 and ln.x >= 0, q, "line impedance must be nonnegative")
        _check(diags, ln.p_max > 0 and ln.i_max > 0, q, "line limits must be positive")
    if pn.root_bus in bus_ids:
        _, reached = _tree_order(pn.root_bus, [(ln.from_bus, ln.to_bus) for ln in pn.lines], f"{p}.lines", diags, "bus")
        _check(diags, reached == bus_ids, f"{p}.lines", f"buses {sorted(bus_ids - reached)} unreachable from root")
        _check(diags, len(pn.lines) == len(bus_ids) - 1, f"{p}.lines", "network is not radial")
    gen_ids = {g.id for g in case.generators}
    ren_ids = {r.id for r in case.renewables}
    con_ids = {c.id for c in case.consumers}
    for i, cr in enumerate(pn.corridors):
        q = f"{p}.corridors[{i}]"
        _check(diags, cr.limit >= 0, f"{q}.limit", "corridor limit must be nonnegative")
        for key, known, row in (("generators", gen_ids, cr.ptdf_generators),
                                ("renewables", ren_ids, cr.ptdf_renewables),
                                ("consumers", con_ids, cr.ptdf_consumers)):
            unknown = set(row) - known
            _check(diags, not unknown, f"{q}.ptdf.{key}", f"PTDF row references unknown ids {sorted(unknown)}")
            _check(diags, all(np.isfinite(list(row.values()))), f"{q}.ptdf.{key}", "PTDF entries must be finite")


def heat_tree(hn: HeatNetwork):
    """(source id, BFS order, parent map, pipe index by child, exchanger flow per node)."""
    sources = hn.node_ids("source")
    src = sources[0]
    parent, pipe_of = {}, {}
    for k, q in enumerate(hn.pipes):
        parent[q.to_node] = q.from_node
        pipe_of[q.to_node] = k
    children = {}
    for q in hn.pipes:
        children.setdefault(q.from_node, []).append(q.to_node)
    order, queue = [], [src]
    while queue:
        u = queue.pop(0)
        order.append(u)
        queue.extend(children.get(u, []))
    exchanger = {}
    for n in hn.nodes:
        inflow = hn.pipes[pipe_of[n.id]].mass_flow if n.id in pipe_of else 0.0
        outflow = sum(hn.pipes[pipe_of[w]].mass_flow for w in children.get(n.id, []))
        exchanger[n.id] = inflow - outflow
    return src, order, parent, pipe_of, children, exchanger


def _validate_heat_network(case, diags):
    hn = case.heat_network
    p = "$.heat_network"
    kinds = [n.kind for n in hn.nodes]
    ids = hn.node_ids()
    _check(diags, len(set(ids)) == len(ids), f"{p}.nodes", "duplicate heat node ids (node sets must be disjoint)")
    for i, n in enumerate(hn.nodes):
        _check(diags, n.kind in ("source", "load", "mixing"), f"{p}.nodes[{i}].kind", f"unknown node kind {n.kind!r}")
    _check(diags, kinds.count("source") == 1, f"{p}.nodes", "exactly one source node is supported")
    _check(diags, hn.cp > 0, f"{p}.cp", "specific heat must be positive")
    _check(diags, hn.supply_min <= hn.supply_max and hn.return_min <= hn.return_max, f"{p}.supply_min",
           "temperature bounds must be ordered")
    for i, q in enumerate(hn.pipes):
        r = f"{p}.pipes[{i}]"
        _check(diags, q.from_node in ids and q.to_node in ids, r, "pipe references an unknown node")
        _check(diags, q.mass_flow > 0, f"{r}.mass_flow", "mass flow must be positive on every pipe")
        _check(diags, q.length >= 0 and q.leakage >= 0, r, "pipe length and leakage must be nonnegative")
    if diags and any(d.severity == "error" and d.path.startswith(p) for d in diags):
        return
    src = hn.node_ids("source")[0]
    _, reached = _tree_order(src, [(q.from_node, q.to_node) for q in hn.pipes], f"{p}.pipes", diags, "node")
    _check(diags, reached == set(ids), f"{p}.pipes", f"nodes {sorted(set(ids) - reached)} not connected to the source")
    if reached != set(ids):
        return
    _, _, _, _, _, exchanger = heat_tree(hn)
    for n in hn.nodes:
        flow = exchanger[n.id]
        if n.kind == "load":
            _check(diags, flow > 0, f"{p}.nodes[id={n.id}]", f"load node exchanger flow {flow:.4g} kg/s must be positive")
        elif n.kind == "mixing":
            _check(diags, abs(flow) <= 1e-9, f"{p}.nodes[id={n.id}]", "mass flow is not conserved at mixing node")
    referenced = {c.heat_node for c in case.consumers}
    for n in hn.nodes:
        if n.kind == "load":
            _check(diags, n.id in referenced, f"{p}.nodes[id={n.id}]", "load node has no consumer attached", "warning")


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_case(path) -> CommunityCase:
    """Parse and validate a case file; raises on the first invariant violation."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise CaseParseError(f"case file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise CaseParseError(f"cannot parse {path}: {exc}") from None
    warnings: list = []
    case = case_from_dict(doc, warnings)
    diags = warnings + validate_case(case)
    for d in diags:
        if d.severity == "warning":
            logger.warning("%s: %s", d.path, d.message)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise CaseValidationError(errors[0])
    return case


def bundled_case_path(name: str = "case33_32.json") -> Path:
    return Path(str(resources.files("ihpdispatch") / "data" / name))


def load_bundled(name: str = "case33_32.json") -> CommunityCase:
    return load_case(bundled_case_path(name))
