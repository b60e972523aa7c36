"""Real-time dispatch: 5-minute generator re-dispatch against realized renewables.

Each electric step solves a small LP that moves generators away from their
day-ahead setpoints to absorb the renewable deviation, at a linear adjustment
cost. Load shedding, renewable spill and corridor overflow are allowed at a
large emergency price so every step stays feasible. Storage follows its
day-ahead setpoints; heat plants are re-dispatched once per heat step with the
electric side held fixed.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .case import CommunityCase
from .conic import ConicProgram, lsum, solve
from .dayahead import ScheduleSetpoints, consumer_loads
from .market import fixed_point_equilibrium
from .network import add_heat_network, heat_network_losses

EMERGENCY_PRICE = 1e5  # per MW of shedding, spill or corridor overflow
TOL = 1e-9


@dataclass
class Realization:
    available: np.ndarray  # (renewables, rt steps) MW, clamped to [0, C]
    source: str

    def actual(self, caps_hourly: np.ndarray, per_hour: int) -> np.ndarray:
        caps = np.repeat(caps_hourly, per_hour, axis=1)
        return np.minimum(self.available, caps)


def realize(case: CommunityCase, seed: int | None = 0) -> Realization:
    """One day of availability drawn per day-ahead step and held for its real-time steps."""
    rng = np.random.default_rng(seed)
    per = case.rt_steps_per_hour
    hourly = np.empty((len(case.renewables), case.steps))
    for t in range(case.steps):
        for j, r in enumerate(case.renewables):
            hourly[j, t] = float(np.clip(r.gmm[t].sample(rng, 1)[0], 0.0, r.capacity))
    return Realization(np.repeat(hourly, per, axis=1), f"seed:{seed}")


def realization_from_schedule(case: CommunityCase, setpoints: ScheduleSetpoints) -> Realization:
    """Availability equal to the scheduled renewable output: no deviation anywhere."""
    return Realization(np.repeat(setpoints.sch, case.rt_steps_per_hour, axis=1), "schedule")


def read_trace(case: CommunityCase, path) -> Realization:
    """CSV with a ``step`` column and one MW column per renewable id.

    Either one row per day-ahead step or one per real-time step.
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    per = case.rt_steps_per_hour
    ids = [r.id for r in case.renewables]
    if not rows or any(i not in rows[0] for i in ids):
        raise ValueError(f"{path}: trace needs columns {ids}")
    data = np.array([[float(row[i]) for row in rows] for i in ids])
    caps = np.array([[r.capacity] for r in case.renewables])
    data = np.clip(data, 0.0, caps)
    if data.shape[1] == case.steps:
        data = np.repeat(data, per, axis=1)
    elif data.shape[1] != case.steps * per:
        raise ValueError(f"{path}: expected {case.steps} or {case.steps * per} rows, got {data.shape[1]}")
    return Realization(data, f"trace:{path}")


# ---------------------------------------------------------------------------
# electric step
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepResult:
    p: np.ndarray  # real-time generator output
    shed: float
    spill: float
    overflow: float
    cost: float
    affine_cost: float
    residual: float
    delta: float


class _Network:
    """Corridor data reduced to arrays for fast flow evaluation."""

    def __init__(self, case: CommunityCase, loads_p: np.ndarray):
        gens, rens = case.generators, case.renewables
        self.limits = np.array([c.limit for c in case.power_network.corridors])
        self.F_gen = np.array([[c.ptdf_generators.get(g.id, 0.0) for g in gens]
                               for c in case.power_network.corridors]).reshape(len(self.limits), len(gens))
        self.F_ren = np.array([[c.ptdf_renewables.get(r.id, 0.0) for r in rens]
                               for c in case.power_network.corridors]).reshape(len(self.limits), len(rens))
        F_con = np.array([[c.ptdf_consumers.get(k.id, 0.0) for k in case.consumers]
                          for c in case.power_network.corridors]).reshape(len(self.limits), len(case.consumers))
        self.demand_flow = F_con @ loads_p  # (corridors, T)


def affine_point(p_da, gamma, delta) -> np.ndarray:
    """Participation-factor response to a renewable surplus ``delta``."""
    return np.asarray(p_da, dtype=float) - np.asarray(gamma, dtype=float) * delta


def _adjust_cost(c_pen, dev, signed: bool) -> float:
    return float(c_pen @ dev) if signed else float(c_pen @ np.abs(dev))


def dispatch_step(case: CommunityCase, net: _Network, p_da, t: int, actual, sch_total: float, prev_p=None,
                  signed: bool = False) -> StepResult:
    gens = case.generators
    G = len(gens)
    c_pen = np.array([g.adjust_cost for g in gens])
    gamma = np.array([g.participation for g in gens])
    p_da = np.asarray(p_da, dtype=float)
    actual = np.asarray(actual, dtype=float)
    delta = float(actual.sum() - sch_total)
    base_flow = net.F_ren @ actual + net.demand_flow[:, t]

    prog = ConicProgram("rt")
    lo = np.array([g.p_min for g in gens])
    hi = np.array([g.p_max for g in gens])
    if prev_p is not None:
        ramp_up = np.array([g.ramp_up for g in gens])
        ramp_dn = np.array([g.ramp_down for g in gens])
        lo = np.maximum(lo, prev_p - ramp_dn)
        hi = np.minimum(hi, prev_p + ramp_up)
    p = [prog.var(f"p[{i}]", lo[i], hi[i]) for i in range(G)]
    shed = prog.var("shed", 0.0)
    spill = prog.var("spill", 0.0)
    prog.eq(lsum(p) + shed - spill, float(p_da.sum() - delta), "balance")
    over = []
    for k in range(len(net.limits)):
        up, dn = prog.var(f"over+[{k}]", 0.0), prog.var(f"over-[{k}]", 0.0)
        flow = lsum(net.F_gen[k, i] * p[i] for i in range(G)) + float(base_flow[k])
        prog.le(flow - up, float(net.limits[k]))
        prog.ge(flow + dn, -float(net.limits[k]))
        over += [up, dn]
    if signed:
        prog.minimize(lsum(c_pen[i] * (p[i] - p_da[i]) for i in range(G)))
    else:
        plus = [prog.var(f"d+[{i}]", 0.0) for i in range(G)]
        minus = [prog.var(f"d-[{i}]", 0.0) for i in range(G)]
        for i in range(G):
            prog.eq(p[i] - p_da[i] - plus[i] + minus[i], 0.0)
        prog.minimize(lsum(c_pen[i] * (plus[i] + minus[i]) for i in range(G)))
    prog.minimize(EMERGENCY_PRICE * (shed + spill + lsum(over)))
    res = solve(prog, "highs")
    if not res.optimal:
        raise RuntimeError(f"real-time step {t}: {res.status} {res.message}")
    p_rt = res.values(p)
    s_shed, s_spill = res.value(shed), res.value(spill)
    s_over = float(sum(res.value(o) for o in over))
    cost = _adjust_cost(c_pen, p_rt - p_da, signed) + EMERGENCY_PRICE * (s_shed + s_spill + s_over)
    residual = abs(p_rt.sum() + s_shed - s_spill - (p_da.sum() - delta))

    p_aff = affine_point(p_da, gamma, delta)
    flows = net.F_gen @ p_aff + base_flow
    feasible = (np.all(p_aff >= lo - TOL) and np.all(p_aff <= hi + TOL)
                and np.all(np.abs(flows) <= net.limits + TOL))
    affine_cost = _adjust_cost(c_pen, p_aff - p_da, signed) if feasible else math.inf
    return StepResult(p_rt, s_shed, s_spill, s_over, cost, affine_cost, residual, delta)


# ---------------------------------------------------------------------------
# day
# ---------------------------------------------------------------------------

@dataclass
class RealTimeResult:
    steps: list  # StepResult per real-time step
    actual: np.ndarray  # (renewables, rt steps)
    gen_ids: tuple
    ren_ids: tuple
    minutes: int
    gas: np.ndarray  # (plants, T) re-dispatched
    heat_residual: float
    solves: int
    source: str
    extras: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return float(sum(s.cost for s in self.steps))

    @property
    def max_residual(self) -> float:
        return float(max(s.residual for s in self.steps))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "minute"] + [f"p_{g}_MW" for g in self.gen_ids] + [f"actual_{r}_MW" for r in self.ren_ids]
                   + ["delta_MW", "shed_MW", "spill_MW", "overflow_MW", "cost", "affine_cost", "balance_residual_MW"])
        fmt = lambda v: f"{round(float(v), 9) + 0.0:.9f}" if math.isfinite(v) else "inf"  # noqa: E731
        for s, st in enumerate(self.steps):
            w.writerow([s, s * self.minutes] + [fmt(v) for v in st.p] + [fmt(v) for v in self.actual[:, s]]
                       + [fmt(st.delta), fmt(st.shed), fmt(st.spill), fmt(st.overflow), fmt(st.cost),
                          fmt(st.affine_cost), f"{st.residual:.3e}"])
        return buf.getvalue()

    def summary(self) -> dict:
        finite = [s.affine_cost for s in self.steps if math.isfinite(s.affine_cost)]
        return {
            "realization": self.source,
            "steps": len(self.steps),
            "step_minutes": self.minutes,
            "adjustment_cost": self.total_cost,
            "affine_cost_finite_steps": float(sum(finite)),
            "affine_infeasible_steps": len(self.steps) - len(finite),
            "shed_MWh": float(sum(s.shed for s in self.steps) * self.minutes / 60),
            "spill_MWh": float(sum(s.spill for s in self.steps) * self.minutes / 60),
            "overflow_MW_steps": float(sum(s.overflow for s in self.steps)),
            "max_balance_residual_MW": self.max_residual,
            "heat_balance_residual_MW": self.heat_residual,
            "lp_solves": self.solves,
            "gas_MWh": float(self.gas.sum()),
        }


def redispatch_heat(case: CommunityCase, setpoints: ScheduleSetpoints, loads_h: np.ndarray):
    """Hourly gas re-dispatch with P2H and heat storage fixed; returns (gas, max balance residual)."""
    T = case.steps
    plants = case.heat_plants
    gas = np.zeros((len(plants), T))
    worst = 0.0
    hn = case.heat_network
    for t in range(T):
        prog = ConicProgram(f"heat[{t}]")
        node_load = {}
        for n, c in enumerate(case.consumers):
            node_load[c.heat_node] = node_load.get(c.heat_node, 0.0) + loads_h[n, t]
        hv = add_heat_network(prog, hn, str(t), node_load)
        g = [prog.var(f"gas[{k}]", h.gas_min, h.gas_max) for k, h in enumerate(plants)]
        fixed = sum(h.eta_ph * setpoints.p2h[k, t] for k, h in enumerate(plants))
        fixed += setpoints.shs_discharge[t] - setpoints.shs_charge[t]
        prog.eq(lsum(h.eta_gh * g[k] for k, h in enumerate(plants)) + float(fixed) - hv.source_heat, 0.0)
        prog.minimize(lsum(h.gas_price[t] * g[k] for k, h in enumerate(plants)))
        res = solve(prog, "highs")
        if not res.optimal:
            raise RuntimeError(f"heat re-dispatch at step {t}: {res.status}")
        gas[:, t] = res.values(g)
        supply = {n: res.value(e) for n, e in hv.supply.items()}
        ret = {n: res.value(e) for n, e in hv.ret.items()}
        produced = fixed + sum(h.eta_gh * gas[k, t] for k, h in enumerate(plants))
        worst = max(worst, abs(produced - loads_h[:, t].sum() - heat_network_losses(hn, supply, ret)))
    return gas, worst


def run_real_time(case: CommunityCase, setpoints: ScheduleSetpoints, realization: Realization,
                  signed: bool = False, loads=None) -> RealTimeResult:
    if setpoints.steps != case.steps:
        raise ValueError(f"schedule has {setpoints.steps} steps, case has {case.steps}")
    if loads is None:
        eq = fixed_point_equilibrium(case)
        loads = consumer_loads(case, eq.demands)
    loads_p, loads_h = loads
    per = case.rt_steps_per_hour
    net = _Network(case, loads_p)
    actual = realization.actual(setpoints.caps, per)
    cache = {}
    steps = []
    prev = None
    solves = 0
    for s in range(case.steps * per):
        t = s // per
        key = (t, actual[:, s].tobytes(), None if prev is None else prev.tobytes())
        hit = cache.get(key)
        if hit is None:
            hit = dispatch_step(case, net, setpoints.p[:, t], t, actual[:, s], float(setpoints.sch[:, t].sum()),
                                prev, signed)
            cache[key] = hit
            solves += 1
        steps.append(hit)
        prev = hit.p
    gas, heat_res = redispatch_heat(case, setpoints, loads_h)
    return RealTimeResult(steps, actual, setpoints.gen_ids, setpoints.ren_ids, case.rt_electric_minutes,
                          gas, heat_res, solves, realization.source)


def reserve_violation_rates(case: CommunityCase, setpoints: ScheduleSetpoints, seeds) -> tuple:
    """Shares of (day, step, generator) triples where the affine response exceeds p_max / falls below p_min."""
    gamma = np.array([g.participation for g in case.generators])
    lo = np.array([g.p_min for g in case.generators])
    hi = np.array([g.p_max for g in case.generators])
    up = down = total = 0
    for seed in seeds:
        real = realize(case, seed)
        actual = real.actual(setpoints.caps, case.rt_steps_per_hour)[:, ::case.rt_steps_per_hour]
        delta = actual.sum(0) - setpoints.sch.sum(0)
        p_aff = setpoints.p - gamma[:, None] * delta[None, :]
        up += int(np.sum(p_aff > hi[:, None] + TOL))
        down += int(np.sum(p_aff < lo[:, None] - TOL))
        total += p_aff.size
    return up / total, down / total
