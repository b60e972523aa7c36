"""Day-ahead scheduling: slack relaxation, curtailment caps, deterministic schedule.

Stages run in order: price/demand equilibrium -> slack relaxation (which
chance constraints cannot hold without curtailment) -> curtailment caps by
subset enumeration over Taylor-cut epigraph LPs -> final schedule with the
chance constraints turned into deterministic rows at the chosen caps.

Every chance constraint is stored in one shape: Q(X | level) <= b(x), where X
is a linear combination of renewable outputs and b is affine in generator
setpoints and total scheduled renewables.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .case import CommunityCase, heat_tree
from .conic import ConicProgram, Expr, lsum, solve
from .market import DemandProfile, EquilibriumOutcome, fixed_point_equilibrium
from .network import add_distflow, add_heat_network, cone_gap, heat_network_losses, soc_trajectory
from .uncertainty import (
    CensoredGmm,
    LinearCombo,
    curtailment_penalty,
    penalty_derivatives,
    quantile,
    quantile_upper_bound,
)

logger = logging.getLogger(__name__)

ZERO_SLACK = 1e-6  # slacks below this count as zero
LOSS_WEIGHT_FACTOR = 10.0  # relaxation loss weight, as a multiple of the largest slack weight


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# ---------------------------------------------------------------------------
# chance constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChanceRow:
    kind: str  # reserve_up | reserve_down | line_up | line_down
    element: str  # generator or corridor id
    t: int
    risk: float
    coeffs: tuple  # coefficient of each renewable in X (case order)
    b_const: float
    b_gen: tuple  # coefficient of each generator setpoint in b(x)
    b_sch: float  # coefficient of total scheduled renewables in b(x)
    slack: str | None  # which relaxation slack may loosen it

    @property
    def level(self) -> float:
        return 1.0 - self.risk

    @property
    def key(self) -> tuple:
        return (self.kind, self.element, self.t)

    def combo(self, case: CommunityCase, caps=None) -> LinearCombo | None:
        """X as a combination of (possibly capped) renewable outputs; None without renewables."""
        if not case.renewables:
            return None
        terms = []
        for j, (c, ren) in enumerate(zip(self.coeffs, case.renewables)):
            dist = ren.gmm[self.t]
            if caps is not None and caps[j] < ren.capacity:
                dist = CensoredGmm(dist, float(caps[j]), support_max=ren.capacity)
            terms.append((c, dist))
        return LinearCombo(tuple(terms))

    def rhs(self, p, sch_total) -> float:
        return self.b_const + float(np.dot(self.b_gen, p)) + self.b_sch * sch_total


@dataclass
class ChanceSpec:
    rows: list

    def at(self, t: int) -> list:
        return [r for r in self.rows if r.t == t]

    def __len__(self):
        return len(self.rows)


def consumer_loads(case: CommunityCase, demands: DemandProfile) -> tuple:
    """(power, heat) per consumer and step: fixed base plus elastic equilibrium demand."""
    base_p = np.array([c.base_power for c in case.consumers], dtype=float)
    base_h = np.array([c.base_heat for c in case.consumers], dtype=float)
    return base_p + demands.power, base_h + demands.heat


def build_chance_spec(case: CommunityCase, loads_p: np.ndarray, drop_participation: bool = False) -> ChanceSpec:
    """Reserve rows per generator and flow rows per monitored corridor, every step.

    ``drop_participation`` builds the corridor coefficients without the
    participation factors (F_j - sum F_i) instead of (F_j - sum F_i gamma_i).
    """
    gens, rens = case.generators, case.renewables
    G = len(gens)
    risk = case.risk
    rows = []
    for g in gens:
        if g.participation <= 0:
            raise ValueError(f"generator {g.id} has zero participation factor; reserve rows divide by it")
    for t in range(case.steps):
        for i, g in enumerate(gens):
            unit = np.zeros(G)
            unit[i] = 1.0 / g.participation
            rows.append(ChanceRow("reserve_up", g.id, t, risk.alpha_up, tuple(-1.0 for _ in rens),
                                  g.p_max / g.participation, tuple(-unit), -1.0, None))
            rows.append(ChanceRow("reserve_down", g.id, t, risk.alpha_dr, tuple(1.0 for _ in rens),
                                  -g.p_min / g.participation, tuple(unit), 1.0, "drs"))
        for cr in case.power_network.corridors:
            F = np.array([cr.ptdf_generators.get(g.id, 0.0) for g in gens])
            gamma = np.array([g.participation for g in gens])
            shared = float(F @ gamma)
            shift = float(F.sum()) if drop_participation else shared
            coeffs = tuple(cr.ptdf_renewables.get(r.id, 0.0) - shift for r in rens)
            demand_flow = sum(cr.ptdf_consumers.get(c.id, 0.0) * loads_p[n, t] for n, c in enumerate(case.consumers))
            rows.append(ChanceRow("line_up", cr.id, t, risk.alpha_line_up, coeffs,
                                  cr.limit - demand_flow, tuple(-F), -shared, "ts+"))
            rows.append(ChanceRow("line_down", cr.id, t, risk.alpha_line_down, tuple(-c for c in coeffs),
                                  cr.limit + demand_flow, tuple(F), shared, "ts-"))
    return ChanceSpec(rows)


# ---------------------------------------------------------------------------
# physical model
# ---------------------------------------------------------------------------

@dataclass
class ModelVars:
    p: list  # [g][t]
    q: list
    sch: list  # [j][t]
    p2h: list  # [h][t]
    gas: list
    ses_c: list
    ses_d: list
    ses_e: list  # length T + 1
    shs_c: list
    shs_d: list
    shs_e: list
    flows: list  # PowerFlowVars per step
    heat: list  # HeatVars per step


def _storage(prog, s, tag, T, dt):
    cap = s.capacity_mwh
    c = [prog.var(f"{tag}_c[{t}]", 0.0, s.max_charge) for t in range(T)]
    d = [prog.var(f"{tag}_d[{t}]", 0.0, s.max_discharge) for t in range(T)]
    e0 = prog.var(f"{tag}_e[0]", s.initial_mwh, s.initial_mwh)
    e = [e0] + [prog.var(f"{tag}_e[{t + 1}]", s.soc_min * cap, s.soc_max * cap) for t in range(T)]
    for t in range(T):
        prog.eq(e[t + 1] - e[t] - s.eta_c * dt * c[t] + (dt / s.eta_d) * d[t], 0.0, f"{tag}_soc[{t}]")
    prog.eq(e[T] - e[0], 0.0, f"{tag}_cyclic")
    return c, d, e


def build_physical(prog: ConicProgram, case: CommunityCase, loads_p, loads_h, caps=None) -> ModelVars:
    """Components, storage, DistFlow and heat network for the whole horizon."""
    T, dt = case.steps, case.step_hours
    gens, rens, plants = case.generators, case.renewables, case.heat_plants
    net, hn = case.power_network, case.heat_network
    src = heat_tree(hn)[0]
    for h in plants:
        if h.heat_node != src:
            raise ValueError(f"heat plant {h.id} must sit at the source node {src}")
    p = [[prog.var(f"p[{g.id},{t}]", g.p_min, g.p_max) for t in range(T)] for g in gens]
    q = [[prog.var(f"q[{g.id},{t}]", g.q_min, g.q_max) for t in range(T)] for g in gens]
    sch = []
    for j, r in enumerate(rens):
        row = []
        for t in range(T):
            ub = r.forecast[t] if caps is None else min(r.forecast[t], caps[j][t])
            row.append(prog.var(f"sch[{r.id},{t}]", 0.0, max(ub, 0.0)))
        sch.append(row)
    for i, g in enumerate(gens):
        for t in range(1, T):
            prog.le(p[i][t] - p[i][t - 1], g.ramp_up, f"ramp_up[{g.id},{t}]")
            prog.le(p[i][t - 1] - p[i][t], g.ramp_down, f"ramp_dn[{g.id},{t}]")
    p2h = [[prog.var(f"p2h[{h.id},{t}]", h.p2h_min, h.p2h_max) for t in range(T)] for h in plants]
    gas = [[prog.var(f"gas[{h.id},{t}]", h.gas_min, h.gas_max) for t in range(T)] for h in plants]
    ses_c, ses_d, ses_e = _storage(prog, case.storage_electric, "ses", T, dt)
    shs_c, shs_d, shs_e = _storage(prog, case.storage_heat, "shs", T, dt)
    ses_bus = case.storage_electric.bus if case.storage_electric.bus is not None else net.root_bus
    if case.storage_heat.heat_node not in (None, src):
        raise ValueError("heat storage must sit at the source node")

    flows, heat = [], []
    base = net.base_mva
    for t in range(T):
        pin, qin = {}, {}

        def add(d, bus, e):
            d[bus] = d[bus] + e if bus in d else Expr.lift(e)

        for i, g in enumerate(gens):
            add(pin, g.bus, p[i][t] / base)
            add(qin, g.bus, q[i][t] / base)
        for j, r in enumerate(rens):
            add(pin, r.bus, sch[j][t] / base)
        for k, h in enumerate(plants):
            add(pin, h.bus, -p2h[k][t] / base)
        add(pin, ses_bus, (ses_d[t] - ses_c[t]) / base)
        for n, c in enumerate(case.consumers):
            add(pin, c.bus, Expr(None, -loads_p[n, t] / base))
            add(qin, c.bus, Expr(None, -c.base_reactive[t] / base))
        flows.append(add_distflow(prog, net, str(t), pin, qin))

        node_load = {}
        for n, c in enumerate(case.consumers):
            node_load[c.heat_node] = node_load.get(c.heat_node, 0.0) + loads_h[n, t]
        hv = add_heat_network(prog, hn, str(t), node_load)
        produced = lsum(h.eta_ph * p2h[k][t] + h.eta_gh * gas[k][t] for k, h in enumerate(plants))
        prog.eq(produced + shs_d[t] - shs_c[t] - hv.source_heat, 0.0, f"heat_bal[{t}]")
        heat.append(hv)
    return ModelVars(p, q, sch, p2h, gas, ses_c, ses_d, ses_e, shs_c, shs_d, shs_e, flows, heat)


def _row_rhs(row: ChanceRow, V: ModelVars) -> Expr:
    t = row.t
    e = Expr(None, row.b_const)
    for i, c in enumerate(row.b_gen):
        if c:
            e += c * V.p[i][t]
    if row.b_sch:
        e += row.b_sch * lsum(V.sch[j][t] for j in range(len(V.sch)))
    return e


def _losses(case, V: ModelVars) -> Expr:
    return lsum(fv.losses(case.power_network) for fv in V.flows)


# ---------------------------------------------------------------------------
# relaxation
# ---------------------------------------------------------------------------

@dataclass
class SlackReport:
    drs: np.ndarray  # (T,)
    ts_up: np.ndarray  # (corridors, T)
    ts_down: np.ndarray
    objective: float
    quantiles: dict  # row key -> quantile over available output
    margins: dict  # row key -> b(x) at the relaxation optimum
    corridor_ids: tuple = ()

    @property
    def total(self) -> float:
        return float(self.drs.sum() + self.ts_up.sum() + self.ts_down.sum())

    @property
    def any_nonzero(self) -> bool:
        return max(self.drs.max(initial=0), self.ts_up.max(initial=0), self.ts_down.max(initial=0)) > ZERO_SLACK

    def slack_for(self, row: ChanceRow) -> float:
        if row.slack == "drs":
            return float(self.drs[row.t])
        if row.slack is None:
            return 0.0
        L = self.corridor_ids.index(row.element)
        return float((self.ts_up if row.slack == "ts+" else self.ts_down)[L, row.t])


def available_quantiles(case: CommunityCase, spec: ChanceSpec) -> dict:
    out = {}
    for row in spec.rows:
        combo = row.combo(case)
        out[row.key] = 0.0 if combo is None else quantile(combo, row.level)
    return out


def solve_p3_relaxation(case: CommunityCase, demands: DemandProfile, spec: ChanceSpec | None = None,
                        backend: str = "clarabel") -> SlackReport:
    """Minimum weighted slack needed for the chance rows at full renewable output."""
    loads_p, loads_h = consumer_loads(case, demands)
    spec = spec or build_chance_spec(case, loads_p)
    T = case.steps
    corridors = case.power_network.corridors
    prog = ConicProgram("relaxation")
    V = build_physical(prog, case, loads_p, loads_h)
    drs = [prog.var(f"drs[{t}]", 0.0) for t in range(T)]
    tsu = [[prog.var(f"ts+[{c.id},{t}]", 0.0) for t in range(T)] for c in corridors]
    tsd = [[prog.var(f"ts-[{c.id},{t}]", 0.0) for t in range(T)] for c in corridors]
    cidx = {c.id: k for k, c in enumerate(corridors)}
    quants = available_quantiles(case, spec)
    for row in spec.rows:
        rhs = _row_rhs(row, V)
        if row.slack == "drs":
            rhs = rhs + drs[row.t]
        elif row.slack == "ts+":
            rhs = rhs + tsu[cidx[row.element]][row.t]
        elif row.slack == "ts-":
            rhs = rhs + tsd[cidx[row.element]][row.t]
        prog.ge(rhs, quants[row.key], f"cc[{row.kind},{row.element},{row.t}]")
    w = case.weights
    prog.minimize(w.slack_reserve * lsum(drs))
    prog.minimize(w.slack_line * (lsum(itertools.chain(*tsu)) + lsum(itertools.chain(*tsd))))
    # keeps the cone relaxation from absorbing surplus as fictitious losses
    prog.minimize(LOSS_WEIGHT_FACTOR * max(w.slack_reserve, w.slack_line) * _losses(case, V))
    res = solve(prog, backend)
    if not res.optimal:
        raise PipelineError("relaxation", f"solver returned {res.status}: {res.message}")
    p = np.array([[res.value(e) for e in row] for row in V.p])
    sch_tot = np.array([sum(res.value(V.sch[j][t]) for j in range(len(V.sch))) for t in range(T)])
    margins = {row.key: row.rhs(p[:, row.t], sch_tot[row.t]) for row in spec.rows}
    clip = lambda a: np.where(a > ZERO_SLACK, a, 0.0)  # noqa: E731
    return SlackReport(
        drs=clip(res.values(drs)),
        ts_up=clip(np.array([res.values(r) for r in tsu]).reshape(len(corridors), T)),
        ts_down=clip(np.array([res.values(r) for r in tsd]).reshape(len(corridors), T)),
        objective=res.objective, quantiles=quants, margins=margins,
        corridor_ids=tuple(c.id for c in corridors))


# ---------------------------------------------------------------------------
# curtailment
# ---------------------------------------------------------------------------

@dataclass
class CurtailmentPlan:
    caps: np.ndarray  # (renewables, T)
    subsets: list  # chosen subset of renewable ids per step
    epigraph: np.ndarray  # cut-model penalty at the caps
    penalty: np.ndarray  # exact penalty at the caps
    cut_gap: np.ndarray  # a-priori bound on penalty - epigraph

    @property
    def total_penalty(self) -> float:
        return float(self.penalty.sum())

    @property
    def curtailed(self) -> bool:
        return bool(np.any(self.penalty > 0))


def no_curtailment(case: CommunityCase) -> CurtailmentPlan:
    R, T = len(case.renewables), case.steps
    caps = np.array([[r.capacity] * T for r in case.renewables]).reshape(R, T)
    z = np.zeros((R, T))
    return CurtailmentPlan(caps, [()] * T, z, z.copy(), z.copy())


def _cut_gap_bound(ren, t, M) -> float:
    xs = np.linspace(0.0, ren.capacity, 401)
    peak = float(np.max(ren.gmm[t].pdf(xs)))
    return ren.penalty * ren.capacity * (ren.capacity / M) * peak


def _reduced_quantile(row: ChanceRow, case, subset) -> float:
    """Quantile of X with Pi-members (positive coefficient) removed, others at availability."""
    terms = [(c, r.gmm[row.t]) for j, (c, r) in enumerate(zip(row.coeffs, case.renewables))
             if c != 0 and not (j in subset and c > 0)]
    if not terms:
        return 0.0
    return quantile(LinearCombo(tuple(terms)), row.level)


def _step_plan(case, rows, targets, t, subset, M):
    """Epigraph LP for one step and subset; None when infeasible."""
    rens = case.renewables
    prog = ConicProgram(f"curtail[{t}]")
    caps = [prog.var(f"cap[{r.id}]", 0.0, r.capacity) for r in rens]
    epi = [prog.var(f"l[{r.id}]", 0.0) for r in rens]
    for j, r in enumerate(rens):
        for rk in np.linspace(0.0, r.capacity, M):
            w = curtailment_penalty(r, t, float(rk))
            d1, _ = penalty_derivatives(r, t, float(rk))
            prog.le(w + d1 * (caps[j] - float(rk)), epi[j])
    for row in rows:
        lhs = Expr(None, _reduced_quantile(row, case, subset))
        for j, c in enumerate(row.coeffs):
            if c > 0 and j in subset:
                lhs += c * caps[j]
            elif c < 0:
                # c*min(r, cap) <= c*r + |c|*(C - cap) for r <= C
                lhs += -c * (rens[j].capacity - caps[j])
        prog.le(lhs, targets[row.key], f"row[{row.kind},{row.element}]")
    prog.minimize(lsum(epi))
    res = solve(prog, "highs")
    if not res.optimal:
        return None
    return res.objective, res.values(caps), res.values(epi)


def schedule_curtailment(case: CommunityCase, slack: SlackReport, spec: ChanceSpec) -> CurtailmentPlan:
    """Cheapest caps that make every row hold at the relaxation's margins.

    A row's target is its margin b(x) at the relaxation optimum (its available
    quantile minus the slack where one was needed), so the relaxation point
    stays feasible once the caps are applied.
    """
    plan = no_curtailment(case)
    if not slack.any_nonzero:
        return plan
    M = case.weights.taylor_cuts
    rens = case.renewables
    R = len(rens)
    for t in range(case.steps):
        rows = spec.at(t)
        if not any(slack.slack_for(r) > ZERO_SLACK for r in rows):
            continue
        best = None
        for size in range(R + 1):
            for subset in itertools.combinations(range(R), size):
                out = _step_plan(case, rows, slack.margins, t, set(subset), M)
                if out is not None and (best is None or out[0] < best[0] - 1e-12):
                    best = (out[0], subset, out[1], out[2])
        if best is None:
            worst = max(rows, key=lambda r: slack.slack_for(r))
            raise PipelineError("curtailment", f"no curtailment subset repairs {worst.kind} "
                                f"on {worst.element} at step {t}")
        _, subset, caps, epi = best
        plan.caps[:, t] = np.clip(caps, 0.0, [r.capacity for r in rens])
        plan.subsets[t] = tuple(rens[j].id for j in subset)
        plan.epigraph[:, t] = epi
        for j, r in enumerate(rens):
            plan.penalty[j, t] = curtailment_penalty(r, t, float(plan.caps[j, t]))
            plan.cut_gap[j, t] = _cut_gap_bound(r, t, M)
    return plan


# ---------------------------------------------------------------------------
# final schedule
# ---------------------------------------------------------------------------

@dataclass
class DaySchedule:
    gen_ids: tuple
    ren_ids: tuple
    p: np.ndarray  # (G, T) MW
    q: np.ndarray
    sch: np.ndarray  # (R, T)
    caps: np.ndarray
    p2h: np.ndarray  # (H, T)
    gas: np.ndarray
    ses_charge: np.ndarray
    ses_discharge: np.ndarray
    ses_energy: np.ndarray  # (T + 1,) MWh
    shs_charge: np.ndarray
    shs_discharge: np.ndarray
    shs_energy: np.ndarray
    price_p: np.ndarray  # (N, T)
    price_h: np.ndarray
    load_p: np.ndarray  # (N, T) total consumer power incl. base
    load_h: np.ndarray
    supply_temp: np.ndarray  # (nodes, T)
    return_temp: np.ndarray
    voltage: np.ndarray  # (buses, T) squared magnitude
    line_P: np.ndarray  # (lines, T)
    line_Q: np.ndarray
    line_l: np.ndarray
    costs: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.p.shape[1]

    @property
    def objective(self) -> float:
        return self.costs.get("total", math.nan)

    # CSV ------------------------------------------------------------------
    def csv_columns(self) -> list:
        cols = ["step"]
        cols += [f"p_{g}_MW" for g in self.gen_ids]
        cols += [f"q_{g}_MVAr" for g in self.gen_ids]
        cols += [f"sch_{r}_MW" for r in self.ren_ids]
        cols += [f"cap_{r}_MW" for r in self.ren_ids]
        cols += [f"p2h_{k}_MW" for k in range(self.p2h.shape[0])]
        cols += [f"gas_{k}_MW" for k in range(self.gas.shape[0])]
        cols += ["ses_charge_MW", "ses_discharge_MW", "ses_energy_MWh",
                 "shs_charge_MW", "shs_discharge_MW", "shs_energy_MWh",
                 "price_power_mean_per_MWh", "price_heat_mean_per_MWh",
                 "demand_power_total_MW", "demand_heat_total_MW",
                 "supply_temp_source_C", "supply_temp_min_C", "return_temp_source_C"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_columns())
        fmt = lambda v: f"{round(float(v), 9) + 0.0:.9f}"  # noqa: E731
        for t in range(self.steps):
            row = [t]
            row += [fmt(v) for v in self.p[:, t]]
            row += [fmt(v) for v in self.q[:, t]]
            row += [fmt(v) for v in self.sch[:, t]]
            row += [fmt(v) for v in self.caps[:, t]]
            row += [fmt(v) for v in self.p2h[:, t]]
            row += [fmt(v) for v in self.gas[:, t]]
            row += [fmt(self.ses_charge[t]), fmt(self.ses_discharge[t]), fmt(self.ses_energy[t + 1]),
                    fmt(self.shs_charge[t]), fmt(self.shs_discharge[t]), fmt(self.shs_energy[t + 1]),
                    fmt(self.price_p[:, t].mean()), fmt(self.price_h[:, t].mean()),
                    fmt(self.load_p[:, t].sum()), fmt(self.load_h[:, t].sum()),
                    fmt(self.supply_temp[0, t]), fmt(self.supply_temp[:, t].min()), fmt(self.return_temp[0, t])]
            w.writerow(row)
        return buf.getvalue()


@dataclass
class ScheduleSetpoints:
    """The parts of a schedule that real-time dispatch needs, as read back from CSV."""
    gen_ids: tuple
    ren_ids: tuple
    p: np.ndarray
    sch: np.ndarray
    caps: np.ndarray
    p2h: np.ndarray
    gas: np.ndarray
    ses_charge: np.ndarray
    ses_discharge: np.ndarray
    shs_charge: np.ndarray
    shs_discharge: np.ndarray

    @property
    def steps(self) -> int:
        return self.p.shape[1]

    @classmethod
    def from_schedule(cls, s: DaySchedule) -> "ScheduleSetpoints":
        return cls(s.gen_ids, s.ren_ids, s.p, s.sch, s.caps, s.p2h, s.gas, s.ses_charge, s.ses_discharge,
                   s.shs_charge, s.shs_discharge)

    @classmethod
    def from_csv(cls, path) -> "ScheduleSetpoints":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty schedule")
        cols = rows[0].keys()

        def ids(prefix, suffix):
            return tuple(c[len(prefix):-len(suffix)] for c in cols if c.startswith(prefix) and c.endswith(suffix))

        def grab(names):
            return np.array([[float(r[n]) for r in rows] for n in names])

        gen_ids = ids("p_", "_MW")
        gen_ids = tuple(g for g in gen_ids if not g.startswith("2h"))
        ren_ids = ids("sch_", "_MW")
        n_plants = len([c for c in cols if c.startswith("p2h_")])
        one = lambda n: np.array([float(r[n]) for r in rows])  # noqa: E731
        return cls(gen_ids, ren_ids, grab([f"p_{g}_MW" for g in gen_ids]), grab([f"sch_{r}_MW" for r in ren_ids]),
                   grab([f"cap_{r}_MW" for r in ren_ids]), grab([f"p2h_{k}_MW" for k in range(n_plants)]),
                   grab([f"gas_{k}_MW" for k in range(n_plants)]), one("ses_charge_MW"), one("ses_discharge_MW"),
                   one("shs_charge_MW"), one("shs_discharge_MW"))


def solve_p5_schedule(case: CommunityCase, demands: DemandProfile, plan: CurtailmentPlan,
                      spec: ChanceSpec | None = None, equilibrium: EquilibriumOutcome | None = None,
                      backend: str = "clarabel") -> DaySchedule:
    """Least-cost schedule with chance rows tightened to their bounds at the plan's caps."""
    loads_p, loads_h = consumer_loads(case, demands)
    spec = spec or build_chance_spec(case, loads_p)
    T = case.steps
    prog = ConicProgram("schedule")
    V = build_physical(prog, case, loads_p, loads_h, caps=plan.caps)
    bounds = {}
    for row in spec.rows:
        combo = row.combo(case, plan.caps[:, row.t])
        bounds[row.key] = 0.0 if combo is None else quantile_upper_bound(combo, row.level)
        prog.ge(_row_rhs(row, V), bounds[row.key], f"cc[{row.kind},{row.element},{row.t}]")
    gen_cost = Expr()
    for i, g in enumerate(case.generators):
        for t in range(T):
            gen_cost += g.b * V.p[i][t] + g.c
            prog.add_square(V.p[i][t], g.a, f"sq[{g.id},{t}]")
    gas_cost = lsum(h.gas_price[t] * case.step_hours * V.gas[k][t]
                    for k, h in enumerate(case.heat_plants) for t in range(T))
    prog.minimize(gen_cost + gas_cost)
    res = solve(prog, backend)
    if not res.optimal:
        raise PipelineError("schedule", f"final schedule {res.status} although the curtailment plan "
                            f"was feasible: {res.message}")
    return _extract_schedule(case, V, res, plan, loads_p, loads_h, equilibrium, bounds, gen_cost, gas_cost)


def _extract_schedule(case, V, res, plan, loads_p, loads_h, equilibrium, bounds, gen_cost, gas_cost):
    T = case.steps
    net, hn = case.power_network, case.heat_network
    val = lambda rows: np.array([[res.value(e) for e in r] for r in rows])  # noqa: E731
    p, q, sch = val(V.p), val(V.q), val(V.sch)
    p2h, gas = val(V.p2h), val(V.gas)
    ses_c, ses_d = res.values(V.ses_c), res.values(V.ses_d)
    shs_c, shs_d = res.values(V.shs_c), res.values(V.shs_d)
    keys = [(ln.from_bus, ln.to_bus) for ln in net.lines]
    grab = lambda d: np.array([[res.value(getattr(V.flows[t], d)[k]) for t in range(T)]  # noqa: E731
                                for k in keys]).reshape(len(keys), T)
    line_P, line_Q, line_l = grab("P"), grab("Q"), grab("l")
    voltage = np.array([[res.value(V.flows[t].v[b.id]) for t in range(T)] for b in net.buses])
    node_ids = [n for n in heat_tree(hn)[1]]
    supply = np.array([[res.value(V.heat[t].supply[n]) for t in range(T)] for n in node_ids])
    ret = np.array([[res.value(V.heat[t].ret[n]) for t in range(T)] for n in node_ids])

    # post-hoc residuals, recomputed from the extracted values
    vfrom = {b.id: k for k, b in enumerate(net.buses)}
    gap = cone_gap(line_P, line_Q, line_l, voltage[[vfrom[k[0]] for k in keys]].reshape(len(keys), T))
    losses = np.array([sum(ln.r * line_l[k, t] for k, ln in enumerate(net.lines)) for t in range(T)])
    power_res = np.abs(p.sum(0) + sch.sum(0) + ses_d - ses_c - p2h.sum(0) - loads_p.sum(0) - losses * net.base_mva)
    heat_loss = np.array([heat_network_losses(hn, dict(zip(node_ids, supply[:, t])), dict(zip(node_ids, ret[:, t])))
                          for t in range(T)])
    produced = sum(h.eta_ph * p2h[k] + h.eta_gh * gas[k] for k, h in enumerate(case.heat_plants))
    heat_res = np.abs(produced + shs_d - shs_c - loads_h.sum(0) - heat_loss)
    s_e, s_h = case.storage_electric, case.storage_heat
    ses_e = soc_trajectory(s_e.initial_mwh, ses_c, ses_d, s_e.eta_c, s_e.eta_d, case.step_hours)
    shs_e = soc_trajectory(s_h.initial_mwh, shs_c, shs_d, s_h.eta_c, s_h.eta_d, case.step_hours)

    generation = res.value(gen_cost) + sum(g.a * float(np.sum(p[i] ** 2)) for i, g in enumerate(case.generators))
    gas_total = res.value(gas_cost)
    costs = {"generation": generation, "gas": gas_total, "curtailment_penalty": plan.total_penalty}
    costs["operating"] = generation + gas_total
    costs["total"] = costs["operating"] + plan.total_penalty
    N = len(case.consumers)
    if equilibrium is not None:
        price_p, price_h = equilibrium.prices.power, equilibrium.prices.heat
    else:
        price_p = price_h = np.full((N, T), math.nan)
    diag = {
        "cone_gap_max": float(gap.max(initial=0.0)),
        "power_balance_residual": float(power_res.max(initial=0.0)),
        "heat_balance_residual": float(heat_res.max(initial=0.0)),
        "network_heat_loss_MWh": float(heat_loss.sum() * case.step_hours),
        "line_losses_MWh": float(losses.sum() * case.step_hours * net.base_mva),
        "storage_cycle_error": max(abs(ses_e[-1] - ses_e[0]), abs(shs_e[-1] - shs_e[0])),
        "kkt": res.kkt.as_dict(),
        "chance_bounds": {f"{k[0]}:{k[1]}:{k[2]}": v for k, v in bounds.items()},
    }
    return DaySchedule(
        gen_ids=tuple(g.id for g in case.generators), ren_ids=tuple(r.id for r in case.renewables),
        p=p, q=q, sch=sch, caps=plan.caps.copy(), p2h=p2h, gas=gas,
        ses_charge=ses_c, ses_discharge=ses_d, ses_energy=ses_e,
        shs_charge=shs_c, shs_discharge=shs_d, shs_energy=shs_e,
        price_p=np.asarray(price_p), price_h=np.asarray(price_h), load_p=loads_p, load_h=loads_h,
        supply_temp=supply, return_temp=ret, voltage=voltage, line_P=line_P, line_Q=line_Q, line_l=line_l,
        costs=costs, diagnostics=diag)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class DayAheadResult:
    equilibrium: EquilibriumOutcome
    slack: SlackReport
    plan: CurtailmentPlan
    schedule: DaySchedule
    spec: ChanceSpec
    skipped_curtailment: bool


def run_day_ahead(case: CommunityCase, curtailment: bool = True, drop_participation: bool = False,
                  backend: str = "clarabel") -> DayAheadResult:
    try:
        eq = fixed_point_equilibrium(case)
    except ValueError as exc:
        raise PipelineError("equilibrium", str(exc)) from None
    if not eq.converged:
        raise PipelineError("equilibrium", f"no convergence after {eq.iterations} iterations")
    loads_p, _ = consumer_loads(case, eq.demands)
    spec = build_chance_spec(case, loads_p)
    slack = solve_p3_relaxation(case, eq.demands, spec, backend)
    skipped = not slack.any_nonzero
    if skipped:
        plan = no_curtailment(case)
    elif not curtailment:
        raise PipelineError("relaxation", f"chance constraints need {slack.total:.6g} MW of slack "
                            "and curtailment is disabled")
    else:
        p4_spec = build_chance_spec(case, loads_p, drop_participation) if drop_participation else spec
        plan = schedule_curtailment(case, slack, p4_spec)
    schedule = solve_p5_schedule(case, eq.demands, plan, spec, eq, backend)
    return DayAheadResult(eq, slack, plan, schedule, spec, skipped)


# ---------------------------------------------------------------------------
# Monte-Carlo check of the chance levels
# ---------------------------------------------------------------------------

def sample_actual(case: CommunityCase, t: int, caps, n: int, rng) -> np.ndarray:
    """(R, n) draws of delivered renewable output at step t: clamp to [0, C], then cap."""
    out = np.empty((len(case.renewables), n))
    for j, r in enumerate(case.renewables):
        avail = np.clip(r.gmm[t].sample(rng, n), 0.0, r.capacity)
        out[j] = np.minimum(avail, caps[j])
    return out


def chance_violation_rates(case: CommunityCase, schedule, loads_p, n: int = 10**5, seed: int = 0) -> dict:
    """Empirical violation frequency per chance row under the affine recourse policy."""
    rng = np.random.default_rng(seed)
    gens = case.generators
    gamma = np.array([g.participation for g in gens])
    rates = {}
    for t in range(schedule.steps):
        draws = sample_actual(case, t, schedule.caps[:, t], n, rng)
        delta = draws.sum(0) - schedule.sch[:, t].sum()
        p_rt = schedule.p[:, t, None] - gamma[:, None] * delta[None, :]
        for i, g in enumerate(gens):
            rates[("reserve_up", g.id, t)] = float(np.mean(p_rt[i] > g.p_max + 1e-9))
            rates[("reserve_down", g.id, t)] = float(np.mean(p_rt[i] < g.p_min - 1e-9))
        for cr in case.power_network.corridors:
            F = np.array([cr.ptdf_generators.get(g.id, 0.0) for g in gens])
            Fr = np.array([cr.ptdf_renewables.get(r.id, 0.0) for r in case.renewables])
            dflow = sum(cr.ptdf_consumers.get(c.id, 0.0) * loads_p[k, t] for k, c in enumerate(case.consumers))
            flow = F @ p_rt + Fr @ draws + dflow
            rates[("line_up", cr.id, t)] = float(np.mean(flow > cr.limit + 1e-9))
            rates[("line_down", cr.id, t)] = float(np.mean(flow < -cr.limit - 1e-9))
    return rates
