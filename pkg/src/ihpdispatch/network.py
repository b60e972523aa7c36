"""Power-flow and district-heating network models plus the physics helpers they use.

Power side: branch-flow (DistFlow) equations on a radial feeder, with the
current/voltage product relaxed to a second-order cone. Heat side: fixed mass
flows, so supply/return temperatures enter linearly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .case import HeatNetwork, PowerNetwork, heat_tree
from .conic import ConicProgram, Expr, lsum

W_PER_MW = 1e6


# pure helpers --------------------------------------------------------------

def outlet_temperature(t_in, ambient, leakage, length, cp, mass_flow):
    """Pipe outlet temperature under exponential heat leakage to ambient."""
    return (t_in - ambient) * math.exp(-leakage * length / (cp * mass_flow)) + ambient


def mix_temperature(flows, temps) -> float:
    flows = np.asarray(flows, dtype=float)
    if np.any(flows <= 0):
        raise ValueError("mixing flows must be positive")
    return float(flows @ np.asarray(temps, dtype=float) / flows.sum())


def soc_trajectory(initial, charge, discharge, eta_c, eta_d, dt=1.0) -> np.ndarray:
    """Energy after each step, starting with ``initial`` (length T + 1)."""
    delta = eta_c * np.asarray(charge, dtype=float) * dt - np.asarray(discharge, dtype=float) * dt / eta_d
    return np.concatenate([[initial], initial + np.cumsum(delta)])


def downstream_buses(net: PowerNetwork, from_bus: int, to_bus: int) -> set:
    """Buses fed through line (from_bus, to_bus) when the root is the slack."""
    children = {}
    for ln in net.lines:
        children.setdefault(ln.from_bus, []).append(ln.to_bus)
    if to_bus not in children.get(from_bus, []):
        raise ValueError(f"no line {from_bus}->{to_bus}")
    out, stack = set(), [to_bus]
    while stack:
        u = stack.pop()
        out.add(u)
        stack.extend(children.get(u, []))
    return out


def radial_ptdf(net: PowerNetwork, from_bus: int, to_bus: int, bus: int, kind: str) -> float:
    """Sensitivity of the line flow to an injection (kind='injection') or a withdrawal at ``bus``."""
    below = bus in downstream_buses(net, from_bus, to_bus)
    if not below:
        return 0.0
    return -1.0 if kind == "injection" else 1.0


# power flow -----------------------------------------------------------------

@dataclass
class PowerFlowVars:
    P: dict  # (from, to) -> Expr
    Q: dict
    l: dict
    v: dict  # bus -> Expr

    def losses(self, net: PowerNetwork) -> Expr:
        return lsum(ln.r * self.l[(ln.from_bus, ln.to_bus)] for ln in net.lines)


def add_distflow(prog: ConicProgram, net: PowerNetwork, tag: str, p_inj: dict, q_inj: dict,
                 v_root: float = 1.0) -> PowerFlowVars:
    """Branch-flow equations with P^2 + Q^2 <= l v relaxed to a rotated cone.

    ``p_inj``/``q_inj`` map bus -> net injection expression (generation minus load, p.u.).
    """
    P, Q, L, V = {}, {}, {}, {}
    for b in net.buses:
        if b.id == net.root_bus:
            V[b.id] = prog.var(f"v[{b.id},{tag}]", v_root, v_root)
        else:
            V[b.id] = prog.var(f"v[{b.id},{tag}]", b.v_min, b.v_max)
    for ln in net.lines:
        key = (ln.from_bus, ln.to_bus)
        P[key] = prog.var(f"P[{ln.from_bus}-{ln.to_bus},{tag}]", -ln.p_max, ln.p_max)
        Q[key] = prog.var(f"Q[{ln.from_bus}-{ln.to_bus},{tag}]", -ln.p_max, ln.p_max)
        L[key] = prog.var(f"l[{ln.from_bus}-{ln.to_bus},{tag}]", 0.0, ln.i_max ** 2)
    out_lines, in_line = {}, {}
    for ln in net.lines:
        out_lines.setdefault(ln.from_bus, []).append(ln)
        in_line[ln.to_bus] = ln
    for ln in net.lines:
        key = (ln.from_bus, ln.to_bus)
        prog.eq(V[ln.to_bus] - V[ln.from_bus] + 2 * (ln.r * P[key] + ln.x * Q[key])
                - (ln.r ** 2 + ln.x ** 2) * L[key], 0.0, f"volt[{key},{tag}]")
        prog.soc([2 * P[key], 2 * Q[key], L[key] - V[ln.from_bus]], L[key] + V[ln.from_bus], f"flow[{key},{tag}]")
    zero = Expr()
    for b in net.buses:
        outgoing_p = lsum(P[(b.id, ln.to_bus)] for ln in out_lines.get(b.id, []))
        outgoing_q = lsum(Q[(b.id, ln.to_bus)] for ln in out_lines.get(b.id, []))
        if b.id in in_line:
            ln = in_line[b.id]
            key = (ln.from_bus, ln.to_bus)
            arriving_p = P[key] - ln.r * L[key]
            arriving_q = Q[key] - ln.x * L[key]
        else:
            arriving_p = arriving_q = zero
        prog.eq(outgoing_p - arriving_p - p_inj.get(b.id, zero), 0.0, f"pbal[{b.id},{tag}]")
        prog.eq(outgoing_q - arriving_q - q_inj.get(b.id, zero), 0.0, f"qbal[{b.id},{tag}]")
    return PowerFlowVars(P, Q, L, V)


def cone_gap(P, Q, l, v_from) -> np.ndarray:
    """|P^2 + Q^2 - l v| per line; zero when the relaxation is exact."""
    P, Q, l, v_from = (np.asarray(a, dtype=float) for a in (P, Q, l, v_from))
    return np.abs(P ** 2 + Q ** 2 - l * v_from)


# district heating -----------------------------------------------------------

@dataclass
class HeatVars:
    supply: dict  # node -> Expr (supply temperature)
    ret: dict  # node -> Expr (mixed return temperature)
    exchanger: dict  # load node -> Expr (exchanger outlet temperature)
    source_heat: Expr  # MW delivered into the network at the source


def pipe_decay(hn: HeatNetwork, pipe) -> float:
    return math.exp(-pipe.leakage * pipe.length / (hn.cp * pipe.mass_flow))


def add_heat_network(prog: ConicProgram, hn: HeatNetwork, tag: str, node_load: dict) -> HeatVars:
    """Temperatures for one step given heat withdrawn at load nodes (MW)."""
    src, order, parent, pipe_of, children, exch = heat_tree(hn)
    Ta = hn.ambient
    TS, TR, TX = {}, {}, {}
    for n in order:
        TS[n] = prog.var(f"Ts[{n},{tag}]", hn.supply_min, hn.supply_max)
        TR[n] = prog.var(f"Tr[{n},{tag}]", hn.return_min, hn.return_max)
    kinds = {n.id: n.kind for n in hn.nodes}
    for n in order:
        if n == src:
            continue
        pipe = hn.pipes[pipe_of[n]]
        e = pipe_decay(hn, pipe)
        prog.eq(TS[n] - e * TS[parent[n]], (1 - e) * Ta, f"Tsup[{n},{tag}]")
    for n in order:
        if kinds[n] == "load":
            TX[n] = prog.var(f"Tx[{n},{tag}]", hn.return_min, hn.return_max)
            drop = node_load.get(n, 0.0) * W_PER_MW / (hn.cp * exch[n])
            prog.eq(TS[n] - TX[n], drop, f"Texch[{n},{tag}]")
    for n in order:
        # return water mixes the local exchanger outlet with cooled returns from children
        terms, total = [], 0.0
        if n in TX:
            terms.append(exch[n] * TX[n])
            total += exch[n]
        for w in children.get(n, []):
            pipe = hn.pipes[pipe_of[w]]
            e = pipe_decay(hn, pipe)
            terms.append(pipe.mass_flow * (e * TR[w] + (1 - e) * Ta))
            total += pipe.mass_flow
        prog.eq(total * TR[n] - lsum(terms), 0.0, f"Tmix[{n},{tag}]")
    m_src = sum(hn.pipes[pipe_of[w]].mass_flow for w in children.get(src, []))
    source_heat = (hn.cp * m_src / W_PER_MW) * (TS[src] - TR[src])
    return HeatVars(TS, TR, TX, source_heat)


def heat_network_losses(hn: HeatNetwork, supply: dict, ret: dict) -> float:
    """Heat lost through pipe walls (MW), from node temperatures alone."""
    _, _, parent, pipe_of, _, _ = heat_tree(hn)
    loss = 0.0
    for n, k in pipe_of.items():
        pipe = hn.pipes[k]
        e = pipe_decay(hn, pipe)
        flow = hn.cp * pipe.mass_flow / W_PER_MW
        t_sup_in = supply[parent[n]]
        t_ret_in = ret[n]
        loss += flow * (1 - e) * (t_sup_in - hn.ambient)
        loss += flow * (1 - e) * (t_ret_in - hn.ambient)
    return loss
