"""Output files: deterministic JSON/CSV writers and run summaries."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

STORAGE_PRICE_PER_KWH = 300.0
STORAGE_LIFETIME_DAYS = 10 * 365


def daily_investment(capacity_kwh: float, units: int = 2) -> float:
    """Storage investment prorated per day: units * capacity * price / lifetime."""
    return units * capacity_kwh * STORAGE_PRICE_PER_KWH / STORAGE_LIFETIME_DAYS


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def write_text(path, text: str) -> None:
    Path(path).write_text(text)


def day_ahead_summary(case, result) -> dict:
    s, eq, slack, plan = result.schedule, result.equilibrium, result.slack, result.plan
    diag = dict(s.diagnostics)
    diag.pop("chance_bounds", None)
    return {
        "case": case.name,
        "objective": s.costs,
        "equilibrium": {
            "iterations": eq.iterations, "converged": eq.converged, "damped": eq.damped,
            "budget_error": eq.budget_error,
            "total_power_load_MWh": float(s.load_p.sum() * case.step_hours),
            "total_heat_load_MWh": float(s.load_h.sum() * case.step_hours),
        },
        "slack": {
            "total": slack.total, "reserve_down": slack.drs, "line_up": slack.ts_up.sum(axis=1),
            "line_down": slack.ts_down.sum(axis=1), "corridors": list(slack.corridor_ids),
            "curtailment_skipped": result.skipped_curtailment,
        },
        "curtailment": {
            "subsets": [list(x) for x in plan.subsets],
            "penalty": plan.total_penalty,
            "cut_gap_bound_max": float(plan.cut_gap.max(initial=0.0)),
            "epigraph_gap_max": float((plan.penalty - plan.epigraph).max(initial=0.0)),
        },
        "risk": {"alpha_up": case.risk.alpha_up, "alpha_dr": case.risk.alpha_dr,
                 "alpha_line_up": case.risk.alpha_line_up, "alpha_line_down": case.risk.alpha_line_down},
        "diagnostics": diag,
        "tightness_flag": diag["cone_gap_max"] > 1e-4,
    }


def equilibrium_csv(case, eq) -> str:
    rows = [["consumer", "step", "price_power_per_MWh", "price_heat_per_MWh", "demand_power_MW", "demand_heat_MW"]]
    for n, c in enumerate(case.consumers):
        for t in range(case.steps):
            rows.append([c.id, t, f"{eq.prices.power[n, t]:.9f}", f"{eq.prices.heat[n, t]:.9f}",
                         f"{eq.demands.power[n, t]:.9f}", f"{eq.demands.heat[n, t]:.9f}"])
    return "".join(",".join(map(str, r)) + "\n" for r in rows)


SWEEP_COLUMNS = ["param", "value", "status", "objective", "operating_cost", "curtailment_penalty",
                 "investment_per_day", "total_cost", "total_power_load_MWh", "total_heat_load_MWh"]


def write_sweep(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r[k] if not isinstance(r[k], float) else f"{round(r[k], 9) + 0.0:.9f}" for k in SWEEP_COLUMNS])
