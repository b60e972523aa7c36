"""``dispatch`` command line: validate, day-ahead, real-time, equilibrium, sweep.

Exit codes: 0 success, 2 bad input (missing or invalid case/schedule/trace),
3 solver or pipeline failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .case import CaseError, bundled_case_path, load_case, validate_case, case_from_dict
from .dayahead import PipelineError, ScheduleSetpoints, consumer_loads, run_day_ahead
from .market import fixed_point_equilibrium
from .realtime import read_trace, realize, run_real_time
from . import reports

log = logging.getLogger("ihpdispatch")

EXIT_OK, EXIT_INPUT, EXIT_FAILURE = 0, 2, 3


class InputError(Exception):
    pass


def _case(args):
    path = Path(args.case) if args.case else bundled_case_path()
    case = load_case(path)
    line = getattr(args, "alpha_line", None)
    return case.with_risk(alpha_up=getattr(args, "alpha_up", None), alpha_dr=getattr(args, "alpha_dr", None),
                          alpha_line_up=line, alpha_line_down=line)


def _check_risk(case):
    bad = [d for d in validate_case(case) if d.severity == "error" and d.path.startswith("$.risk")]
    if bad:
        raise InputError(f"{bad[0].path}: {bad[0].message}")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(args) -> int:
    path = Path(args.case) if args.case else bundled_case_path()
    import json
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"case file not found: {path}") from None
    except ValueError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None
    warnings: list = []
    case = case_from_dict(doc, warnings)
    diags = warnings + validate_case(case)
    for d in diags:
        print(f"{d.severity}: {d.path}: {d.message}")
    errors = sum(d.severity == "error" for d in diags)
    print(f"{path}: {errors} error(s), {len(diags) - errors} warning(s)")
    return EXIT_INPUT if errors else EXIT_OK


def cmd_day_ahead(args) -> int:
    case = _case(args)
    _check_risk(case)
    result = run_day_ahead(case, curtailment=not args.no_curtailment, drop_participation=args.eq57_variant)
    out = _out(args)
    reports.write_text(out / "schedule.csv", result.schedule.to_csv())
    summary = reports.day_ahead_summary(case, result)
    reports.write_json(out / "summary.json", summary)
    if args.trace:
        result.equilibrium.write_trace(out / "equilibrium_trace.csv")
    if summary["tightness_flag"]:
        log.warning("cone relaxation not tight: max gap %.3g", summary["diagnostics"]["cone_gap_max"])
    print(f"objective {result.schedule.costs['total']:.6f} (slack {result.slack.total:.6g} MW, "
          f"curtailment penalty {result.plan.total_penalty:.6f})")
    return EXIT_OK


def cmd_real_time(args) -> int:
    case = _case(args)
    out = _out(args)
    sched_path = Path(args.schedule) if args.schedule else out / "schedule.csv"
    if not sched_path.exists():
        raise InputError(f"schedule not found: {sched_path} (run day-ahead first or pass --schedule)")
    try:
        setpoints = ScheduleSetpoints.from_csv(sched_path)
    except (KeyError, ValueError) as exc:
        raise InputError(f"cannot read schedule {sched_path}: {exc}") from None
    if setpoints.gen_ids != tuple(g.id for g in case.generators) or setpoints.steps != case.steps:
        raise InputError(f"schedule {sched_path} does not match the case")
    if args.trace:
        if not Path(args.trace).exists():
            raise InputError(f"trace not found: {args.trace}")
        try:
            real = read_trace(case, args.trace)
        except (KeyError, ValueError) as exc:
            raise InputError(str(exc)) from None
    else:
        real = realize(case, args.seed)
    eq = fixed_point_equilibrium(case)
    result = run_real_time(case, setpoints, real, signed=args.signed_p2, loads=consumer_loads(case, eq.demands))
    reports.write_text(out / "rt_dispatch.csv", result.to_csv())
    reports.write_json(out / "rt_summary.json", result.summary())
    print(f"adjustment cost {result.total_cost:.6f} over {len(result.steps)} steps "
          f"(max balance residual {result.max_residual:.2e} MW)")
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    case = _case(args)
    eq = fixed_point_equilibrium(case)
    out = _out(args)
    reports.write_text(out / "equilibrium.csv", reports.equilibrium_csv(case, eq))
    if args.trace:
        eq.write_trace(out / "equilibrium_trace.csv")
    reports.write_json(out / "equilibrium.json", {
        "iterations": eq.iterations, "converged": eq.converged, "damped": eq.damped,
        "budget_error": eq.budget_error, "total_power_MWh": eq.demands.total_power,
        "total_heat_MWh": eq.demands.total_heat, "residuals": eq.residuals})
    print(f"{'converged' if eq.converged else 'NOT converged'} after {eq.iterations} iterations")
    return EXIT_OK if eq.converged else EXIT_FAILURE


def _sweep_point(case, param: str, value: float, eq57: bool) -> dict:
    row = {"param": param, "value": value, "status": "ok", "objective": float("nan"),
           "operating_cost": float("nan"), "curtailment_penalty": float("nan"), "investment_per_day": 0.0,
           "total_cost": float("nan"), "total_power_load_MWh": float("nan"), "total_heat_load_MWh": float("nan")}
    try:
        if param == "alpha":
            case = case.with_alpha(value)
        else:
            case = case.with_storage_capacity(value)
            row["investment_per_day"] = reports.daily_investment(value)
        res = run_day_ahead(case, drop_participation=eq57)
    except (PipelineError, RuntimeError, ValueError) as exc:
        row["status"] = f"error: {exc}".replace(",", ";")
        return row
    s = res.schedule
    row.update(objective=s.costs["total"], operating_cost=s.costs["operating"],
               curtailment_penalty=s.costs["curtailment_penalty"],
               total_cost=s.costs["total"] + row["investment_per_day"],
               total_power_load_MWh=float(s.load_p.sum() * case.step_hours),
               total_heat_load_MWh=float(s.load_h.sum() * case.step_hours))
    return row


DEFAULT_GRIDS = {
    "alpha": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    "capacity": [0, 250, 500, 750, 1000, 1250, 1500, 1750, 2000],
}


def cmd_sweep(args) -> int:
    case = _case(args)
    _check_risk(case)
    if args.values:
        try:
            grid = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise InputError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    else:
        grid = DEFAULT_GRIDS[args.param]
    if not grid:
        raise InputError("sweep grid is empty")
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, [case] * len(grid), [args.param] * len(grid), grid,
                                 [args.eq57_variant] * len(grid)))
    else:
        rows = [_sweep_point(case, args.param, v, args.eq57_variant) for v in grid]
    out = _out(args)
    reports.write_sweep(out / "sweep.csv", rows)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} point(s), {failed} failed")
    return EXIT_FAILURE if failed == len(rows) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dispatch", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True, risk=True):
        p.add_argument("--case", help="case JSON (default: bundled 33-bus case)")
        if out:
            p.add_argument("--out", default="out", help="output directory")
        if risk:
            p.add_argument("--alpha-up", type=float)
            p.add_argument("--alpha-dr", type=float)
            p.add_argument("--alpha-line", type=float, help="both line directions")

    p = sub.add_parser("validate", help="check a case file")
    common(p, out=False, risk=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("day-ahead", help="equilibrium + chance-constrained schedule")
    common(p)
    p.add_argument("--eq57-variant", action="store_true", help="curtailment line rows without participation factors")
    p.add_argument("--no-curtailment", action="store_true", help="fail instead of curtailing")
    p.add_argument("--trace", action="store_true", help="also write the equilibrium iteration trace")
    p.set_defaults(func=cmd_day_ahead)

    p = sub.add_parser("real-time", help="5-minute re-dispatch against a realized day")
    common(p, risk=False)
    p.add_argument("--schedule", help="schedule.csv (default: <out>/schedule.csv)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="renewable availability CSV instead of a seeded draw")
    p.add_argument("--signed-p2", action="store_true", help="signed adjustment cost instead of absolute")
    p.set_defaults(func=cmd_real_time)

    p = sub.add_parser("equilibrium", help="price/demand fixed point only")
    common(p, risk=False)
    p.add_argument("--trace", action="store_true", help="write per-iteration residuals")
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("sweep", help="re-run the day-ahead pipeline over a parameter grid")
    common(p)
    p.add_argument("--param", choices=sorted(DEFAULT_GRIDS), default="alpha")
    p.add_argument("--values", help="comma-separated grid (alpha, or storage kWh)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--eq57-variant", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CaseError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PipelineError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
