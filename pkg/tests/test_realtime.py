import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest

from conftest import flat_renewable, tiny_case
from ihpdispatch.case import Generator
from ihpdispatch.dayahead import ScheduleSetpoints, consumer_loads
from ihpdispatch.realtime import (
    Realization,
    _Network,
    affine_point,
    dispatch_step,
    read_trace,
    realization_from_schedule,
    realize,
    reserve_violation_rates,
    run_real_time,
)

FIXTURE = json.loads((Path(__file__).parent / "fixtures" / "realtime_seed1.json").read_text())


@pytest.fixture(scope="module")
def setpoints(relaxed_run):
    return ScheduleSetpoints.from_schedule(relaxed_run.schedule)


@pytest.fixture(scope="module")
def loads(bundled, relaxed_run):
    return consumer_loads(bundled, relaxed_run.equilibrium.demands)


def two_gen_case(cost=(25.0, 25.0)):
    gens = (Generator("G1", 1, 0.1, 20.0, 0.0, 0.0, 50.0, 100.0, 100.0, 0.6, cost[0], -50.0, 50.0),
            Generator("G2", 1, 0.1, 20.0, 0.0, 0.0, 50.0, 100.0, 100.0, 0.4, cost[1], -50.0, 50.0))
    return tiny_case(demand=40.0, gens=gens, renewables=(flat_renewable(mean=10.0, capacity=30.0),))


class TestRealization:
    def test_degenerate_distribution_gives_means(self):
        case = tiny_case(renewables=(flat_renewable(mean=2.0, std=1e-12),))
        real = realize(case, 3)
        assert real.available == pytest.approx(np.full((1, 2 * case.rt_steps_per_hour), 2.0), abs=1e-9)

    def test_zero_cap_delivers_nothing(self, bundled):
        real = realize(bundled, 0)
        caps = np.zeros((len(bundled.renewables), bundled.steps))
        assert np.all(real.actual(caps, bundled.rt_steps_per_hour) == 0.0)

    def test_seed_is_deterministic(self, bundled):
        assert np.array_equal(realize(bundled, 7).available, realize(bundled, 7).available)
        assert not np.array_equal(realize(bundled, 7).available, realize(bundled, 8).available)

    def test_within_capacity(self, bundled):
        a = realize(bundled, 2).available
        caps = np.array([[r.capacity] for r in bundled.renewables])
        assert np.all(a >= 0) and np.all(a <= caps)

    @pytest.mark.parametrize("per_step", [False, True])
    def test_trace_file(self, bundled, tmp_path, per_step):
        n = bundled.steps * (bundled.rt_steps_per_hour if per_step else 1)
        ids = [r.id for r in bundled.renewables]
        lines = ["step," + ",".join(ids)] + [f"{s}," + ",".join("0.25" for _ in ids) for s in range(n)]
        path = tmp_path / "trace.csv"
        path.write_text("\n".join(lines) + "\n")
        real = read_trace(bundled, path)
        assert real.available.shape == (len(ids), bundled.steps * bundled.rt_steps_per_hour)
        assert np.all(real.available == 0.25)

    def test_trace_wrong_length(self, bundled, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("step,W1,S1\n0,1,1\n")
        with pytest.raises(ValueError, match="rows"):
            read_trace(bundled, path)


class TestStep:
    def test_affine_split(self):
        p = affine_point([20.0, 20.0], [0.6, 0.4], 10.0)
        assert p == pytest.approx([14.0, 16.0])

    def test_surplus_absorbed_at_linear_cost(self):
        case = two_gen_case()
        net = _Network(case, np.array([[40.0, 40.0]]))
        step = dispatch_step(case, net, [15.0, 15.0], 0, [20.0], 10.0)
        assert step.delta == pytest.approx(10.0)
        assert step.p.sum() == pytest.approx(20.0)
        assert step.cost == pytest.approx(25.0 * 10.0)
        assert step.affine_cost == pytest.approx(25.0 * 10.0)
        assert step.shed == 0 and step.spill == 0

    def test_cheaper_unit_takes_the_move(self):
        case = two_gen_case(cost=(10.0, 40.0))
        net = _Network(case, np.array([[40.0, 40.0]]))
        step = dispatch_step(case, net, [15.0, 15.0], 0, [20.0], 10.0)
        assert step.p == pytest.approx([5.0, 15.0], abs=1e-7)
        assert step.cost == pytest.approx(100.0)
        assert step.affine_cost == pytest.approx(10 * 6 + 40 * 4)

    def test_shortfall_beyond_capacity_is_shed(self):
        case = two_gen_case()
        net = _Network(case, np.array([[40.0, 40.0]]))
        # 20 MW shortfall with only 10 MW of headroom left
        step = dispatch_step(case, net, [45.0, 45.0], 0, [0.0], 20.0)
        assert step.shed == pytest.approx(10.0, abs=1e-7)
        assert step.residual <= 1e-9
        assert math.isinf(step.affine_cost)

    def test_ramp_limits_follow_previous_step(self):
        case = two_gen_case()
        net = _Network(case, np.array([[40.0, 40.0]]))
        g = [dataclasses.replace(x, ramp_up=1.0, ramp_down=1.0) for x in case.generators]
        case = case.replace(generators=tuple(g))
        step = dispatch_step(case, net, [15.0, 15.0], 0, [0.0], 10.0, prev_p=np.array([15.0, 15.0]))
        assert step.p == pytest.approx([16.0, 16.0], abs=1e-7)
        assert step.shed == pytest.approx(8.0, abs=1e-7)


class TestDay:
    def test_no_deviation_costs_nothing(self, bundled, setpoints, loads):
        rt = run_real_time(bundled, setpoints, realization_from_schedule(bundled, setpoints), loads=loads)
        assert rt.total_cost == pytest.approx(0.0, abs=1e-6)
        assert rt.heat_residual <= 1e-6

    def test_optimized_never_worse_than_affine(self, bundled, setpoints, loads):
        for seed in range(20):
            rt = run_real_time(bundled, setpoints, realize(bundled, seed), loads=loads)
            for s in rt.steps:
                assert s.cost <= s.affine_cost + 1e-6
                assert s.residual <= 1e-6

    def test_seed_one_regression(self, bundled, setpoints, loads):
        rt = run_real_time(bundled, setpoints, realize(bundled, 1), loads=loads)
        assert rt.total_cost == pytest.approx(FIXTURE["total_cost"], rel=1e-6)
        hourly = np.array([rt.steps[s].p for s in range(0, len(rt.steps), bundled.rt_steps_per_hour)])
        assert hourly == pytest.approx(np.array(FIXTURE["hourly_p"]), abs=1e-6)
        assert rt.gas == pytest.approx(np.array(FIXTURE["gas"]), abs=1e-6)

    def test_memoized_solves(self, bundled, setpoints, loads):
        rt = run_real_time(bundled, setpoints, realize(bundled, 4), loads=loads)
        assert len(rt.steps) == bundled.steps * bundled.rt_steps_per_hour
        assert rt.solves <= 2 * bundled.steps

    def test_reserve_violation_rates(self, bundled, setpoints):
        up, down = reserve_violation_rates(bundled, setpoints, range(200))
        assert up <= bundled.risk.alpha_up + 0.02
        assert down <= bundled.risk.alpha_dr + 0.02

    def test_step_mismatch(self, bundled, setpoints):
        with pytest.raises(ValueError, match="steps"):
            run_real_time(tiny_case(), setpoints, Realization(np.zeros((0, 24)), "x"))

    def test_csv_shape(self, bundled, setpoints, loads):
        rt = run_real_time(bundled, setpoints, realize(bundled, 0), loads=loads)
        lines = rt.to_csv().splitlines()
        assert len(lines) == 1 + bundled.steps * bundled.rt_steps_per_hour
        assert lines[0].startswith("step,minute,p_G1_MW")
        assert rt.summary()["lp_solves"] == rt.solves
