import pytest

from ihpdispatch.case import (
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
    load_bundled,
)
from ihpdispatch.uncertainty import GmmModel


def tiny_case(steps=2, demand=10.0, gens=None, renewables=(), lines=False, corridor_limit=None,
              a=0.5, b=20.0, c=7.0):
    """Minimal community: optional two-bus feeder, one consumer, gas-free heat side, empty storage."""
    if gens is None:
        gens = (Generator("G1", 1, a, b, c, 0.0, 50.0, 100.0, 100.0, 1.0, 5.0, -50.0, 50.0),)
    if lines:
        buses = (Bus(1, 0.81, 1.21), Bus(2, 0.81, 1.21))
        net_lines = (Line(1, 2, 0.0, 0.0, 100.0, 100.0),)
        consumer_bus = 2
    else:
        buses, net_lines, consumer_bus = (Bus(1, 0.81, 1.21),), (), 1
    corridors = ()
    if corridor_limit is not None:
        corridors = (Corridor("L1-2", corridor_limit, {g.id: -1.0 for g in gens if g.bus == 2},
                              {r.id: -1.0 for r in renewables if r.bus == 2}, {"C1": 1.0}),)
    net = PowerNetwork(1.0, 1, buses, net_lines, corridors)
    heat = HeatNetwork(4182.0, 10.0, 50.0, 120.0, 20.0, 100.0,
                       (HeatNode(1, "source"), HeatNode(2, "load")), (Pipe(1, 2, 10.0, 1.0, 0.0),))
    consumer = Consumer("C1", consumer_bus, 2, 0.5, 1e-9, (demand,) * steps, (0.01,) * steps, (0.0,) * steps)
    empty = SharedStorage(0.0, 0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.0)
    return CommunityCase(
        name="tiny", steps=steps, step_hours=1.0, generators=tuple(gens), renewables=tuple(renewables),
        heat_plants=(HeatPlant("H", 1, 1, 1.0, 1.0, 0.0, 0.0, 0.0, 10.0, (0.0,) * steps),),
        storage_electric=empty, storage_heat=empty, consumers=(consumer,), power_network=net,
        heat_network=heat, tariff=Tariff((1.0,) * steps, (1.0,) * steps, 0.0),
        risk=RiskLevels(0.05, 0.05, 0.05, 0.05))


def flat_renewable(rid="W1", bus=1, mean=2.0, std=1e-9, capacity=5.0, steps=2, penalty=100.0):
    g = GmmModel.normal(mean, std)
    return RenewableUnit(rid, bus, "wind", capacity, penalty, (mean,) * steps, (g,) * steps)


@pytest.fixture(scope="session")
def bundled():
    return load_bundled()


@pytest.fixture(scope="session")
def bundled_tight():
    return load_bundled("case33_32_tight.json")


@pytest.fixture(scope="session")
def relaxed_run(bundled):
    from ihpdispatch.dayahead import run_day_ahead
    return run_day_ahead(bundled)


@pytest.fixture(scope="session")
def tight_run(bundled_tight):
    from ihpdispatch.dayahead import run_day_ahead
    return run_day_ahead(bundled_tight)


# acceptance results, filled by test_acceptance and printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {title} ({detail})")
