import pytest

from mcbap.instgen import CLASS_DESIGN, SPEEDS, GeneratorConfig, generate
from mcbap.model import CostRates, ExternalBerth, Instance, Port, PortCall, Ship, SpeedLevel

SPEED_LEVELS = tuple(SpeedLevel.from_speed(s, CLASS_DESIGN) for s in SPEEDS)


def make_instance(calls, ships=None, externals=(), ports=None, distances=None, time_step=1.0,
                  rates=None, horizon=None, name="hand"):
    """Small hand-built instance.

    ``calls``: list of (ship_id, port, ideal, est, h0) in route order per ship;
    lft defaults to eft + 10.  ``ships``: {ship_id: length}.
    """
    ports = ports or (Port("A", 100.0, 10.0),)
    per_ship = {}
    out = []
    for cid, spec in enumerate(calls):
        sid, port, ideal, est, h0 = spec[:5]
        lft = spec[5] if len(spec) > 5 else est + h0 + 10.0
        per_ship.setdefault(sid, []).append(cid)
        out.append(PortCall(cid, sid, len(per_ship[sid]), port, float(ideal), float(est),
                            float(est + h0), float(lft), float(h0)))
    lengths = ships or {}
    ship_objs = tuple(Ship(sid, float(lengths.get(sid, 50.0)), "medium", 21.0, 0.25, tuple(route))
                      for sid, route in sorted(per_ship.items()))
    if distances is None:
        ids = [p.id for p in ports]
        distances = {(a, b): 100.0 for a in ids for b in ids if a < b}
    hz = horizon or 1.5 * max([c.lft for c in out] + [e.start + e.duration for e in externals])
    return Instance(ports=tuple(ports), ships=ship_objs, port_calls=tuple(out),
                    external_berths=tuple(externals), speed_levels=SPEED_LEVELS,
                    distances=distances, cost_rates=rates or CostRates(), horizon=hz,
                    time_step=time_step, name=name)


def tiny_config(seed, n_ships=None, externals=2, window=12.0):
    n = n_ships if n_ships is not None else 2 + seed % 3
    return GeneratorConfig(seed=seed, n_ships=n, n_external_per_port=externals, segment_length=80,
                           time_step=4, ports=("NLRTM", "DEHAM"), planning_window=window)


def tiny_instance(seed, **kw):
    return generate(tiny_config(seed, **kw))


@pytest.fixture(scope="session")
def inst30():
    return generate(GeneratorConfig(seed=3, n_ships=30, n_external_per_port=5, segment_length=20))


def random_feasible(inst, rng):
    """Complete feasible plan built in random order at random free cells."""
    from mcbap.placement import PartialSolution, all_cells, insert_all

    def choose(ps, pool):
        return pool[int(rng.integers(len(pool)))]

    def placer(ps, cid):
        cells = all_cells(ps, cid)
        if len(cells) == 0:
            return None
        # favour cheap cells a little so plans are not absurdly spread out
        i = int(len(cells) * rng.random() ** 2)
        return float(cells.x[i]), float(cells.y[i])

    return insert_all(PartialSolution(inst), [c.id for c in inst.port_calls], choose, placer)


ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: long-running acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
