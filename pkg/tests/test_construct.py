import math

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import make_instance, tiny_instance
from mcbap.construct import construct, construct_partial, feasible_position_count, most_constrained
from mcbap.instgen import GeneratorConfig, generate
from mcbap.model import EPS, ExternalBerth, Port, check_feasibility, evaluate
from mcbap.oracle import brute_force
from mcbap.placement import PartialSolution


def enumerate_count(ps, cid):
    """Plain double loop over the grid; independent of the vectorized scan."""
    inst = ps.instance
    call = inst.call(cid)
    port = inst.port(call.port)
    length = inst.ship_of(cid).length
    ts = inst.time_step
    beta = inst.cost_rates.deviation_factor
    lo = call.est
    prev, nxt = inst.pred[cid], inst.succ[cid]
    if prev is not None and prev in ps.pos:
        lo = max(lo, ps.pos[prev][1] + ps.hand[prev] + inst.leg_distance[prev] * min(
            lv.time_per_distance for lv in inst.speed_levels))
    others = [(e.position, e.position + e.length, e.start, e.start + e.duration)
              for e in inst.externals_at_port[call.port]]
    for k, (x, y) in ps.pos.items():
        if inst.call(k).port == call.port:
            others.append((x, x + inst.ship_of(k).length, y, y + ps.hand[k]))
    n = 0
    k = 0
    while k * port.segment_length + length <= port.quay_length + EPS:
        x = k * port.segment_length
        h = (1 + beta * abs(x - call.ideal_position)) * call.base_handling
        t = math.ceil(lo / ts - EPS)
        while t * ts + h <= call.lft + EPS:
            y = t * ts
            ok = all(not (x < b[1] - EPS and b[0] < x + length - EPS and y < b[3] - EPS and b[2] < y + h - EPS)
                     for b in others)
            if nxt is not None and nxt in ps.pos:
                fast = inst.leg_distance[cid] * min(lv.time_per_distance for lv in inst.speed_levels)
                ok = ok and y + h + fast <= ps.pos[nxt][1] + EPS
            n += ok
            t += 1
        k += 1
    return n


def test_count_single_column():
    inst = make_instance([(1, "A", 0, 0, 5, 9)], ships={1: 100})
    assert feasible_position_count(PartialSolution(inst), 0) == 5


def test_count_fully_blocked():
    ext = (ExternalBerth("A", 0, 0, 200, 100),)
    inst = make_instance([(1, "A", 0, 0, 5, 20)], externals=ext)
    assert feasible_position_count(PartialSolution(inst), 0) == 0


def test_count_two_spans():
    ports = (Port("A", 150.0, 50.0),)
    ext = (ExternalBerth("A", 50, 0, 100, 50),)
    inst = make_instance([(1, "A", 0, 0, 2, 6.5)], externals=ext, ports=ports)
    ps = PartialSolution(inst)
    assert feasible_position_count(ps, 0) == 10 == enumerate_count(ps, 0)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 500), frac=st.floats(0.0, 1.0))
def test_count_matches_enumeration(seed, frac):
    inst = tiny_instance(seed, externals=3)
    ps = construct_partial(inst)
    drop = sorted(ps.pos)[: max(1, int(frac * len(ps.pos)))]
    for c in drop:
        ps.unplace(c)
    for c in drop:
        assert feasible_position_count(ps, c) == enumerate_count(ps, c)


def test_most_constrained_rules():
    # call 0 is fully blocked, calls 1 and 2 are free
    ports = (Port("A", 100.0, 10.0), Port("B", 100.0, 10.0))
    ext = (ExternalBerth("A", 0, 0, 200, 100),)
    inst = make_instance([(1, "A", 0, 5, 5), (2, "B", 0, 3, 5), (3, "B", 50, 3, 5)],
                         externals=ext, ports=ports)
    ps = PartialSolution(inst)
    assert most_constrained(ps) == 0
    # equal counts: earliest EST, then lowest ship
    inst = make_instance([(1, "A", 0, 5, 5), (2, "A", 0, 3, 5), (3, "A", 0, 3, 5)])
    assert most_constrained(PartialSolution(inst)) == 1


def test_most_constrained_counts_3_7_7():
    # same window, different lengths -> different column counts
    ports = (Port("A", 100.0, 10.0),)
    inst = make_instance([(1, "A", 0, 0, 5, 5.5), (2, "A", 0, 0, 5, 5.5), (3, "A", 0, 0, 5, 5.5)],
                         ships={1: 80, 2: 40, 3: 40}, ports=ports)
    ps = PartialSolution(inst)
    counts = [feasible_position_count(ps, c) for c in range(3)]
    assert counts == [3, 7, 7]
    assert most_constrained(ps) == 0


def test_construct_single_call():
    inst = make_instance([(1, "A", 30, 4, 5)])
    sol = construct(inst)
    assert (sol[0].berth_position, sol[0].berth_start) == (30, 4)


def test_construct_two_side_by_side():
    inst = make_instance([(1, "A", 0, 2, 5), (2, "A", 0, 2, 5)])
    sol = construct(inst)
    assert sol[0].berth_start == sol[1].berth_start == 2
    assert abs(sol[0].berth_position - sol[1].berth_position) == 50
    assert evaluate(inst, sol).total == pytest.approx(brute_force(inst).objective)


def test_construct_blocked_window_first_free_hour():
    ports = (Port("A", 100.0, 10.0), Port("B", 100.0, 10.0))
    ext = (ExternalBerth("A", 0, 0, 7, 100),)
    inst = make_instance([(1, "A", 0, 0, 5, 30), (2, "B", 0, 0, 5, 60)], externals=ext, ports=ports)
    assert most_constrained(PartialSolution(inst)) == 0
    sol = construct(inst)
    assert sol[0].berth_start == 7


def _stuck(inst, sol, cid):
    """True if one grid step in some direction is infeasible for the placed call."""
    call = inst.call(cid)
    port = inst.port(call.port)
    ship = inst.ship_of(cid)
    ts, seg = inst.time_step, port.segment_length
    fast = min(lv.time_per_distance for lv in inst.speed_levels)
    beta = inst.cost_rates.deviation_factor
    a = sol[cid]
    hand = {}
    for k, b in sol.assignments.items():
        c = inst.call(k)
        hand[k] = (1 + beta * abs(b.berth_position - c.ideal_position)) * c.base_handling
    rects = [(e.position, e.position + e.length, e.start, e.start + e.duration)
             for e in inst.externals_at_port[call.port]]
    rects += [(b.berth_position, b.berth_position + inst.ship_of(k).length, b.berth_start,
               b.berth_start + hand[k]) for k, b in sol.assignments.items()
              if k != cid and inst.call(k).port == call.port]
    prev, nxt = inst.pred[cid], inst.succ[cid]
    for dx, dy in ((seg, 0), (-seg, 0), (0, ts), (0, -ts)):
        x, y = a.berth_position + dx, a.berth_start + dy
        h = (1 + beta * abs(x - call.ideal_position)) * call.base_handling
        if x < -EPS or x + ship.length > port.quay_length + EPS or y < call.est - EPS:
            return True
        if prev is not None and y < sol[prev].berth_start + hand[prev] + inst.leg_distance[prev] * fast - EPS:
            return True
        if nxt is not None and y + h + inst.leg_distance[cid] * fast > sol[nxt].berth_start + EPS:
            return True
        if any(x < r[1] - EPS and r[0] < x + ship.length - EPS and y < r[3] - EPS and r[2] < y + h - EPS
               for r in rects):
            return True
    return False


@pytest.mark.parametrize("seed", range(6))
def test_construct_feasible_adjacent_deterministic(seed):
    inst = generate(GeneratorConfig(seed=seed, n_ships=12, n_external_per_port=4, segment_length=40))
    sol = construct(inst)
    assert check_feasibility(inst, sol) == []
    assert sol == construct(inst)
    assert all(_stuck(inst, sol, c) for c in sol.assignments)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_construct_tiny_feasible_and_packed(seed):
    inst = tiny_instance(seed, externals=3, window=8.0)
    sol = construct(inst)
    assert check_feasibility(inst, sol) == []
    assert all(_stuck(inst, sol, c) for c in sol.assignments)
