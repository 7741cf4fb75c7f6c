import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_instance, random_feasible, tiny_instance
from mcbap.construct import construct
from mcbap.instgen import instance_from_dict, instance_to_dict
from mcbap.model import Assignment, ExternalBerth, ModelError, Port, Solution, check_feasibility, evaluate
from mcbap.oracle import (OracleConfig, OracleRefusal, brute_force, export_lp, oracle_cache_path,
                          parse_lp, read_oracle_cache, solve_lp_highs, substitute_and_check,
                          write_oracle_cache)


def test_single_call():
    inst = make_instance([(1, "A", 30, 4, 5)])
    res = brute_force(inst)
    assert (res.solution[0].berth_position, res.solution[0].berth_start) == (30, 4)
    assert res.objective == pytest.approx(1000 * 5)


def test_two_ships_one_quay_wait():
    inst = make_instance([(1, "A", 0, 0, 5), (2, "A", 0, 0, 6)], ships={1: 100, 2: 100})
    res = brute_force(inst)
    s = res.solution
    first, second = sorted((0, 1), key=lambda c: s[c].berth_start)
    h_first = inst.call(first).base_handling
    assert s[first].berth_start == 0
    assert s[second].berth_start == h_first
    # both orders enumerated by hand
    costs = []
    for a, b in ((0, 1), (1, 0)):
        ha = inst.call(a).base_handling
        sol = Solution({a: Assignment(a, 0, 0), b: Assignment(b, 0, ha)})
        costs.append(evaluate(inst, sol).total)
    assert res.objective == pytest.approx(min(costs))


@pytest.mark.parametrize("seed", range(8))
def test_oracle_below_construction(seed):
    inst = tiny_instance(seed, externals=3, window=8.0)
    res = brute_force(inst)
    assert check_feasibility(inst, res.solution) == []
    assert res.objective <= evaluate(inst, construct(inst)).total + 1e-6
    assert res.objective == pytest.approx(evaluate(inst, res.solution).total)


def test_caps_refused():
    with pytest.raises(OracleRefusal):
        brute_force(tiny_instance(1, n_ships=5))
    calls = [(s, "A", 0, 0, 2) for s in range(1, 5)] + [(s, "B", 0, 20, 2) for s in range(1, 5)]
    ports = (Port("A", 400.0, 50.0), Port("B", 400.0, 50.0))
    inst = make_instance(calls + [(1, "A", 0, 40, 2)], ports=ports)
    with pytest.raises(OracleRefusal, match="calls"):
        brute_force(inst)
    with pytest.raises(OracleRefusal, match="node limit"):
        brute_force(tiny_instance(4, n_ships=4), OracleConfig(node_limit=3))
    with pytest.raises(OracleRefusal):
        brute_force(tiny_instance(4), OracleConfig(time_step=1.0))
    with pytest.raises(ValueError):
        OracleConfig(max_ships=5)


def _relabel(inst, perm):
    data = instance_to_dict(inst)
    for s in data["ships"]:
        s["id"] = perm[s["id"]]
    for c in data["port_calls"]:
        c["ship"] = perm[c["ship"]]
    data["ships"].reverse()
    return instance_from_dict(data)


@pytest.mark.parametrize("seed", range(4))
def test_relabel_symmetry(seed):
    inst = tiny_instance(seed, n_ships=3, externals=3)
    ids = [s.id for s in inst.ships]
    perm = dict(zip(ids, [100 + i for i in reversed(range(len(ids)))]))
    assert brute_force(_relabel(inst, perm)).objective == pytest.approx(brute_force(inst).objective, rel=1e-12)


def test_cache_round_trip(tmp_path):
    inst = tiny_instance(2)
    res = brute_force(inst)
    path = oracle_cache_path(tmp_path / "seed2.json")
    assert path.name == "seed2.oracle.json"
    write_oracle_cache(path, inst, res)
    obj, sol = read_oracle_cache(path)
    assert obj == res.objective and sol == res.solution
    path.write_text(json.dumps({"kind": "other"}))
    with pytest.raises(ValueError):
        read_oracle_cache(path)


# -- LP export ---------------------------------------------------------------------

def test_lp_single_call_counts(tmp_path):
    inst = make_instance([(1, "A", 30, 4, 5)])
    text = export_lp(inst, tmp_path / "m.lp")
    m = parse_lp((tmp_path / "m.lp").read_text())
    assert m == parse_lp(text)
    assert len(m.variables) == 7
    assert m.binaries == []
    assert sorted(m.variables) == sorted(f"{v}_1_1" for v in "xyhadur")


@pytest.mark.parametrize("n", [2, 3, 4])
def test_lp_speed_binaries(tmp_path, n):
    ports = tuple(Port(p, 100.0, 10.0) for p in "ABCD")
    inst = make_instance([(1, "ABCD"[k], 0, 20 * k, 2) for k in range(n)], ports=ports)
    m = parse_lp(export_lp(inst, tmp_path / "m.lp"))
    speed = [b for b in m.binaries if b.startswith("v_")]
    assert len(speed) == (n - 1) * len(inst.speed_levels)
    assert not [b for b in m.binaries if b.startswith(("sigma", "delta"))]


def test_lp_substitution_construction(inst30, tmp_path):
    sol = construct(inst30)
    m = parse_lp(export_lp(inst30, tmp_path / "m.lp"))
    rep = substitute_and_check(m, inst30, sol)
    assert rep.ok
    assert rep.objective == pytest.approx(evaluate(inst30, sol).total, rel=1e-6)


def test_lp_overlap_violates_pair_rows(tmp_path):
    inst = make_instance([(1, "A", 0, 0, 5), (2, "A", 0, 0, 5)])
    m = parse_lp(export_lp(inst, tmp_path / "m.lp"))
    sol = Solution({0: Assignment(0, 0, 0), 1: Assignment(1, 20, 1)})
    rep = substitute_and_check(m, inst, sol)
    assert rep.violated and all(name.startswith("sep_") for name, _ in rep.violated)
    ok = Solution({0: Assignment(0, 0, 0), 1: Assignment(1, 50, 1)})
    assert substitute_and_check(m, inst, ok).ok


def test_lp_dimension_mismatch(tmp_path):
    inst = make_instance([(1, "A", 0, 0, 5), (2, "A", 0, 0, 5)])
    text = export_lp(inst, tmp_path / "m.lp")
    with pytest.raises(ModelError):
        substitute_and_check(text, inst, Solution({0: Assignment(0, 0, 0)}))
    other = make_instance([(1, "A", 0, 0, 5), (2, "A", 0, 0, 5), (3, "A", 0, 0, 5)])
    bigger = export_lp(other, tmp_path / "o.lp")
    with pytest.raises(ValueError):
        substitute_and_check(bigger, inst, Solution({0: Assignment(0, 0, 0), 1: Assignment(1, 50, 0)}))


def _random_solution(inst, rng):
    """Grid solution, feasible or a near miss; legs sail the slowest speed that makes it."""
    base = random_feasible(inst, rng).pos
    out = {}
    for c in inst.port_calls:
        if rng.random() < 0.8:
            out[c.id] = list(base[c.id])
            continue
        port = inst.port(c.port)
        length = inst.ship_of(c.id).length
        nx = int((port.quay_length - length) // port.segment_length) + 1
        x = float(rng.integers(nx) * port.segment_length + (rng.random() < 0.05) * 7)
        y = float(c.est + inst.time_step * rng.integers(-1, 6))
        out[c.id] = [x, max(0.0, y)]
    sol = {}
    for c in inst.port_calls:
        nxt = inst.succ[c.id]
        speed = None
        if nxt is not None:
            beta = inst.cost_rates.deviation_factor
            h = (1 + beta * abs(out[c.id][0] - c.ideal_position)) * c.base_handling
            slack = out[nxt][1] - out[c.id][1] - h
            speed = len(inst.speed_levels) - 1
            for s, lv in enumerate(inst.speed_levels):
                if lv.time_per_distance * inst.leg_distance[c.id] <= slack + 1e-9:
                    speed = s
                    break
        sol[c.id] = Assignment(c.id, out[c.id][0], out[c.id][1], speed)
    return Solution(sol)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 400))
def test_lp_feasibility_equivalence(seed, tmp_path_factory):
    inst = tiny_instance(seed, externals=3)
    m = parse_lp(export_lp(inst, tmp_path_factory.mktemp("lp") / "m.lp"))
    rng = np.random.default_rng(seed)
    n_ok = 0
    for _ in range(100):
        sol = _random_solution(inst, rng)
        feas = check_feasibility(inst, sol) == []
        rep = substitute_and_check(m, inst, sol)
        assert rep.ok == feas, (rep.violated, check_feasibility(inst, sol))
        n_ok += feas
        assert rep.objective == pytest.approx(evaluate(inst, sol).total, rel=1e-6)
    assert 0 < n_ok < 100


@pytest.mark.parametrize("seed", [0, 1])
def test_highs_reproduces_oracle(seed, tmp_path):
    inst = tiny_instance(seed)
    res = brute_force(inst)
    status, obj, _ = solve_lp_highs(parse_lp(export_lp(inst, tmp_path / "m.lp", discretize=True)), 120)
    assert status == 0
    assert obj == pytest.approx(res.objective, rel=1e-6)
