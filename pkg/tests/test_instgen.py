import json

import pytest
from hypothesis import given, settings, strategies as st

from mcbap.instgen import (MAX_SERVICE, PATTERNS, PORTS, GeneratorConfig, InstanceFormatError,
                           benchmark_grid, dumps_instance, generate, h_max, read_instance,
                           read_solution, write_grid, write_instance, write_solution)
from mcbap.construct import construct
from mcbap.model import evaluate


def test_deterministic_bytes():
    cfg = GeneratorConfig(seed=7, n_ships=30)
    assert dumps_instance(generate(cfg)) == dumps_instance(generate(cfg))
    assert dumps_instance(generate(cfg)) != dumps_instance(generate(GeneratorConfig(seed=8, n_ships=30)))


def test_large_rotterdam_handling():
    inst = generate(GeneratorConfig(seed=1, n_ships=50))
    hs = {c.base_handling for c in inst.port_calls
          if c.port == "NLRTM" and inst.ship(c.ship_id).ship_class == "large"}
    assert hs == {26.7}


def test_speed_set():
    inst = generate(GeneratorConfig(seed=1, n_ships=5))
    assert [lv.speed for lv in inst.speed_levels] == [17.0 + 0.5 * k for k in range(10)]


def test_ports_and_patterns():
    inst = generate(GeneratorConfig(seed=2, n_ships=40))
    assert {p.id: p.quay_length for p in inst.ports} == PORTS
    assert len(PATTERNS) == 6
    for s in inst.ships:
        assert 2 <= len(s.route) <= 3 and len(set(s.route)) == len(s.route)


def test_grid_sizes():
    main = benchmark_grid("main")
    small = benchmark_grid("small")
    assert len(main) == 240 and len(small) == 720
    assert {c.n_ships for c in main} == {30, 50, 70}
    assert {c.n_ships for c in small} == set(range(4, 16))
    assert len({c.name for c in main}) == 240
    assert "30_5_10" in {c.group for c in main}
    with pytest.raises(ValueError):
        benchmark_grid("huge")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 40), ext=st.integers(0, 6),
       seg=st.sampled_from([10.0, 20.0, 40.0, 80.0]))
def test_generated_invariants(seed, n, ext, seg):
    inst = generate(GeneratorConfig(seed=seed, n_ships=n, n_external_per_port=ext, segment_length=seg))
    beta = inst.cost_rates.deviation_factor
    for c in inst.port_calls:
        ship = inst.ship(c.ship_id)
        assert c.eft - c.est == pytest.approx(c.base_handling)
        assert c.lft - c.eft == pytest.approx((h_max(c.base_handling, ship.length, beta) - c.base_handling) / 2)
        assert c.base_handling <= MAX_SERVICE[ship.ship_class]
        assert 0 <= c.ideal_position <= inst.port(c.port).quay_length - ship.length
    for port in inst.externals_at_port:
        es = inst.externals_at_port[port]
        assert len(es) == ext
        for i in range(len(es)):
            assert 180 <= es[i].length <= 330
            for j in range(i):
                a, b = es[i], es[j]
                sep = (a.position + a.length <= b.position + 1e-7 or b.position + b.length <= a.position + 1e-7
                       or a.start + a.duration <= b.start + 1e-7 or b.start + b.duration <= a.start + 1e-7)
                assert sep


def test_round_trip(tmp_path):
    inst = generate(GeneratorConfig(seed=4, n_ships=6, n_external_per_port=3))
    p = write_instance(inst, tmp_path / "i.json")
    back = read_instance(p)
    assert back == inst
    sol = construct(inst)
    write_solution(inst, sol, tmp_path / "s.json")
    assert read_solution(tmp_path / "s.json") == sol
    assert evaluate(back, read_solution(tmp_path / "s.json")).total == evaluate(inst, sol).total


def test_truncated_file(tmp_path):
    inst = generate(GeneratorConfig(seed=4, n_ships=3))
    text = dumps_instance(inst)
    p = tmp_path / "t.json"
    p.write_text(text[: len(text) // 2])
    with pytest.raises(InstanceFormatError, match="line"):
        read_instance(p)


def test_bad_version_and_missing_field(tmp_path):
    inst = generate(GeneratorConfig(seed=4, n_ships=3))
    data = json.loads(dumps_instance(inst))
    data["schema_version"] = 99
    p = tmp_path / "v.json"
    p.write_text(json.dumps(data))
    with pytest.raises(InstanceFormatError, match="schema_version"):
        read_instance(p)
    data["schema_version"] = 1
    del data["port_calls"][0]["est_h"]
    p.write_text(json.dumps(data))
    with pytest.raises(InstanceFormatError, match=r"port_calls\[0\]\.est_h"):
        read_instance(p)


def test_write_grid_layout(tmp_path):
    cfgs = benchmark_grid("main")[:3]
    paths = write_grid("main", tmp_path, cfgs)
    assert [p.relative_to(tmp_path).as_posix() for p in paths] == [
        f"main/{c.group}/seed{c.seed}.json" for c in cfgs]


def test_config_invariants():
    with pytest.raises(ValueError):
        GeneratorConfig(seed=1, n_ships=0)


def test_horizon_covers_serial_schedule():
    from mcbap.instgen import serial_bound
    inst = generate(GeneratorConfig(seed=5, n_ships=10))
    assert inst.horizon >= 1.5 * max(c.lft for c in inst.port_calls)
    assert inst.horizon == max(1.5 * max([c.lft for c in inst.port_calls]
                                         + [e.start + e.duration for e in inst.external_berths]),
                               serial_bound(inst.port_calls, inst.ships, inst.external_berths,
                                            inst.cost_rates.deviation_factor, inst.time_step))
