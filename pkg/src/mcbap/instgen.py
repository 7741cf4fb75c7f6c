"""Seeded benchmark instance generator and JSON file formats.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` and is drawn
in a fixed order (ships, then their calls, then external berths port by port),
so a config always maps to the same instance.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .model import (CostRates, ExternalBerth, Instance, ModelError, Port, PortCall,
                    Ship, Solution, Assignment, SpeedLevel)

SCHEMA_VERSION = 1

# Terminal quays (m).
PORTS = {"NLRTM": 1600.0, "DEBRV": 1800.0, "DEHAM": 2100.0}

# Minimum handling time (h) per ship class and terminal.
MIN_HANDLING = {
    "feeder": {"DEHAM": 10.1, "DEBRV": 12.1, "NLRTM": 10.4},
    "medium": {"DEHAM": 18.0, "DEBRV": 21.8, "NLRTM": 18.4},
    "large": {"DEHAM": 41.0, "DEBRV": 33.7, "NLRTM": 26.7},
}

# Outlier thresholds on port service time (h).
MAX_SERVICE = {"feeder": 48.0, "medium": 72.0, "large": 96.0}

# Synthetic sea distances (nm).
DISTANCES = {("NLRTM", "DEBRV"): 260.0, ("DEBRV", "DEHAM"): 130.0, ("NLRTM", "DEHAM"): 320.0}

# Synthetic per-class design speed (kn) and fuel burn at design speed (t/nm).
CLASS_DESIGN = {"feeder": (19.0, 0.12), "medium": (21.0, 0.25), "large": (22.0, 0.40)}

SPEEDS = tuple(17.0 + 0.5 * k for k in range(10))

POSITION_BOUND = 4.02  # max deviation considered for h_max, in ship lengths
EXTERNAL_HOURS_PER_METER = 0.1
EXTERNAL_LENGTH = (180, 330)
EST_SLACK = 24.0


@dataclass(frozen=True)
class ShipPattern:
    route: Tuple[str, ...]
    ship_class: str
    length: float


PATTERNS = (
    ShipPattern(("NLRTM", "DEBRV", "DEHAM"), "large", 350.0),
    ShipPattern(("DEHAM", "DEBRV", "NLRTM"), "large", 330.0),
    ShipPattern(("NLRTM", "DEHAM"), "medium", 250.0),
    ShipPattern(("DEBRV", "NLRTM", "DEHAM"), "medium", 230.0),
    ShipPattern(("DEHAM", "DEBRV"), "feeder", 180.0),
    ShipPattern(("DEBRV", "NLRTM"), "feeder", 150.0),
)


class GenerationError(RuntimeError):
    pass


class InstanceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int
    n_ships: int
    n_external_per_port: int = 5
    segment_length: float = 10.0
    fuel_price: float = 500.0
    cost_rates: Optional[Dict[str, float]] = None  # overrides of CostRates fields
    ports: Optional[Tuple[str, ...]] = None  # subset of PORTS, default all three
    time_step: float = 1.0
    planning_window: Optional[float] = None  # first visits fall in its first third; default 3 x route_span

    def __post_init__(self):
        if self.n_ships <= 0:
            raise ValueError("n_ships must be positive")
        if self.n_external_per_port < 0:
            raise ValueError("n_external_per_port must be >= 0")
        if self.segment_length <= 0 or self.time_step <= 0:
            raise ValueError("grid steps must be positive")

    @property
    def group(self) -> str:
        return f"{self.n_ships}_{self.n_external_per_port}_{self.segment_length:g}"

    @property
    def name(self) -> str:
        return f"{self.group}/seed{self.seed}"


def _ceil_to(value: float, step: float) -> float:
    return math.ceil(value / step - 1e-9) * step


def h_max(base_handling: float, ship_length: float, beta: float) -> float:
    return (1.0 + beta * POSITION_BOUND * ship_length) * base_handling


def _patterns_for(ports: Tuple[str, ...]) -> List[ShipPattern]:
    out = []
    for pat in PATTERNS:
        route = tuple(p for p in pat.route if p in ports)
        if route:
            out.append(ShipPattern(route, pat.ship_class, pat.length))
    return out


def route_span(patterns: Iterable[ShipPattern], beta: float) -> float:
    """Longest time from a first EST to the last LFT of any pattern."""
    best = 0.0
    for pat in patterns:
        t = 0.0
        for port, nxt in zip(pat.route, pat.route[1:] + (None,)):
            h0 = MIN_HANDLING[pat.ship_class][port]
            if nxt is None:
                t += h0 + (h_max(h0, pat.length, beta) - h0) / 2.0
            else:
                dist = DISTANCES.get((port, nxt)) or DISTANCES[(nxt, port)]
                t += h0 + dist / min(SPEEDS) + EST_SLACK
        best = max(best, t)
    return best


def generate(config: GeneratorConfig) -> Instance:
    rng = np.random.Generator(np.random.PCG64(config.seed))
    port_ids = tuple(config.ports) if config.ports else tuple(PORTS)
    for p in port_ids:
        if p not in PORTS:
            raise ValueError(f"unknown port {p}")
    rate_kw = {"fuel_price": config.fuel_price}
    rate_kw.update(config.cost_rates or {})
    rates = CostRates(**rate_kw)
    ts = config.time_step
    slowest = min(SPEEDS)
    patterns = _patterns_for(port_ids)
    # horizon ~ 1.5 x max LFT ~ 1.5 x (window/3 + span) has its fixed point at window = 3 x span
    window = config.planning_window or 3.0 * route_span(patterns, rates.deviation_factor)

    ships, calls = [], []
    cid = 0
    for sid in range(1, config.n_ships + 1):
        pat = patterns[int(rng.integers(len(patterns)))]
        sd, fd = CLASS_DESIGN[pat.ship_class]
        route = []
        est = None
        prev_port = prev_eft = None
        for k, port in enumerate(pat.route, start=1):
            quay = PORTS[port]
            ideal = float(round(rng.uniform(0.0, quay - pat.length)))
            if est is None:
                est = float(rng.integers(0, max(1, int(window / 3 / ts)))) * ts
            else:
                travel = DISTANCES.get((prev_port, port)) or DISTANCES[(port, prev_port)]
                est = _ceil_to(prev_eft + travel / slowest + rng.uniform(0.0, EST_SLACK), ts)
            h0 = MIN_HANDLING[pat.ship_class][port]
            eft = est + h0
            lft = eft + (h_max(h0, pat.length, rates.deviation_factor) - h0) / 2.0
            calls.append(PortCall(id=cid, ship_id=sid, call_index=k, port=port,
                                  ideal_position=ideal, est=est, eft=eft, lft=lft,
                                  base_handling=h0))
            route.append(cid)
            cid += 1
            prev_port, prev_eft = port, eft
        ships.append(Ship(id=sid, length=pat.length, ship_class=pat.ship_class,
                          design_speed=sd, design_fuel_rate=fd, route=tuple(route)))

    externals = []
    for port in port_ids:
        quay = PORTS[port]
        placed: List[ExternalBerth] = []
        for _ in range(config.n_external_per_port):
            for _attempt in range(1000):
                length = float(rng.integers(EXTERNAL_LENGTH[0], EXTERNAL_LENGTH[1] + 1))
                duration = round(EXTERNAL_HOURS_PER_METER * length, 6)
                pos = float(rng.integers(0, int(quay - length) + 1))
                start = float(rng.integers(0, max(1, int(window / ts)))) * ts
                cand = ExternalBerth(port, pos, start, duration, length)
                if not any(_ext_overlap(cand, e) for e in placed):
                    placed.append(cand)
                    break
            else:
                raise GenerationError(f"could not place external berths at {port}")
        externals.extend(placed)

    speed_levels = tuple(SpeedLevel.from_speed(s, CLASS_DESIGN) for s in SPEEDS)
    ports = tuple(Port(p, PORTS[p], float(config.segment_length)) for p in port_ids)
    dists = {k: v for k, v in DISTANCES.items() if k[0] in port_ids and k[1] in port_ids}
    # externals may outlast every LFT on small instances; keep them inside the horizon
    horizon = 1.5 * max([c.lft for c in calls] + [e.start + e.duration for e in externals])
    horizon = max(horizon, serial_bound(calls, ships, externals, rates.deviation_factor, ts))
    return Instance(ports=ports, ships=tuple(ships), port_calls=tuple(calls),
                    external_berths=tuple(externals), speed_levels=speed_levels,
                    distances=dists, cost_rates=rates, horizon=horizon,
                    time_step=float(ts), name=config.name)


def serial_bound(calls, ships, externals, beta: float, ts: float) -> float:
    """Latest start of a schedule that berths every call alone, one after another,
    after all EST and external berths; some plan always fits below this."""
    ship = {s.id: s for s in ships}
    t = _ceil_to(max([c.est for c in calls] + [e.start + e.duration for e in externals]), ts)
    prev_port = {}
    for c in sorted(calls, key=lambda c: (c.call_index, c.ship_id)):
        length = ship[c.ship_id].length
        dev = max(c.ideal_position, PORTS[c.port] - length - c.ideal_position)
        pp = prev_port.get(c.ship_id)
        if pp is not None:
            dist = DISTANCES.get((pp, c.port)) or DISTANCES[(c.port, pp)]
            t += _ceil_to(dist / min(SPEEDS), ts)
        t += _ceil_to((1.0 + beta * dev) * c.base_handling, ts) + ts
        prev_port[c.ship_id] = c.port
    return t


def _ext_overlap(a: ExternalBerth, b: ExternalBerth) -> bool:
    return (a.position < b.position + b.length and b.position < a.position + a.length
            and a.start < b.start + b.duration and b.start < a.start + a.duration)


def benchmark_grid(kind: str) -> List[GeneratorConfig]:
    if kind == "main":
        seeds, ships, ext = range(1, 11), (30, 50, 70), (5, 10)
    elif kind == "small":
        seeds, ships, ext = range(1, 6), range(4, 16), (3, 4, 5)
    else:
        raise ValueError(f"unknown grid kind {kind!r}")
    return [GeneratorConfig(seed=s, n_ships=n, n_external_per_port=e, segment_length=float(z))
            for n, e, z, s in itertools.product(ships, ext, (10, 20, 40, 80), seeds)]


# -- JSON formats -------------------------------------------------------------

UNITS = {"time": "hours", "length": "meters", "distance": "nautical miles",
         "speed": "knots", "cost": "USD", "fuel": "tonnes"}


def instance_to_dict(inst: Instance) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "mcbap-instance",
        "name": inst.name,
        "units": UNITS,
        "horizon_h": inst.horizon,
        "time_step_h": inst.time_step,
        "cost_rates": asdict(inst.cost_rates),
        "ports": [{"id": p.id, "quay_length_m": p.quay_length, "segment_length_m": p.segment_length}
                  for p in inst.ports],
        "distances_nm": [{"from": a, "to": b, "nm": d} for (a, b), d in sorted(inst.distances.items())],
        "speed_levels": [{"speed_kn": s.speed, "time_per_nm_h": s.time_per_distance,
                          "fuel_t_per_nm": dict(sorted(s.fuel_per_distance.items()))}
                         for s in inst.speed_levels],
        "ships": [{"id": s.id, "length_m": s.length, "class": s.ship_class,
                   "design_speed_kn": s.design_speed, "design_fuel_t_per_nm": s.design_fuel_rate,
                   "route": list(s.route)} for s in inst.ships],
        "port_calls": [{"id": c.id, "ship": c.ship_id, "call_index": c.call_index, "port": c.port,
                        "ideal_position_m": c.ideal_position, "est_h": c.est, "eft_h": c.eft,
                        "lft_h": c.lft, "base_handling_h": c.base_handling}
                       for c in inst.port_calls],
        "external_berths": [{"port": e.port, "position_m": e.position, "start_h": e.start,
                             "duration_h": e.duration, "length_m": e.length}
                            for e in inst.external_berths],
    }


class _Reader:
    """Field access with path context for error messages."""

    def __init__(self, source: str):
        self.source = source

    def get(self, obj, key, path, kind=None):
        if not isinstance(obj, dict):
            raise InstanceFormatError(f"{self.source}: {path} must be an object")
        if key not in obj:
            raise InstanceFormatError(f"{self.source}: missing field {path}.{key}".replace("$.", ""))
        val = obj[key]
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise InstanceFormatError(f"{self.source}: field {path}.{key} must be a number")
            return float(val)
        if kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise InstanceFormatError(f"{self.source}: field {path}.{key} must be an integer")
            return val
        if kind is list and not isinstance(val, list):
            raise InstanceFormatError(f"{self.source}: field {path}.{key} must be a list")
        if kind is str and not isinstance(val, str):
            raise InstanceFormatError(f"{self.source}: field {path}.{key} must be a string")
        return val


def _load_json(text: str, source: str, kind: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise InstanceFormatError(f"{source}: top level must be an object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InstanceFormatError(f"{source}: unsupported schema_version {version!r} "
                                  f"(expected {SCHEMA_VERSION})")
    if data.get("kind") != kind:
        raise InstanceFormatError(f"{source}: expected kind {kind!r}, got {data.get('kind')!r}")
    return data


def instance_from_dict(data: dict, source: str = "<instance>") -> Instance:
    r = _Reader(source)
    g = r.get
    rates_d = g(data, "cost_rates", "$")
    try:
        rates = CostRates(**{k: float(v) for k, v in rates_d.items()})
    except TypeError as exc:
        raise InstanceFormatError(f"{source}: bad cost_rates: {exc}") from exc
    ports = tuple(Port(g(p, "id", f"ports[{i}]", str), g(p, "quay_length_m", f"ports[{i}]", float),
                       g(p, "segment_length_m", f"ports[{i}]", float))
                  for i, p in enumerate(g(data, "ports", "$", list)))
    dists = {}
    for i, d in enumerate(g(data, "distances_nm", "$", list)):
        pth = f"distances_nm[{i}]"
        dists[(g(d, "from", pth, str), g(d, "to", pth, str))] = g(d, "nm", pth, float)
    levels = []
    for i, s in enumerate(g(data, "speed_levels", "$", list)):
        pth = f"speed_levels[{i}]"
        fuel = g(s, "fuel_t_per_nm", pth)
        levels.append(SpeedLevel(g(s, "speed_kn", pth, float), g(s, "time_per_nm_h", pth, float),
                                 {k: float(v) for k, v in fuel.items()}))
    ships = []
    for i, s in enumerate(g(data, "ships", "$", list)):
        pth = f"ships[{i}]"
        ships.append(Ship(g(s, "id", pth, int), g(s, "length_m", pth, float), g(s, "class", pth, str),
                          g(s, "design_speed_kn", pth, float), g(s, "design_fuel_t_per_nm", pth, float),
                          tuple(g(s, "route", pth, list))))
    calls = []
    for i, c in enumerate(g(data, "port_calls", "$", list)):
        pth = f"port_calls[{i}]"
        calls.append(PortCall(g(c, "id", pth, int), g(c, "ship", pth, int), g(c, "call_index", pth, int),
                              g(c, "port", pth, str), g(c, "ideal_position_m", pth, float),
                              g(c, "est_h", pth, float), g(c, "eft_h", pth, float),
                              g(c, "lft_h", pth, float), g(c, "base_handling_h", pth, float)))
    exts = []
    for i, e in enumerate(g(data, "external_berths", "$", list)):
        pth = f"external_berths[{i}]"
        exts.append(ExternalBerth(g(e, "port", pth, str), g(e, "position_m", pth, float),
                                  g(e, "start_h", pth, float), g(e, "duration_h", pth, float),
                                  g(e, "length_m", pth, float)))
    try:
        return Instance(ports=ports, ships=tuple(ships), port_calls=tuple(calls),
                        external_berths=tuple(exts), speed_levels=tuple(levels), distances=dists,
                        cost_rates=rates, horizon=g(data, "horizon_h", "$", float),
                        time_step=g(data, "time_step_h", "$", float), name=data.get("name", ""))
    except ModelError as exc:
        raise InstanceFormatError(f"{source}: {exc}") from exc


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1, sort_keys=True) + "\n"


def write_instance(inst: Instance, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_instance(inst), encoding="utf-8")
    return path


def read_instance(path) -> Instance:
    path = Path(path)
    data = _load_json(path.read_text(encoding="utf-8"), str(path), "mcbap-instance")
    return instance_from_dict(data, str(path))


def solution_to_dict(inst: Instance, sol: Solution, extra: Optional[dict] = None) -> dict:
    rows = []
    for cid in sorted(sol.assignments):
        a = sol[cid]
        call = inst.call(cid)
        rows.append({"call": cid, "ship": call.ship_id, "call_index": call.call_index,
                     "berth_position_m": a.berth_position, "berth_start_h": a.berth_start,
                     "leg_speed": a.leg_speed})
    out = {"schema_version": SCHEMA_VERSION, "kind": "mcbap-solution", "instance": inst.name,
           "assignments": rows}
    if extra:
        out.update(extra)
    return out


def write_solution(inst: Instance, sol: Solution, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(solution_to_dict(inst, sol, extra), indent=1, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def read_solution(path) -> Solution:
    path = Path(path)
    data = _load_json(path.read_text(encoding="utf-8"), str(path), "mcbap-solution")
    return solution_from_dict(data, str(path))


def solution_from_dict(data: dict, path: str = "<solution>") -> Solution:
    r = _Reader(path)
    out = {}
    for i, row in enumerate(r.get(data, "assignments", "$", list)):
        pth = f"assignments[{i}]"
        speed = row.get("leg_speed") if isinstance(row, dict) else None
        if speed is not None and (isinstance(speed, bool) or not isinstance(speed, int)):
            raise InstanceFormatError(f"{path}: field {pth}.leg_speed must be an integer or null")
        cid = r.get(row, "call", pth, int)
        out[cid] = Assignment(cid, r.get(row, "berth_position_m", pth, float),
                              r.get(row, "berth_start_h", pth, float), speed)
    return Solution(out)


def write_grid(kind: str, root, configs: Optional[Iterable[GeneratorConfig]] = None) -> List[Path]:
    root = Path(root)
    paths = []
    for cfg in configs if configs is not None else benchmark_grid(kind):
        paths.append(write_instance(generate(cfg), root / kind / cfg.group / f"seed{cfg.seed}.json"))
    return paths
