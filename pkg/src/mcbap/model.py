"""Domain types, cost evaluation and feasibility checking for the multi-port
continuous berth allocation problem.

Units throughout: hours, meters, nautical miles, knots, USD, tonnes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np

EPS = 1e-7
SHIP_CLASSES = ("feeder", "medium", "large")


class ModelError(ValueError):
    """Raised on domain violations (bad positions, incomplete solutions...)."""


@dataclass(frozen=True)
class Port:
    id: str
    quay_length: float
    segment_length: float

    def __post_init__(self):
        if self.quay_length <= 0 or self.segment_length <= 0:
            raise ModelError(f"port {self.id}: lengths must be positive")
        if self.segment_length > self.quay_length:
            raise ModelError(f"port {self.id}: segment longer than quay")


@dataclass(frozen=True)
class SpeedLevel:
    speed: float  # knots
    time_per_distance: float  # h/nm
    fuel_per_distance: Dict[str, float]  # tonnes/nm per ship class

    @classmethod
    def from_speed(cls, speed: float, class_design: Dict[str, Tuple[float, float]]) -> "SpeedLevel":
        """Build a level from the cubic law; ``class_design`` maps class -> (s_d, F_d)."""
        fuel = {k: (speed / sd) ** 3 * fd for k, (sd, fd) in class_design.items()}
        return cls(speed=speed, time_per_distance=1.0 / speed, fuel_per_distance=fuel)


@dataclass(frozen=True)
class Ship:
    id: int
    length: float
    ship_class: str
    design_speed: float
    design_fuel_rate: float  # tonnes/nm at design speed
    route: Tuple[int, ...]  # port call ids in visiting order


@dataclass(frozen=True)
class PortCall:
    id: int
    ship_id: int
    call_index: int  # 1-based position in the route
    port: str
    ideal_position: float
    est: float
    eft: float
    lft: float
    base_handling: float

    @property
    def name(self) -> str:
        return f"{self.ship_id}_{self.call_index}"


@dataclass(frozen=True)
class ExternalBerth:
    port: str
    position: float
    start: float
    duration: float
    length: float


@dataclass(frozen=True)
class CostRates:
    fuel_price: float = 500.0
    handling_rate: float = 1000.0
    delay_rate: float = 2000.0
    waiting_rate: float = 500.0
    lft_penalty_rate: float = 10000.0
    deviation_factor: float = 0.001

    def __post_init__(self):
        for name in ("fuel_price", "handling_rate", "delay_rate", "waiting_rate",
                     "lft_penalty_rate", "deviation_factor"):
            if getattr(self, name) < 0:
                raise ModelError(f"cost rate {name} must be >= 0")


@dataclass(frozen=True)
class Instance:
    ports: Tuple[Port, ...]
    ships: Tuple[Ship, ...]
    port_calls: Tuple[PortCall, ...]
    external_berths: Tuple[ExternalBerth, ...]
    speed_levels: Tuple[SpeedLevel, ...]  # sorted by increasing speed
    distances: Dict[Tuple[str, str], float]
    cost_rates: CostRates
    horizon: float
    time_step: float = 1.0
    name: str = ""

    def __post_init__(self):
        if not self.speed_levels:
            raise ModelError("at least one speed level is required")
        speeds = [s.speed for s in self.speed_levels]
        if speeds != sorted(speeds) or len(set(speeds)) != len(speeds):
            raise ModelError("speed levels must be strictly increasing")
        ports = {p.id for p in self.ports}
        calls = {c.id: c for c in self.port_calls}
        for ship in self.ships:
            if ship.length <= 0:
                raise ModelError(f"ship {ship.id}: length must be positive")
            if not ship.route:
                raise ModelError(f"ship {ship.id}: empty route")
            prev = None
            for k, cid in enumerate(ship.route, start=1):
                call = calls.get(cid)
                if call is None or call.ship_id != ship.id or call.call_index != k:
                    raise ModelError(f"ship {ship.id}: inconsistent route at call {k}")
                if call.port not in ports:
                    raise ModelError(f"call {call.name}: unknown port {call.port}")
                if prev is not None and prev == call.port:
                    raise ModelError(f"ship {ship.id}: consecutive calls at {call.port}")
                prev = call.port
        for e in self.external_berths:
            if e.port not in ports:
                raise ModelError(f"external berth at unknown port {e.port}")

    # -- lookups -----------------------------------------------------------

    @cached_property
    def _port_map(self) -> Dict[str, Port]:
        return {p.id: p for p in self.ports}

    @cached_property
    def _ship_map(self) -> Dict[int, Ship]:
        return {s.id: s for s in self.ships}

    @cached_property
    def _call_map(self) -> Dict[int, PortCall]:
        return {c.id: c for c in self.port_calls}

    def port(self, pid: str) -> Port:
        return self._port_map[pid]

    def ship(self, sid: int) -> Ship:
        return self._ship_map[sid]

    def call(self, cid: int) -> PortCall:
        return self._call_map[cid]

    def ship_of(self, cid: int) -> Ship:
        return self._ship_map[self._call_map[cid].ship_id]

    def distance(self, p: str, q: str) -> float:
        if p == q:
            return 0.0
        d = self.distances.get((p, q))
        if d is None:
            d = self.distances[(q, p)]
        return d

    @cached_property
    def pred(self) -> Dict[int, Optional[int]]:
        out = {}
        for ship in self.ships:
            for k, cid in enumerate(ship.route):
                out[cid] = ship.route[k - 1] if k > 0 else None
        return out

    @cached_property
    def succ(self) -> Dict[int, Optional[int]]:
        out = {}
        for ship in self.ships:
            for k, cid in enumerate(ship.route):
                out[cid] = ship.route[k + 1] if k + 1 < len(ship.route) else None
        return out

    @cached_property
    def calls_at_port(self) -> Dict[str, List[int]]:
        out: Dict[str, List[int]] = {p.id: [] for p in self.ports}
        for c in self.port_calls:
            out[c.port].append(c.id)
        return out

    @cached_property
    def externals_at_port(self) -> Dict[str, List[ExternalBerth]]:
        out: Dict[str, List[ExternalBerth]] = {p.id: [] for p in self.ports}
        for e in self.external_berths:
            out[e.port].append(e)
        return out

    @cached_property
    def leg_distance(self) -> Dict[int, float]:
        """Distance of the leg departing each non-final call."""
        out = {}
        for cid, nxt in self.succ.items():
            if nxt is not None:
                out[cid] = self.distance(self.call(cid).port, self.call(nxt).port)
        return out

    @cached_property
    def leg_tables(self) -> Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per departing leg: (travel hours, fuel cost USD, speed index), fastest first."""
        out = {}
        order = np.arange(len(self.speed_levels))[::-1]
        for cid, dist in self.leg_distance.items():
            ship = self.ship_of(cid)
            times = np.array([self.speed_levels[k].time_per_distance * dist for k in order])
            fuel = np.array([leg_fuel_cost(ship, self.speed_levels[k], dist, self.cost_rates)
                             for k in order])
            out[cid] = (times, fuel, order.copy())
        return out

    @property
    def n_calls(self) -> int:
        return len(self.port_calls)


@dataclass(frozen=True)
class Assignment:
    call_id: int
    berth_position: float
    berth_start: float
    leg_speed: Optional[int] = None  # index into Instance.speed_levels


@dataclass
class Solution:
    assignments: Dict[int, Assignment] = field(default_factory=dict)

    def __getitem__(self, cid: int) -> Assignment:
        return self.assignments[cid]

    def __contains__(self, cid: int) -> bool:
        return cid in self.assignments

    def __len__(self) -> int:
        return len(self.assignments)


@dataclass(frozen=True)
class CostBreakdown:
    waiting: float = 0.0
    handling: float = 0.0
    delay: float = 0.0
    lft_penalty: float = 0.0
    fuel: float = 0.0

    @property
    def total(self) -> float:
        return self.waiting + self.handling + self.delay + self.lft_penalty + self.fuel

    def as_dict(self) -> Dict[str, float]:
        return {"waiting": self.waiting, "handling": self.handling, "delay": self.delay,
                "lft_penalty": self.lft_penalty, "fuel": self.fuel, "total": self.total}


@dataclass(frozen=True)
class Violation:
    kind: str  # quay | overlap | arrival | est | horizon | speed | missing
    calls: Tuple[str, ...]
    message: str


# -- elementary formulas ------------------------------------------------------

def handling_time(call: PortCall, berth_position: float, rates: CostRates,
                  ship_length: Optional[float] = None, quay_length: Optional[float] = None) -> float:
    """(1 + beta*|x - x0|) * h0.

    When ``ship_length`` and ``quay_length`` are given the position is checked
    against the quay.
    """
    if berth_position < -EPS:
        raise ModelError(f"call {call.name}: berth position {berth_position} < 0")
    if ship_length is not None and quay_length is not None:
        if berth_position + ship_length > quay_length + EPS:
            raise ModelError(f"call {call.name}: berth position {berth_position} exceeds quay")
    dev = abs(berth_position - call.ideal_position)
    return (1.0 + rates.deviation_factor * dev) * call.base_handling


def leg_fuel_cost(ship: Ship, speed: SpeedLevel, distance: float, rates: CostRates) -> float:
    ratio = speed.speed / ship.design_speed
    return rates.fuel_price * ratio ** 3 * ship.design_fuel_rate * distance


def arrival_time(prev: Assignment, prev_handling: float, distance: float,
                 speed_levels: Tuple[SpeedLevel, ...]) -> float:
    """Arrival at the next port: berth start + handling + sailing time."""
    if prev.leg_speed is None:
        raise ModelError(f"call {prev.call_id}: no leg speed on a non-final call")
    return prev.berth_start + prev_handling + speed_levels[prev.leg_speed].time_per_distance * distance


def gap(z_obj: float, z_best: float) -> float:
    if z_best <= 0:
        raise ModelError("gap requires a positive reference objective")
    return (z_obj - z_best) / z_best


# -- solution-level evaluation ------------------------------------------------

def _require_complete(instance: Instance, solution: Solution) -> None:
    missing = [c.name for c in instance.port_calls if c.id not in solution.assignments]
    if missing:
        raise ModelError("incomplete solution, missing calls: " + ", ".join(missing))


def call_handling(instance: Instance, solution: Solution, cid: int) -> float:
    return handling_time(instance.call(cid), solution[cid].berth_position, instance.cost_rates)


def call_arrival(instance: Instance, solution: Solution, cid: int) -> float:
    """Arrival time; the first call of a route arrives when it berths."""
    prev = instance.pred[cid]
    if prev is None:
        return solution[cid].berth_start
    return arrival_time(solution[prev], call_handling(instance, solution, prev),
                        instance.leg_distance[prev], instance.speed_levels)


def call_details(instance: Instance, solution: Solution) -> Dict[int, Dict[str, float]]:
    """Derived handling, arrival, delay and LFT excess per call."""
    out = {}
    for call in instance.port_calls:
        a = solution[call.id]
        h = call_handling(instance, solution, call.id)
        end = a.berth_start + h
        out[call.id] = {
            "handling": h,
            "arrival": call_arrival(instance, solution, call.id),
            "delay": max(0.0, end - call.eft),
            "lft_excess": max(0.0, end - call.lft),
        }
    return out


def evaluate(instance: Instance, solution: Solution) -> CostBreakdown:
    _require_complete(instance, solution)
    r = instance.cost_rates
    waiting = handling = delay = penalty = fuel = 0.0
    for call in instance.port_calls:
        a = solution[call.id]
        h = call_handling(instance, solution, call.id)
        end = a.berth_start + h
        waiting += r.waiting_rate * (a.berth_start - call_arrival(instance, solution, call.id))
        handling += r.handling_rate * h
        delay += r.delay_rate * max(0.0, end - call.eft)
        penalty += r.lft_penalty_rate * max(0.0, end - call.lft)
        if instance.succ[call.id] is not None and a.leg_speed is not None:
            fuel += leg_fuel_cost(instance.ship(call.ship_id), instance.speed_levels[a.leg_speed],
                                  instance.leg_distance[call.id], r)
    return CostBreakdown(waiting=waiting, handling=handling, delay=delay,
                         lft_penalty=penalty, fuel=fuel)


def port_visit_cost(instance: Instance, solution: Solution, cid: int) -> float:
    """Waiting, handling and delay cost of one visit plus half the fuel of its adjacent legs."""
    r = instance.cost_rates
    call = instance.call(cid)
    a = solution[cid]
    h = call_handling(instance, solution, cid)
    cost = r.handling_rate * h + r.delay_rate * max(0.0, a.berth_start + h - call.eft)
    cost += r.waiting_rate * (a.berth_start - call_arrival(instance, solution, cid))
    ship = instance.ship(call.ship_id)
    legs = 0.0
    prev = instance.pred[cid]
    if prev is not None and prev in solution and solution[prev].leg_speed is not None:
        legs += leg_fuel_cost(ship, instance.speed_levels[solution[prev].leg_speed],
                              instance.leg_distance[prev], r)
    if instance.succ[cid] is not None and a.leg_speed is not None:
        legs += leg_fuel_cost(ship, instance.speed_levels[a.leg_speed], instance.leg_distance[cid], r)
    return cost + legs / 2.0


# -- feasibility --------------------------------------------------------------

def rects_overlap(x1, l1, y1, h1, x2, l2, y2, h2) -> bool:
    """Closed-open rectangles overlap in both space and time; touching edges do not."""
    return (x1 < x2 + l2 - EPS and x2 < x1 + l1 - EPS
            and y1 < y2 + h2 - EPS and y2 < y1 + h1 - EPS)


def check_feasibility(instance: Instance, solution: Solution) -> List[Violation]:
    out: List[Violation] = []
    missing = [c.name for c in instance.port_calls if c.id not in solution.assignments]
    if missing:
        return [Violation("missing", tuple(missing), "calls without assignment")]
    n_speeds = len(instance.speed_levels)
    rects: Dict[str, List[Tuple[str, float, float, float, float, bool]]] = {
        p.id: [] for p in instance.ports}
    for e in instance.external_berths:
        rects[e.port].append((f"ext@{e.position:g},{e.start:g}", e.position, e.length,
                              e.start, e.duration, True))

    for call in instance.port_calls:
        a = solution[call.id]
        ship = instance.ship(call.ship_id)
        quay = instance.port(call.port).quay_length
        if a.berth_position < -EPS or a.berth_position + ship.length > quay + EPS:
            out.append(Violation("quay", (call.name,),
                                 f"position {a.berth_position:g} outside quay of {quay:g} m"))
        last = instance.succ[call.id] is None
        if last and a.leg_speed is not None:
            out.append(Violation("speed", (call.name,), "final call must not carry a leg speed"))
        if not last and (a.leg_speed is None or not 0 <= a.leg_speed < n_speeds):
            out.append(Violation("speed", (call.name,), "non-final call needs exactly one speed"))
        if a.berth_start < call.est - EPS:
            out.append(Violation("est", (call.name,),
                                 f"start {a.berth_start:g} before EST {call.est:g}"))
        if a.berth_start > instance.horizon + EPS:
            out.append(Violation("horizon", (call.name,),
                                 f"start {a.berth_start:g} after horizon {instance.horizon:g}"))
        prev = instance.pred[call.id]
        if prev is not None and solution[prev].leg_speed is not None \
                and 0 <= solution[prev].leg_speed < n_speeds:
            arr = call_arrival(instance, solution, call.id)
            if a.berth_start < arr - EPS:
                out.append(Violation("arrival", (call.name,),
                                     f"start {a.berth_start:g} before arrival {arr:g}"))
        h = handling_time(call, a.berth_position, instance.cost_rates)
        rects[call.port].append((call.name, a.berth_position, ship.length, a.berth_start, h, False))

    for port, items in rects.items():
        for i in range(len(items)):
            ni, xi, li, yi, hi, exti = items[i]
            for j in range(i + 1, len(items)):
                nj, xj, lj, yj, hj, extj = items[j]
                if exti and extj:
                    continue
                if rects_overlap(xi, li, yi, hi, xj, lj, yj, hj):
                    out.append(Violation("overlap", (ni, nj), f"berths overlap at {port}"))
    return out


def is_feasible(instance: Instance, solution: Solution) -> bool:
    return not check_feasibility(instance, solution)


def mean_leg_speed(instance: Instance, solution: Solution) -> float:
    speeds = [instance.speed_levels[a.leg_speed].speed
              for a in solution.assignments.values() if a.leg_speed is not None]
    return float(np.mean(speeds)) if speeds else math.nan
