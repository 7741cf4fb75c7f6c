"""Partial berth plans and the grid scan shared by construction and repair.

A port call is placed on the discrete decision space: left edge on the port's
segment grid, berth start on the instance time grid.  Leg speeds are never
stored here; every leg between two placed calls sails at the slowest speed
that still arrives in time, which is optimal for fixed berth starts (a slower
speed burns less fuel and waits less).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .model import EPS, Assignment, Instance, ModelError, Solution


@dataclass
class Candidates:
    """Placement options for one call, best first."""
    x: np.ndarray
    y: np.ndarray
    cost: np.ndarray
    col: np.ndarray  # index of x on the segment grid

    def __len__(self) -> int:
        return len(self.cost)


class PartialSolution:
    """Mutable berth plan over a subset of port calls."""

    def __init__(self, instance: Instance, positions: Optional[Dict[int, Tuple[float, float]]] = None):
        self.instance = instance
        self.pos: Dict[int, Tuple[float, float]] = {}
        self.hand: Dict[int, float] = {}
        self.ordered: set = set()
        self._arrays: Dict[str, Optional[np.ndarray]] = {p.id: None for p in instance.ports}
        self._count_cache: Dict[int, Tuple[float, float, int]] = {}
        self._cand_cache: Dict[Tuple[int, bool], Candidates] = {}
        self._ext = {}
        for p in instance.ports:
            exts = instance.externals_at_port[p.id]
            self._ext[p.id] = np.array([(e.position, e.position + e.length, e.start,
                                         e.start + e.duration) for e in exts], dtype=float).reshape(-1, 4)
        for cid, (x, y) in (positions or {}).items():
            self.place(cid, x, y)

    # -- basic state -------------------------------------------------------

    @classmethod
    def from_solution(cls, instance: Instance, solution: Solution) -> "PartialSolution":
        return cls(instance, {cid: (a.berth_position, a.berth_start)
                              for cid, a in solution.assignments.items()})

    def copy(self) -> "PartialSolution":
        new = PartialSolution.__new__(PartialSolution)
        new.instance = self.instance
        new.pos = dict(self.pos)
        new.hand = dict(self.hand)
        new.ordered = set()
        new._arrays = dict(self._arrays)
        new._count_cache = {}
        new._cand_cache = {}
        new._ext = self._ext
        return new

    def handling_at(self, cid: int, x: float) -> float:
        call = self.instance.call(cid)
        return (1.0 + self.instance.cost_rates.deviation_factor * abs(x - call.ideal_position)) \
            * call.base_handling

    def place(self, cid: int, x: float, y: float) -> None:
        if cid in self.pos:
            raise ModelError(f"call {cid} already placed")
        h = self.handling_at(cid, x)
        self.pos[cid] = (x, y)
        self.hand[cid] = h
        self._changed(cid, y, y + h)

    def unplace(self, cid: int) -> Tuple[float, float]:
        x, y = self.pos.pop(cid)
        h = self.hand.pop(cid)
        self._changed(cid, y, y + h)
        return x, y

    def move(self, cid: int, x: float, y: float) -> None:
        self.unplace(cid)
        self.place(cid, x, y)

    def _changed(self, cid: int, y0: float, y1: float) -> None:
        inst = self.instance
        port = inst.call(cid).port
        self._arrays[port] = None
        for k in inst.calls_at_port[port]:
            cached = self._count_cache.get(k)
            if cached is not None and y1 > cached[0] - EPS and y0 < cached[1] + EPS:
                del self._count_cache[k]
            self._cand_cache.pop((k, False), None)
            self._cand_cache.pop((k, True), None)
        for k in (inst.pred[cid], inst.succ[cid]):
            if k is not None:
                self._count_cache.pop(k, None)
                self._cand_cache.pop((k, False), None)
                self._cand_cache.pop((k, True), None)

    def rects(self, port: str) -> np.ndarray:
        """(n, 4) array of [x0, x1, y0, y1] for externals and placed calls at a port."""
        arr = self._arrays[port]
        if arr is None:
            inst = self.instance
            rows = [(x, x + inst.ship_of(cid).length, y, y + self.hand[cid])
                    for cid in inst.calls_at_port[port] if cid in self.pos
                    for x, y in (self.pos[cid],)]
            own = np.array(rows, dtype=float).reshape(-1, 4)
            arr = np.vstack([self._ext[port], own])
            self._arrays[port] = arr
        return arr

    def unscheduled(self) -> List[int]:
        return [c.id for c in self.instance.port_calls if c.id not in self.pos]

    def is_complete(self) -> bool:
        return len(self.pos) == self.instance.n_calls

    # -- route coupling ----------------------------------------------------

    def ready_time(self, cid: int) -> float:
        """Earliest berth start allowed by EST and a placed predecessor at top speed."""
        inst = self.instance
        lo = inst.call(cid).est
        prev = inst.pred[cid]
        if prev is not None and prev in self.pos:
            lo = max(lo, self.pos[prev][1] + self.hand[prev] + inst.leg_tables[prev][0][0])
        return lo

    def earliest_arrival(self, cid: int) -> float:
        inst = self.instance
        prev = inst.pred[cid]
        if prev is not None and prev in self.pos:
            return self.pos[prev][1] + self.hand[prev] + inst.leg_tables[prev][0][0]
        return inst.call(cid).est

    def leg_choice(self, cid: int) -> Tuple[int, float, float]:
        """Slowest feasible speed for the leg leaving ``cid``: (speed idx, fuel USD, waiting h)."""
        inst = self.instance
        nxt = inst.succ[cid]
        times, fuel, idx = inst.leg_tables[cid]
        slack = self.pos[nxt][1] - (self.pos[cid][1] + self.hand[cid])
        k = int(np.searchsorted(times, slack + EPS, side="right")) - 1
        if k < 0:
            raise ModelError(f"call {inst.call(nxt).name} unreachable at any speed")
        return int(idx[k]), float(fuel[k]), slack - float(times[k])

    def eligible(self, cid: int) -> bool:
        ship = self.instance.call(cid).ship_id
        if ship not in self.ordered:
            return True
        for k in self.instance.ship(ship).route:
            if k not in self.pos:
                return k == cid
        return False

    def eject_after_gap(self, ship_id: int) -> List[int]:
        """Unplace every call of a ship after its first unplaced call; order the ship."""
        route = self.instance.ship(ship_id).route
        out, gap = [], False
        for k in route:
            if k not in self.pos:
                gap = True
            elif gap:
                self.unplace(k)
                out.append(k)
        self.ordered.add(ship_id)
        return out

    # -- costs -------------------------------------------------------------

    def own_cost(self, cid: int) -> float:
        r = self.instance.cost_rates
        call = self.instance.call(cid)
        end = self.pos[cid][1] + self.hand[cid]
        return (r.handling_rate * self.hand[cid] + r.delay_rate * max(0.0, end - call.eft)
                + r.lft_penalty_rate * max(0.0, end - call.lft))

    def leg_cost(self, cid: int) -> float:
        _, fuel, wait = self.leg_choice(cid)
        return fuel + self.instance.cost_rates.waiting_rate * wait

    def cost(self) -> float:
        """Objective restricted to placed calls and legs with both ends placed."""
        inst = self.instance
        total = 0.0
        for cid in self.pos:
            total += self.own_cost(cid)
            nxt = inst.succ[cid]
            if nxt is not None and nxt in self.pos:
                total += self.leg_cost(cid)
        return total

    def ship_cost(self, ship_id: int) -> float:
        inst = self.instance
        total = 0.0
        for cid in inst.ship(ship_id).route:
            if cid in self.pos:
                total += self.own_cost(cid)
                nxt = inst.succ[cid]
                if nxt is not None and nxt in self.pos:
                    total += self.leg_cost(cid)
        return total

    def to_solution(self) -> Solution:
        inst = self.instance
        out = {}
        for cid, (x, y) in self.pos.items():
            nxt = inst.succ[cid]
            speed = self.leg_choice(cid)[0] if nxt is not None and nxt in self.pos else None
            out[cid] = Assignment(cid, x, y, speed)
        return Solution(out)

    # -- scans -------------------------------------------------------------

    def feasible_count(self, cid: int) -> int:
        cached = self._count_cache.get(cid)
        if cached is None:
            lo, lft, n = _count(self, cid)
            cached = (lo, lft, n)
            self._count_cache[cid] = cached
        return cached[2]

    def candidates(self, cid: int, packed: bool = False) -> Candidates:
        key = (cid, packed)
        cand = self._cand_cache.get(key)
        if cand is None:
            cand = _candidates(self, cid, packed)
            self._cand_cache[key] = cand
        return cand


# -- grid machinery ---------------------------------------------------------

def _xgrid(ps: PartialSolution, cid: int):
    inst = ps.instance
    call = inst.call(cid)
    port = inst.port(call.port)
    length = inst.ship_of(cid).length
    xs = np.arange(0.0, port.quay_length - length + EPS, port.segment_length)
    h = (1.0 + inst.cost_rates.deviation_factor * np.abs(xs - call.ideal_position)) * call.base_handling
    return xs, h, length


def _free_grid(ps: PartialSolution, cid: int, xs, h, length, t_lo: int, n_t: int) -> np.ndarray:
    """Boolean (n_x, n_t) grid: True where the call fits without overlap."""
    ts = ps.instance.time_step
    R = ps.rects(ps.instance.call(cid).port)
    n_x = len(xs)
    if len(R) == 0 or n_t <= 0:
        return np.ones((n_x, max(n_t, 0)), dtype=bool)
    over = (R[:, 0][None, :] < xs[:, None] + length - EPS) & (xs[:, None] < R[:, 1][None, :] - EPS)
    xi, ri = np.nonzero(over)
    if len(xi) == 0:
        return np.ones((n_x, n_t), dtype=bool)
    a = np.floor((R[ri, 2] - h[xi] + EPS) / ts).astype(np.int64) + 1 - t_lo
    b = np.ceil((R[ri, 3] - EPS) / ts).astype(np.int64) - 1 - t_lo
    a = np.maximum(a, 0)
    b = np.minimum(b, n_t - 1)
    keep = a <= b
    xi, a, b = xi[keep], a[keep], b[keep]
    width = n_t + 1
    size = n_x * width
    diff = (np.bincount(xi * width + a, minlength=size)
            - np.bincount(xi * width + b + 1, minlength=size)).reshape(n_x, width)
    return np.cumsum(diff[:, :n_t], axis=1) == 0


def _succ_limit(ps: PartialSolution, cid: int, h) -> Optional[np.ndarray]:
    """Latest start index per x that still reaches a placed successor at top speed."""
    inst = ps.instance
    nxt = inst.succ[cid]
    if nxt is None or nxt not in ps.pos:
        return None
    t_fast = inst.leg_tables[cid][0][0]
    return np.floor((ps.pos[nxt][1] - h - t_fast + EPS) / inst.time_step).astype(np.int64)


def _count(ps: PartialSolution, cid: int):
    inst = ps.instance
    call = inst.call(cid)
    ts = inst.time_step
    lo = ps.ready_time(cid)
    t_lo = math.ceil(lo / ts - EPS)
    xs, h, length = _xgrid(ps, cid)
    if len(xs) == 0:
        return lo, call.lft, 0
    t_hi = math.floor((call.lft - h.min() + EPS) / ts)
    lim = _succ_limit(ps, cid, h)
    if lim is not None:
        t_hi = min(t_hi, int(lim.max()))
    t_hi = min(t_hi, math.floor(inst.horizon / ts + EPS))
    n_t = t_hi - t_lo + 1
    if n_t <= 0:
        return lo, call.lft, 0
    free = _free_grid(ps, cid, xs, h, length, t_lo, n_t)
    ys = (t_lo + np.arange(n_t)) * ts
    ok = free & (ys[None, :] + h[:, None] <= call.lft + EPS)
    if lim is not None:
        ok &= (t_lo + np.arange(n_t))[None, :] <= lim[:, None]
    return lo, call.lft, int(ok.sum())


def _shift(m: np.ndarray, axis: int, step: int) -> np.ndarray:
    """Value of the neighbour at offset ``step`` along ``axis``; False outside."""
    out = np.zeros_like(m)
    if axis == 0:
        if step > 0:
            out[:-1] = m[1:]
        else:
            out[1:] = m[:-1]
    else:
        if step > 0:
            out[:, :-1] = m[:, 1:]
        else:
            out[:, 1:] = m[:, :-1]
    return out


def packed_mask(free: np.ndarray) -> np.ndarray:
    """Free cells that cannot shift one step in some direction (adjacent to a
    rectangle or to a boundary of the decision space)."""
    return free & ~(_shift(free, 0, -1) & _shift(free, 0, 1) & _shift(free, 1, -1) & _shift(free, 1, 1))


def scan(ps: PartialSolution, cid: int):
    """Full free grid for a call: (xs, h, t_lo, free, limit-per-x or None)."""
    inst = ps.instance
    call = inst.call(cid)
    ts = inst.time_step
    lo = ps.ready_time(cid)
    t_lo = math.ceil(lo / ts - EPS)
    xs, h, length = _xgrid(ps, cid)
    lim = _succ_limit(ps, cid, h)
    if lim is not None:
        t_hi = int(lim.max()) if len(lim) else t_lo - 1
    else:
        R = ps.rects(call.port)
        top = max(lo, call.lft, float(R[:, 3].max()) if len(R) else lo)
        prev = inst.pred[cid]
        if prev is not None and prev in ps.pos:
            top = max(top, ps.pos[prev][1] + ps.hand[prev] + inst.leg_tables[prev][0][-1])
        t_hi = math.ceil(top / ts - EPS) + 1
    t_hi = min(t_hi, math.floor(inst.horizon / ts + EPS))
    n_t = t_hi - t_lo + 1
    if n_t <= 0 or len(xs) == 0:
        return xs, h, t_lo, np.zeros((len(xs), 0), dtype=bool), lim
    free = _free_grid(ps, cid, xs, h, length, t_lo, n_t)
    if lim is not None:
        free &= (t_lo + np.arange(n_t))[None, :] <= lim[:, None]
    return xs, h, t_lo, free, lim


def all_cells(ps: PartialSolution, cid: int) -> Candidates:
    """Every free cell of the call with its incremental cost (no pruning to breakpoints)."""
    return _candidates(ps, cid, False, exhaustive=True)


def _candidates(ps: PartialSolution, cid: int, packed: bool, exhaustive: bool = False) -> Candidates:
    inst = ps.instance
    call = inst.call(cid)
    r = inst.cost_rates
    ts = inst.time_step
    xs, h, t_lo, free, lim = scan(ps, cid)
    n_x, n_t = free.shape
    empty = Candidates(np.empty(0), np.empty(0), np.empty(0), np.empty(0, dtype=np.int64))
    if n_t == 0 or not free.any():
        return empty
    mask = packed_mask(free) if packed else free

    # Cost is piecewise linear in the start time; its minimum over a run of
    # admissible cells lies at a run end or at a breakpoint.
    bp = np.zeros_like(mask)
    rows = np.arange(n_x)

    def mark(cols_by_row):
        rr = np.broadcast_to(rows[:, None], cols_by_row.shape).ravel()
        cc = cols_by_row.ravel() - t_lo
        ok = (cc >= 0) & (cc < n_t)
        bp[rr[ok], cc[ok]] = True

    prev = inst.pred[cid]
    has_pred = prev is not None and prev in ps.pos
    nxt = inst.succ[cid]
    has_succ = nxt is not None and nxt in ps.pos
    if has_pred:
        t_in, f_in, _ = inst.leg_tables[prev]
        ready = ps.pos[prev][1] + ps.hand[prev]
        cols = np.ceil((ready + t_in - EPS) / ts).astype(np.int64)
        mark(np.broadcast_to(cols[None, :], (n_x, len(cols))))
    if has_succ:
        t_out, f_out, _ = inst.leg_tables[cid]
        y_next = ps.pos[nxt][1]
        mark(np.floor((y_next - h[:, None] - t_out[None, :] + EPS) / ts).astype(np.int64))
    for due in (call.eft, call.lft):
        f = np.floor((due - h + EPS) / ts).astype(np.int64)
        mark(np.stack([f, f + 1], axis=1))

    cand = mask if exhaustive else mask & (~_shift(mask, 1, -1) | ~_shift(mask, 1, 1) | bp)
    ri, ti = np.nonzero(cand)
    x = xs[ri]
    hh = h[ri]
    y = (t_lo + ti) * ts
    end = y + hh
    cost = (r.handling_rate * hh + r.delay_rate * np.maximum(0.0, end - call.eft)
            + r.lft_penalty_rate * np.maximum(0.0, end - call.lft))
    if has_pred:
        slack = y - ready
        k = np.searchsorted(t_in, slack + EPS, side="right") - 1
        k = np.maximum(k, 0)
        cost = cost + f_in[k] + r.waiting_rate * (slack - t_in[k])
    if has_succ:
        slack = y_next - end
        k = np.searchsorted(t_out, slack + EPS, side="right") - 1
        k = np.maximum(k, 0)
        cost = cost + f_out[k] + r.waiting_rate * (slack - t_out[k])
    order = np.lexsort((x, np.abs(x - call.ideal_position), y, np.round(cost, 6)))
    return Candidates(x[order], y[order], cost[order], ri[order])


# -- insertion driver ---------------------------------------------------------

Chooser = Callable[[PartialSolution, List[int]], int]
Placer = Callable[[PartialSolution, int], Optional[Tuple[float, float]]]


def best_position(ps: PartialSolution, cid: int, packed: bool = False) -> Optional[Tuple[float, float]]:
    cand = ps.candidates(cid, packed)
    if len(cand) == 0:
        return None
    return float(cand.x[0]), float(cand.y[0])


def insert_all(ps: PartialSolution, pool: Iterable[int], choose: Chooser,
               placer: Optional[Placer] = None, packed: bool = False) -> PartialSolution:
    """Place every call of ``pool``; ``choose`` picks the next call among the eligible ones.

    A call squeezed between placed route neighbours may have no free cell; the
    later calls of its ship are then unplaced and the ship is re-placed in
    route order, which always succeeds.
    """
    pending = list(pool)
    while pending:
        eligible = [c for c in pending if ps.eligible(c)]
        cid = choose(ps, eligible)
        spot = placer(ps, cid) if placer is not None else best_position(ps, cid, packed)
        if spot is None:
            ejected = ps.eject_after_gap(ps.instance.call(cid).ship_id)
            if not ejected:
                raise ModelError(f"no position for call {ps.instance.call(cid).name}")
            pending.extend(ejected)
            continue
        ps.place(cid, *spot)
        pending.remove(cid)
    ps.ordered.clear()
    return ps
