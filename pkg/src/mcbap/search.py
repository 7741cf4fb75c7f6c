"""Simulated-annealing ALNS with an ejection-chain local search."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from .construct import construct_partial
from .model import EPS, Instance, ModelError, Solution
from .operators import (OperatorBank, arrival_insertion, cost_space_removal, cost_time_removal,
                        greedy_insertion, kregret_insertion, packing_insertion, random_removal,
                        removal_size, shaw_removal)
from .placement import PartialSolution

LS_POLICIES = ("every", "on-improve", "every2", "every4", "off")
VARIANTS = ("alns", "lns")

# Tuning ranges (min, max) of the tuned parameters.
RANGES = {
    "epsilon": (0.005, 0.2), "phi": (0.01, 0.05), "xi": (0.00005, 0.001), "rho": (0.3, 0.6),
    "A": (0.5, 2.0), "B": (0.5, 2.0), "C": (0.5, 2.0), "alpha": (1.0, 3.0), "gamma": (1.0, 3.0),
    "mu": (1.0, 3.0), "kappa": (2, 4), "delta_update": (0.01, 0.05), "lam": (0.3, 0.7),
    "psi1": (10.0, 20.0), "psi2": (4.0, 8.0), "psi3": (1.0, 3.0), "psi4": (0.0, 0.0),
    "position_bound": (2.0, 5.0),
}


@dataclass
class SearchParams:
    epsilon: float = 0.157
    phi: float = 0.0246
    xi: float = 0.000269
    rho: float = 0.326
    A: float = 0.55
    B: float = 1.36
    C: float = 0.89
    alpha: float = 2.66
    gamma: float = 2.85
    mu: float = 2.6
    kappa: int = 2
    delta_update: float = 0.017
    lam: float = 0.456
    psi1: float = 11.0
    psi2: float = 4.0
    psi3: float = 2.0
    psi4: float = 0.0
    position_bound: float = 4.02  # consumed by the instance generator
    time_limit: float = 300.0
    seed: int = 0
    ls_policy: str = "on-improve"
    variant: str = "alns"
    # Deterministic clock: elapsed time advances by time_limit / max_iterations per iteration.
    max_iterations: Optional[int] = None
    # Stop as soon as the best objective reaches this value.
    target_objective: Optional[float] = None

    def out_of_range(self) -> List[str]:
        bad = []
        for name, (lo, hi) in RANGES.items():
            v = getattr(self, name)
            if not lo - 1e-12 <= v <= hi + 1e-12:
                bad.append(f"{name}={v} outside [{lo}, {hi}]")
        if self.ls_policy not in LS_POLICIES:
            bad.append(f"ls_policy={self.ls_policy!r}")
        if self.variant not in VARIANTS:
            bad.append(f"variant={self.variant!r}")
        return bad

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SearchParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown parameters: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SearchResult:
    best: Solution
    best_objective: float
    initial_objective: float
    iterations: int
    elapsed: float
    trace: List[dict] = field(default_factory=list)
    operator_stats: List[dict] = field(default_factory=list)
    ls_calls: int = 0


# -- simulated annealing ------------------------------------------------------

def accept(f_new: float, f_cur: float, T: float, rng) -> bool:
    if f_new < f_cur:
        return True
    if T <= 0:
        return False
    return rng.random() < math.exp(-(f_new - f_cur) / T)


def cooling_factor(t_start: float, t_end: float, t_cool: float) -> float:
    if not (t_start > t_end > 0) or t_cool <= 0:
        raise ValueError("need t_start > t_end > 0 and t_cool > 0")
    return (t_end / t_start) ** (1.0 / t_cool)


@dataclass
class SAState:
    t_start: float
    t_end: float
    t_cool: float
    T: float = 0.0
    tau: float = 0.0
    reheats: int = 0

    def __post_init__(self):
        self.tau = cooling_factor(self.t_start, self.t_end, self.t_cool)
        self.T = self.t_start

    def cool(self, dt: float) -> None:
        self.T *= self.tau ** dt
        if self.T <= self.t_end * (1 + 1e-12):
            self.T = self.t_start
            self.reheats += 1


# -- local search ---------------------------------------------------------------

def default_k_chain(instance: Instance) -> int:
    return 2 * len(instance.ships)


class _Board:
    """Per-port arrays [x0, x1, y0, y1] of the optimized calls, for vectorized overlap tests."""

    def __init__(self, ps: PartialSolution):
        self.ps = ps
        inst = ps.instance
        self.ids = {p: np.array(inst.calls_at_port[p], dtype=np.int64) for p in inst.calls_at_port}
        self.row = {c: i for p in self.ids for i, c in enumerate(self.ids[p])}
        self.length = {c.id: inst.ship_of(c.id).length for c in inst.port_calls}
        self.port = {c.id: c.port for c in inst.port_calls}
        self.arr = {}
        for p, ids in self.ids.items():
            self.arr[p] = np.array([self.rect(c, *ps.pos[c]) for c in ids], dtype=float).reshape(-1, 4)

    def rect(self, c, x, y):
        return (x, x + self.length[c], y, y + self.ps.handling_at(c, x))

    def refresh(self, c):
        self.arr[self.port[c]][self.row[c]] = self.rect(c, *self.ps.pos[c])


class _Chain:
    """Cascade of same-direction shifts started by moving one call."""

    def __init__(self, board: _Board, k_chain: int):
        self.board = board
        self.ps = board.ps
        self.k_chain = k_chain
        self.moves: Dict[int, Tuple[float, float]] = {}
        self.local: Dict[str, np.ndarray] = {}
        self.seen: set = set()
        self.n_moves = 0

    def where(self, cid):
        r = self.local.get(self.board.port[cid], self.board.arr[self.board.port[cid]])[self.board.row[cid]]
        return r[0], r[2], r[3] - r[2]

    def _set(self, c, x, y):
        port = self.board.port[c]
        if port not in self.local:
            self.local[port] = self.board.arr[port].copy()
        self.local[port][self.board.row[c]] = self.board.rect(c, x, y)
        self.moves[c] = (x, y)

    def build(self, cid: int, x: float, y: float, direction: str) -> bool:
        inst = self.ps.instance
        board = self.board
        ts = inst.time_step
        queue = [(cid, x, y)]
        while queue:
            c, nx, ny = queue.pop(0)
            if c in self.moves:
                # a call pushed twice keeps the furthest shift
                cx, cy = self.moves[c]
                if direction == "later":
                    ny = max(ny, cy)
                elif direction == "earlier":
                    ny = min(ny, cy)
                elif direction == "right":
                    nx = max(nx, cx)
                else:
                    nx = min(nx, cx)
                if (nx, ny) == (cx, cy):
                    continue
            self.n_moves += 1
            if self.n_moves > self.k_chain:
                return False
            self._set(c, nx, ny)
            call = inst.call(c)
            port = inst.port(call.port)
            length = board.length[c]
            h = self.ps.handling_at(c, nx)
            if (nx < -EPS or nx + length > port.quay_length + EPS or ny < call.est - EPS
                    or ny > inst.horizon + EPS):
                return False
            E = self.ps._ext[call.port]
            if len(E) and np.any((E[:, 0] < nx + length - EPS) & (nx < E[:, 1] - EPS)
                                 & (E[:, 2] < ny + h - EPS) & (ny < E[:, 3] - EPS)):
                return False
            A = self.local[call.port]
            hit = ((A[:, 0] < nx + length - EPS) & (nx < A[:, 1] - EPS)
                   & (A[:, 2] < ny + h - EPS) & (ny < A[:, 3] - EPS))
            hit[board.row[c]] = False
            for r in np.flatnonzero(hit):
                k = int(board.ids[call.port][r])
                kx, ky, ky1 = A[r, 0], A[r, 2], A[r, 3]
                if direction == "later":
                    ty = math.ceil((ny + h - EPS) / ts) * ts
                    queue.append((k, kx, max(ky, ty)))
                elif direction == "earlier":
                    ty = math.floor((ny - (ky1 - ky) + EPS) / ts) * ts
                    queue.append((k, kx, min(ky, ty)))
                else:
                    seg = port.segment_length
                    if direction == "right":
                        tx = math.ceil((nx + length - EPS) / seg) * seg
                    else:
                        tx = math.floor((nx - board.length[k] + EPS) / seg) * seg
                    queue.append((k, tx, ky))
            # route coupling: pushes follow the chain direction, anything else fails
            nxt = inst.succ[c]
            prev = inst.pred[c]
            self.seen.update(k for k in (nxt, prev) if k is not None)
            if nxt is not None:
                sx, sy, _ = self.where(nxt)
                need = ny + h + inst.leg_tables[c][0][0]
                if sy < need - EPS:
                    if direction != "later":
                        return False
                    queue.append((nxt, sx, math.ceil((need - EPS) / ts) * ts))
            if prev is not None:
                px, py, ph = self.where(prev)
                if py + ph + inst.leg_tables[prev][0][0] > ny + EPS:
                    if direction != "earlier":
                        return False
                    ty = math.floor((ny - inst.leg_tables[prev][0][0] - ph + EPS) / ts) * ts
                    queue.append((prev, px, ty))
        return True


def _route_cost(ps: PartialSolution, ship_id: int, over: Dict[int, Tuple[float, float]]) -> float:
    inst = ps.instance
    r = inst.cost_rates
    route = inst.ship(ship_id).route
    total = 0.0
    ys, hs = [], []
    for cid in route:
        if cid in over:
            x, y = over[cid]
            h = ps.handling_at(cid, x)
        else:
            y = ps.pos[cid][1]
            h = ps.hand[cid]
        call = inst.call(cid)
        end = y + h
        total += (r.handling_rate * h + r.delay_rate * max(0.0, end - call.eft)
                  + r.lft_penalty_rate * max(0.0, end - call.lft))
        ys.append(y)
        hs.append(h)
    for i in range(len(route) - 1):
        times, fuel, _ = inst.leg_tables[route[i]]
        slack = ys[i + 1] - ys[i] - hs[i]
        k = int(np.searchsorted(times, slack + EPS, side="right")) - 1
        if k < 0:
            return math.inf
        total += fuel[k] + r.waiting_rate * (slack - times[k])
    return total


def _seeds(ps: PartialSolution, cid: int):
    inst = ps.instance
    call = inst.call(cid)
    seg = inst.port(call.port).segment_length
    ts = inst.time_step
    x, y = ps.pos[cid]
    dev = x - call.ideal_position
    if abs(dev) > EPS:
        step = -seg if dev > 0 else seg
        if abs(x + step - call.ideal_position) < abs(dev) - EPS:
            yield x + step, y, "right" if step > 0 else "left"
    yield x, y - ts, "earlier"
    yield x, y + ts, "later"


@dataclass
class LSStats:
    passes: int = 0
    chains_tried: int = 0
    chains_too_long: int = 0
    max_chain: int = 0


def local_search(partial: PartialSolution, k_chain: Optional[int] = None,
                 stats: Optional[LSStats] = None, max_passes: int = 100000) -> PartialSolution:
    """Steepest descent over single-call shifts with ejection chains.

    Returns a new partial solution whose objective is never above the input's."""
    ps = partial.copy()
    inst = ps.instance
    if k_chain is None:
        k_chain = default_k_chain(inst)
    stats = stats if stats is not None else LSStats()
    base = {s.id: _route_cost(ps, s.id, {}) for s in inst.ships}
    board = _Board(ps)
    # Best chain per seed call, with the calls its chains touched.  Entries are
    # dropped when a move lands near them; a full re-scan confirms the optimum.
    memo: Dict[int, Tuple[Optional[tuple], set]] = {}
    verified = False
    for _ in range(max_passes):
        stats.passes += 1
        best = None
        for cid in sorted(ps.pos):
            if cid not in memo:
                memo[cid] = _best_chain(board, cid, k_chain, base, stats)
            found = memo[cid][0]
            if found is not None and (best is None or found[0] < best[0] - 1e-9):
                best = found
        if best is None:
            if verified:
                break
            memo.clear()
            verified = True
            continue
        fresh = _best_chain(board, best[2], k_chain, base, stats)
        if fresh[0] is None or abs(fresh[0][0] - best[0]) > 1e-9 or fresh[0][1] != best[1]:
            memo[best[2]] = fresh
            continue
        verified = False
        moves = best[1]
        old = {c: board.arr[board.port[c]][board.row[c]].copy() for c in moves}
        for c, (x, y) in moves.items():
            ps.move(c, x, y)
            board.refresh(c)
        touched = {inst.call(c).ship_id for c in moves}
        for s in touched:
            base[s] = _route_cost(ps, s, {})
        stale = set(moves)
        for s in touched:
            stale.update(inst.ship(s).route)
        for c in moves:
            port = board.port[c]
            seg = inst.port(port).segment_length
            A = board.arr[port]
            for r in (old[c], A[board.row[c]]):
                near = ((A[:, 0] < r[1] + seg + EPS) & (r[0] - seg - EPS < A[:, 1])
                        & (A[:, 2] < r[3] + inst.time_step + EPS) & (r[2] - inst.time_step - EPS < A[:, 3]))
                stale.update(int(k) for k in board.ids[port][near])
        for k, (_, involved) in list(memo.items()):
            if k in stale or not involved.isdisjoint(moves):
                del memo[k]
    ps.ordered.clear()
    return ps


def _best_chain(board, cid, k_chain, base, stats):
    ps = board.ps
    inst = ps.instance
    best = None
    involved = set()
    for x, y, direction in _seeds(ps, cid):
        stats.chains_tried += 1
        chain = _Chain(board, k_chain)
        ok = chain.build(cid, x, y, direction)
        involved.update(chain.moves)
        involved.update(chain.seen)
        if not ok:
            if chain.n_moves > k_chain:
                stats.chains_too_long += 1
            continue
        stats.max_chain = max(stats.max_chain, chain.n_moves)
        ships = {inst.call(c).ship_id for c in chain.moves}
        delta = sum(_route_cost(ps, s, chain.moves) - base[s] for s in ships)
        if delta < -1e-6 and (best is None or delta < best[0] - 1e-9):
            best = (delta, dict(chain.moves), cid)
    return best, involved


# -- ALNS ---------------------------------------------------------------------

class _Clock:
    def __init__(self, params: SearchParams):
        self.virtual = params.max_iterations is not None
        self.step = params.time_limit / params.max_iterations if self.virtual and params.max_iterations > 0 else 0.0
        self.t0 = time.monotonic()
        self.ticks = 0

    def tick(self):
        self.ticks += 1

    def now(self) -> float:
        if self.virtual:
            return self.ticks * self.step
        return time.monotonic() - self.t0


def _ls_due(policy: str, improved: bool, it: int) -> bool:
    if policy == "every":
        return True
    if policy == "on-improve":
        return improved
    if policy == "every2":
        return it % 2 == 0
    if policy == "every4":
        return it % 4 == 0
    return False


def run_alns(instance: Instance, params: Optional[SearchParams] = None,
             initial: Optional[PartialSolution] = None) -> SearchResult:
    params = params or SearchParams()
    rng = np.random.default_rng(params.seed)
    clock = _Clock(params)
    cur = initial.copy() if initial is not None else construct_partial(instance)
    f0 = f_cur = cur.cost()
    best, f_best = cur, f_cur
    trace: List[dict] = []
    lam = 0.0 if params.variant == "lns" else params.lam
    bank = OperatorBank(lam=lam, interval=params.delta_update * params.time_limit,
                        rewards=(params.psi1, params.psi2, params.psi3, params.psi4))
    bank.snapshot(0.0)
    k = removal_size(params.rho, instance.n_calls)
    k_chain = default_k_chain(instance)
    it = ls_calls = 0

    def done(now):
        if now >= params.time_limit:
            return True
        if params.max_iterations is not None and it >= params.max_iterations:
            return True
        return params.target_objective is not None and f_best <= params.target_objective + 1e-9

    if params.time_limit > 0 and f0 > 0:
        sa = SAState(params.phi * f0, params.xi * f0, params.epsilon * params.time_limit)
        prev = clock.now()
        while not done(prev):
            rem = bank.select("removal", rng)
            ins = bank.select("insertion", rng)
            if rem == "shaw":
                res = shaw_removal(cur, k, params.alpha, rng, params.A, params.B, params.C)
            elif rem == "cost_time":
                res = cost_time_removal(cur, k, params.alpha, rng)
            elif rem == "cost_space":
                res = cost_space_removal(cur, k, params.alpha, rng)
            else:
                res = random_removal(cur, k, rng)
            if ins == "greedy":
                cand = greedy_insertion(res.partial, res.removed, params.gamma, rng)
            elif ins == "kregret":
                cand = kregret_insertion(res.partial, res.removed, params.kappa)
            elif ins == "packing":
                cand = packing_insertion(res.partial, res.removed, params.gamma, rng)
            else:
                cand = arrival_insertion(res.partial, res.removed, params.mu, rng)
            f_c = cand.cost()
            if _ls_due(params.ls_policy, f_c < f_cur - 1e-9, it + 1):
                cand = local_search(cand, k_chain)
                f_c = cand.cost()
                ls_calls += 1
            better = f_c < f_cur - 1e-9
            if f_c < f_best - 1e-9:
                category = "new_best"
                best, f_best = cand, f_c
            elif better:
                category = "better"
            else:
                category = "accepted"
            if accept(f_c, f_cur, sa.T, rng):
                cur, f_cur = cand, f_c
            else:
                category = "rejected"
            it += 1
            clock.tick()
            now = clock.now()
            bank.record(rem, ins, category)
            bank.update(now)
            sa.cool(now - prev)
            prev = now
            trace.append({"time": now, "iteration": it, "current": f_cur, "best": f_best,
                          "temperature": sa.T, "removal": rem, "insertion": ins, "outcome": category})
    bank.snapshot(clock.now())
    return SearchResult(best=best.to_solution(), best_objective=f_best, initial_objective=f0,
                        iterations=it, elapsed=clock.now(), trace=trace,
                        operator_stats=bank.history, ls_calls=ls_calls)


TRACE_FIELDS = ("time", "iteration", "current", "best", "temperature", "removal", "insertion", "outcome")
STATS_FIELDS = ("time", "family", "operator", "weight", "probability", "uses", "successes")


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_trace(path, result: SearchResult) -> None:
    _write_rows(path, TRACE_FIELDS, result.trace)


def write_operator_stats(path, result: SearchResult) -> None:
    _write_rows(path, STATS_FIELDS, result.operator_stats)
