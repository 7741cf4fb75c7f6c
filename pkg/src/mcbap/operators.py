"""Removal and insertion operators plus the adaptive operator bank."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import port_visit_cost
from .placement import PartialSolution, insert_all

REMOVALS = ("shaw", "cost_time", "cost_space", "random")
INSERTIONS = ("greedy", "kregret", "packing", "arrival")
CATEGORIES = ("new_best", "better", "accepted", "rejected")


def randomized_index(n: int, alpha: float, p: float) -> int:
    """1-based index ceil(n * p**alpha) clamped to [1, n]; alpha=1 is uniform."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return min(n, max(1, math.ceil(n * p ** alpha)))


def _pick(items: Sequence, alpha: float, rng: np.random.Generator) -> int:
    """0-based position drawn with the randomized index."""
    return randomized_index(len(items), alpha, rng.random()) - 1


def relatedness(a: Tuple[float, float, float], b: Tuple[float, float, float],
                A: float = 0.55, B: float = 1.36, C: float = 0.89) -> float:
    """Relatedness of two placed calls given as (x, y, h); lower means more related."""
    return A * abs(a[0] - b[0]) + B * abs(a[1] - b[1]) + C * abs((a[1] + a[2]) - (b[1] + b[2]))


def removal_size(rho: float, n_calls: int) -> int:
    return max(1, min(n_calls, int(math.floor(rho * n_calls + 0.5))))


@dataclass
class RemovalResult:
    partial: PartialSolution
    removed: List[int]


def _finish(partial: PartialSolution, chosen: List[int], k: int) -> RemovalResult:
    chosen = chosen[:k]
    out = partial.copy()
    for cid in chosen:
        out.unplace(cid)
    return RemovalResult(out, chosen)


def _fill_random(partial: PartialSolution, chosen: List[int], k: int, rng) -> List[int]:
    if len(chosen) >= k:
        return chosen
    taken = set(chosen)
    rest = [c for c in sorted(partial.pos) if c not in taken]
    extra = rng.choice(len(rest), size=min(k - len(chosen), len(rest)), replace=False)
    return chosen + [rest[i] for i in extra]


def shaw_removal(partial: PartialSolution, k: int, alpha: float, rng: np.random.Generator,
                 A: float = 0.55, B: float = 1.36, C: float = 0.89) -> RemovalResult:
    """Remove pairs of related calls, picked from the pair list sorted by relatedness.

    Pairs are formed between calls at the same port; relatedness of calls in
    different ports has no geometric meaning.
    """
    inst = partial.instance
    pairs = []
    for port in inst.calls_at_port:
        ids = [c for c in inst.calls_at_port[port] if c in partial.pos]
        if len(ids) < 2:
            continue
        arr = np.array([(partial.pos[c][0], partial.pos[c][1], partial.hand[c]) for c in ids])
        x, y, e = arr[:, 0], arr[:, 1], arr[:, 1] + arr[:, 2]
        m = (A * np.abs(x[:, None] - x[None, :]) + B * np.abs(y[:, None] - y[None, :])
             + C * np.abs(e[:, None] - e[None, :]))
        iu, ju = np.triu_indices(len(ids), 1)
        for i, j, v in zip(iu, ju, m[iu, ju]):
            pairs.append((round(float(v), 9), ids[i], ids[j]))
    pairs.sort()
    chosen: List[int] = []
    taken = set()
    while len(chosen) < k and pairs:
        _, i, j = pairs.pop(_pick(pairs, alpha, rng))
        for c in (i, j):
            if c not in taken:
                taken.add(c)
                chosen.append(c)
    return _finish(partial, _fill_random(partial, chosen, k, rng), k)


def _band_removal(partial: PartialSolution, k: int, alpha: float, rng, time_band: bool) -> RemovalResult:
    inst = partial.instance
    sol = partial.to_solution()
    costs = {c: port_visit_cost(inst, sol, c) for c in partial.pos}
    order = sorted(costs, key=lambda c: (-costs[c], c))
    chosen: List[int] = []
    taken = set()

    def band(c):
        if time_band:
            return partial.pos[c][1], partial.pos[c][1] + partial.hand[c]
        return partial.pos[c][0], partial.pos[c][0] + inst.ship_of(c).length

    while len(chosen) < k and order:
        seed = order.pop(_pick(order, alpha, rng))
        lo, hi = band(seed)
        group = [seed] + [c for c in inst.calls_at_port[inst.call(seed).port]
                          if c != seed and c in costs and c not in taken
                          and band(c)[0] < hi - 1e-7 and lo < band(c)[1] - 1e-7]
        group = [group[0]] + sorted(group[1:], key=lambda c: (-costs[c], c))
        for c in group:
            if c not in taken:
                taken.add(c)
                chosen.append(c)
        order = [c for c in order if c not in taken]
    return _finish(partial, chosen, k)


def cost_time_removal(partial: PartialSolution, k: int, alpha: float, rng) -> RemovalResult:
    return _band_removal(partial, k, alpha, rng, time_band=True)


def cost_space_removal(partial: PartialSolution, k: int, alpha: float, rng) -> RemovalResult:
    return _band_removal(partial, k, alpha, rng, time_band=False)


def random_removal(partial: PartialSolution, k: int, rng) -> RemovalResult:
    return _finish(partial, _fill_random(partial, [], k, rng), k)


# -- insertion ----------------------------------------------------------------

def _ranked_chooser(key, alpha: float, rng) -> Callable[[PartialSolution, List[int]], int]:
    def choose(ps: PartialSolution, pool: List[int]) -> int:
        ranked = sorted(pool, key=lambda c: key(ps, c))
        return ranked[_pick(ranked, alpha, rng)]
    return choose


def _count_key(ps: PartialSolution, c: int):
    call = ps.instance.call(c)
    return (ps.feasible_count(c), call.est, call.ship_id, c)


def _arrival_key(ps: PartialSolution, c: int):
    call = ps.instance.call(c)
    return (ps.earliest_arrival(c), call.est, call.ship_id, c)


def greedy_insertion(partial: PartialSolution, removed: Sequence[int], gamma: float, rng) -> PartialSolution:
    """Insert in (randomized) fewest-positions-first order at the cheapest free cell.

    Works in place on ``partial`` and returns it."""
    return insert_all(partial, removed, _ranked_chooser(_count_key, gamma, rng))


def packing_insertion(partial: PartialSolution, removed: Sequence[int], gamma: float, rng) -> PartialSolution:
    return insert_all(partial, removed, _ranked_chooser(_count_key, gamma, rng), packed=True)


def arrival_insertion(partial: PartialSolution, removed: Sequence[int], mu: float, rng) -> PartialSolution:
    return insert_all(partial, removed, _ranked_chooser(_arrival_key, mu, rng))


def regret_value(ps: PartialSolution, cid: int, kappa: int) -> Tuple[float, float]:
    """(regret, best cost) over the best cost per berth position."""
    cand = ps.candidates(cid)
    if len(cand) == 0:
        return math.inf, math.inf
    _, first = np.unique(cand.col, return_index=True)
    per_col = np.sort(cand.cost[first])
    if len(per_col) < kappa:
        return math.inf, float(per_col[0])
    return float(per_col[kappa - 1] - per_col[0]), float(per_col[0])


def kregret_insertion(partial: PartialSolution, removed: Sequence[int], kappa: int = 2, rng=None) -> PartialSolution:
    def choose(ps: PartialSolution, pool: List[int]) -> int:
        best = None
        for c in pool:
            reg, cost = regret_value(ps, c, kappa)
            key = (-reg, -cost, c)
            if best is None or key < best[0]:
                best = (key, c)
        return best[1]
    return insert_all(partial, removed, choose)


# -- adaptive bank ------------------------------------------------------------

@dataclass
class OperatorBank:
    removal: Tuple[str, ...] = REMOVALS
    insertion: Tuple[str, ...] = INSERTIONS
    rewards: Tuple[float, float, float, float] = (11.0, 4.0, 2.0, 0.0)
    lam: float = 0.456
    interval: float = 1.0
    weights: Dict[str, np.ndarray] = field(default_factory=dict)
    scores: Dict[str, np.ndarray] = field(default_factory=dict)
    uses: Dict[str, np.ndarray] = field(default_factory=dict)
    successes: Dict[str, np.ndarray] = field(default_factory=dict)
    last_update: float = 0.0
    history: List[dict] = field(default_factory=list)

    def __post_init__(self):
        r = self.rewards
        if not (r[0] > r[1] > r[2] > r[3] == 0):
            raise ValueError("rewards must satisfy psi1 > psi2 > psi3 > psi4 = 0")
        for fam, names in (("removal", self.removal), ("insertion", self.insertion)):
            self.weights.setdefault(fam, np.ones(len(names)))
            self.scores[fam] = np.zeros(len(names))
            self.uses[fam] = np.zeros(len(names), dtype=np.int64)
            self.successes[fam] = np.zeros(len(names), dtype=np.int64)

    def names(self, family: str) -> Tuple[str, ...]:
        return self.removal if family == "removal" else self.insertion

    def probabilities(self, family: str) -> np.ndarray:
        w = self.weights[family]
        s = w.sum()
        if s <= 0:
            return np.full(len(w), 1.0 / len(w))
        return w / s

    def select(self, family: str, rng) -> str:
        p = self.probabilities(family)
        u = rng.random()
        i = int(np.searchsorted(np.cumsum(p), u, side="right"))
        i = min(i, len(p) - 1)
        while p[i] == 0:  # guard against float round-off at the top end
            i -= 1
        return self.names(family)[i]

    def record(self, removal: str, insertion: str, category: str) -> None:
        reward = self.rewards[CATEGORIES.index(category)]
        for fam, name in (("removal", removal), ("insertion", insertion)):
            i = self.names(fam).index(name)
            self.scores[fam][i] += reward
            self.uses[fam][i] += 1
            if category != "rejected":
                self.successes[fam][i] += 1

    def update(self, elapsed: float) -> bool:
        """Apply the weight update if an interval has passed since the last one."""
        if elapsed - self.last_update < self.interval:
            return False
        self.last_update = elapsed
        for fam in ("removal", "insertion"):
            self.weights[fam] = (1.0 - self.lam) * self.weights[fam] + self.lam * self.scores[fam]
            self.scores[fam] = np.zeros_like(self.scores[fam])
        self.snapshot(elapsed)
        return True

    def snapshot(self, elapsed: float) -> None:
        for fam in ("removal", "insertion"):
            p = self.probabilities(fam)
            for i, name in enumerate(self.names(fam)):
                self.history.append({"time": elapsed, "family": fam, "operator": name,
                                     "weight": float(self.weights[fam][i]), "probability": float(p[i]),
                                     "uses": int(self.uses[fam][i]),
                                     "successes": int(self.successes[fam][i])})


def select_operator(bank: OperatorBank, family: str, rng) -> str:
    return bank.select(family, rng)


def record_and_update(bank: OperatorBank, removal: str, insertion: str, category: str,
                      elapsed: float) -> OperatorBank:
    bank.record(removal, insertion, category)
    bank.update(elapsed)
    return bank
