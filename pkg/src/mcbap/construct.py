"""Most-constrained-first construction of an initial berth plan."""

from __future__ import annotations

from typing import List, Optional

from .model import Instance, Solution
from .placement import PartialSolution, insert_all


def feasible_position_count(partial: PartialSolution, cid: int) -> int:
    """Grid cells (segment, time step) where ``cid`` fits and finishes by its LFT."""
    return partial.feasible_count(cid)


def _key(partial: PartialSolution, cid: int):
    call = partial.instance.call(cid)
    return (partial.feasible_count(cid), call.est, call.ship_id, cid)


def most_constrained(partial: PartialSolution, pool: Optional[List[int]] = None) -> int:
    calls = partial.unscheduled() if pool is None else pool
    if not calls:
        raise ValueError("no unscheduled call")
    return min(calls, key=lambda c: _key(partial, c))


def construct_partial(instance: Instance) -> PartialSolution:
    ps = PartialSolution(instance)
    return insert_all(ps, ps.unscheduled(), most_constrained, packed=True)


def construct(instance: Instance) -> Solution:
    return construct_partial(instance).to_solution()
