"""Exact reference solutions for tiny instances and a MIP model exporter.

``brute_force`` enumerates every free (position, start) cell on the same grid
the heuristics use, depth first with branch and bound.  Leg speeds are not
branched on: for fixed berth starts the slowest speed that arrives in time is
never worse than any faster one (less fuel and less waiting), so enumerating
the dominated speeds cannot change the optimum.
"""

from __future__ import annotations

import heapq
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .model import EPS, Instance, ModelError, Solution, call_handling, evaluate
from .placement import PartialSolution, all_cells


class OracleRefusal(RuntimeError):
    """Instance or search exceeds the configured caps; no answer is given."""


@dataclass
class OracleConfig:
    max_ships: int = 4
    max_calls: int = 8
    node_limit: int = 2_000_000
    time_step: Optional[float] = None  # defaults to the instance grid
    position_step: Optional[float] = None

    def __post_init__(self):
        if self.max_ships > 4 or self.max_calls > 8:
            raise ValueError("oracle caps are at most 4 ships and 8 calls")


@dataclass
class OracleResult:
    solution: Solution
    objective: float
    nodes: int
    vector: Tuple[Tuple[float, float], ...] = field(default=())


def _check_caps(instance: Instance, config: OracleConfig) -> None:
    if len(instance.ships) > config.max_ships:
        raise OracleRefusal(f"{len(instance.ships)} ships exceed the cap of {config.max_ships}")
    if instance.n_calls > config.max_calls:
        raise OracleRefusal(f"{instance.n_calls} calls exceed the cap of {config.max_calls}")
    if config.time_step is not None and abs(config.time_step - instance.time_step) > EPS:
        raise OracleRefusal("oracle time grid must equal the instance time grid")
    if config.position_step is not None:
        for p in instance.ports:
            if abs(config.position_step - p.segment_length) > EPS:
                raise OracleRefusal(f"oracle position grid differs from segment length at {p.id}")


def _call_order(instance: Instance) -> List[int]:
    """Calls merged across routes by EST, each route kept in sailing order."""
    heads = []
    for s in instance.ships:
        route = s.route
        heads.append((instance.call(route[0]).est, s.id, 0, route))
    heapq.heapify(heads)
    order = []
    while heads:
        _, sid, i, route = heapq.heappop(heads)
        order.append(route[i])
        if i + 1 < len(route):
            heapq.heappush(heads, (instance.call(route[i + 1]).est, sid, i + 1, route))
    return order


def brute_force(instance: Instance, config: Optional[OracleConfig] = None) -> OracleResult:
    config = config or OracleConfig()
    _check_caps(instance, config)
    order = _call_order(instance)
    ps = PartialSolution(instance)
    ids = sorted(c.id for c in instance.port_calls)
    # legs whose two ends are both still open contribute at least their slowest fuel
    open_leg_floor = {cid: float(instance.leg_tables[cid][1][-1]) for cid in ids
                      if instance.succ[cid] is not None}
    best = {"cost": math.inf, "vec": None, "pos": None}
    nodes = 0

    def bound(depth: int) -> float:
        lb = 0.0
        rest = order[depth:]
        for u in rest:
            cand = ps.candidates(u)
            if len(cand) == 0:
                return math.inf
            lb += float(cand.cost[0])
            nxt = instance.succ[u]
            if nxt is not None and nxt not in ps.pos:
                lb += open_leg_floor[u]
        return lb

    def vector():
        return tuple(ps.pos[c] for c in ids)

    def dfs(depth: int, partial_cost: float) -> None:
        nonlocal nodes
        nodes += 1
        if nodes > config.node_limit:
            raise OracleRefusal(f"node limit {config.node_limit} exceeded")
        if depth == len(order):
            cost = ps.cost()
            vec = vector()
            if cost < best["cost"] - 1e-6 or (abs(cost - best["cost"]) <= 1e-6 and vec < best["vec"]):
                best.update(cost=cost, vec=vec, pos=dict(ps.pos))
            return
        cid = order[depth]
        cells = all_cells(ps, cid)
        for j in range(len(cells)):
            inc = float(cells.cost[j])
            if partial_cost + inc > best["cost"] + 1e-6:
                break  # cells are sorted by cost
            x, y = float(cells.x[j]), float(cells.y[j])
            ps.place(cid, x, y)
            if partial_cost + inc + bound(depth + 1) <= best["cost"] + 1e-6:
                dfs(depth + 1, partial_cost + inc)
            ps.unplace(cid)

    dfs(0, 0.0)
    if best["pos"] is None:
        raise ModelError("no feasible grid solution")
    final = PartialSolution(instance, best["pos"])
    sol = final.to_solution()
    return OracleResult(sol, evaluate(instance, sol).total, nodes, best["vec"])


def oracle_cache_path(instance_path) -> Path:
    p = Path(instance_path)
    return p.with_name(p.stem + ".oracle.json")


def write_oracle_cache(path, instance: Instance, result: OracleResult) -> None:
    from .instgen import solution_to_dict
    doc = {"schema_version": 1, "kind": "mcbap-oracle", "objective": result.objective,
           "nodes": result.nodes, "solution": solution_to_dict(instance, result.solution)}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_oracle_cache(path) -> Tuple[float, Solution]:
    from .instgen import solution_from_dict
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != 1 or doc.get("kind") != "mcbap-oracle":
        raise ValueError(f"{path}: not an oracle cache file")
    return float(doc["objective"]), solution_from_dict(doc["solution"], str(path))


# -- MIP export ---------------------------------------------------------------

def _fmt(v: float) -> str:
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


class _LP:
    def __init__(self):
        self.rows: List[Tuple[str, Dict[str, float], str, float]] = []
        self.bounds: Dict[str, Tuple[Optional[float], Optional[float]]] = {}
        self.binaries: List[str] = []
        self.integers: List[str] = []
        self.objective: Dict[str, float] = {}

    def var(self, name, lo=0.0, hi=None):
        self.bounds[name] = (lo, hi)
        return name

    def row(self, name, terms: Dict[str, float], sense: str, rhs: float):
        self.rows.append((name, {k: v for k, v in terms.items() if v != 0}, sense, rhs))

    @staticmethod
    def _expr(terms: Dict[str, float]) -> str:
        parts = []
        for k, v in terms.items():
            sign = "-" if v < 0 else "+"
            mag = abs(v)
            parts.append(f"{sign} {k}" if mag == 1 else f"{sign} {_fmt(mag)} {k}")
        out = " ".join(parts) if parts else "0 dummy"
        return out[2:] if out.startswith("+ ") else out

    def text(self) -> str:
        lines = ["\\ MCBAP model", "Minimize"]
        obj = self._expr(self.objective)
        lines.append(f" obj: {obj}")
        lines.append("Subject To")
        for name, terms, sense, rhs in self.rows:
            lines.append(f" {name}: {self._expr(terms)} {sense} {_fmt(rhs)}")
        lines.append("Bounds")
        for name, (lo, hi) in self.bounds.items():
            if name in self.binaries:
                continue
            lo_s = "-inf" if lo is None else _fmt(lo)
            hi_s = "+inf" if hi is None else _fmt(hi)
            lines.append(f" {lo_s} <= {name} <= {hi_s}")
        if self.integers:
            lines.append("General")
            lines.extend(f" {v}" for v in self.integers)
        if self.binaries:
            lines.append("Binary")
            lines.extend(f" {v}" for v in self.binaries)
        lines.append("End")
        return "\n".join(lines) + "\n"


def build_lp(instance: Instance, discretize: bool = False) -> _LP:
    """MIP for the instance.  Per call c of ship i (names use ``i_c``):
    x, y berth position/start; h handling; a arrival; d delay past EFT;
    u excess past LFT; r absolute deviation from the ideal position;
    v_i_c_s leg speed choice; sigma/delta pairwise left-of / before orders.
    With ``discretize`` x and y are tied to the segment and time grids through
    integer multipliers kx/ky, which makes the model match the grid oracle."""
    lp = _LP()
    r = instance.cost_rates
    # starts are bounded by the horizon, so the horizon plus the longest
    # rectangle is a valid big-M for the time ordering rows
    h_top = [c.base_handling * (1 + r.deviation_factor * max(c.ideal_position, instance.port(c.port).quay_length
                                                               - instance.ship_of(c.id).length - c.ideal_position))
             for c in instance.port_calls]
    h_top += [e.duration for e in instance.external_berths]
    M = instance.horizon + max(h_top)
    for call in instance.port_calls:
        ship = instance.ship(call.ship_id)
        port = instance.port(call.port)
        n = f"{ship.id}_{call.call_index}"
        x, y, h, a, d, u, dev = (lp.var(f"{v}_{n}") for v in ("x", "y", "h", "a", "d", "u", "r"))
        lp.bounds[x] = (0.0, port.quay_length - ship.length)
        lp.bounds[y] = (call.est, instance.horizon)
        lp.objective[h] = lp.objective.get(h, 0) + r.handling_rate
        lp.objective[d] = r.delay_rate
        lp.objective[u] = r.lft_penalty_rate
        lp.objective[y] = lp.objective.get(y, 0) + r.waiting_rate
        lp.objective[a] = lp.objective.get(a, 0) - r.waiting_rate
        lp.row(f"hand_{n}", {h: 1.0, dev: -r.deviation_factor * call.base_handling}, "=", call.base_handling)
        lp.row(f"devp_{n}", {dev: 1.0, x: -1.0}, ">=", -call.ideal_position)
        lp.row(f"devm_{n}", {dev: 1.0, x: 1.0}, ">=", call.ideal_position)
        lp.row(f"delay_{n}", {d: 1.0, y: -1.0, h: -1.0}, ">=", -call.eft)
        lp.row(f"late_{n}", {u: 1.0, y: -1.0, h: -1.0}, ">=", -call.lft)
        lp.row(f"wait_{n}", {y: 1.0, a: -1.0}, ">=", 0.0)
        if discretize:
            kx, ky = lp.var(f"kx_{n}"), lp.var(f"ky_{n}")
            lp.integers += [kx, ky]
            lp.row(f"gridx_{n}", {x: 1.0, kx: -port.segment_length}, "=", 0.0)
            lp.row(f"gridy_{n}", {y: 1.0, ky: -instance.time_step}, "=", 0.0)
        prev = instance.pred[call.id]
        if prev is None:
            lp.row(f"first_{n}", {a: 1.0, y: -1.0}, "=", 0.0)
        else:
            pc = instance.call(prev)
            pn = f"{ship.id}_{pc.call_index}"
            dist = instance.leg_distance[prev]
            terms = {a: 1.0, f"y_{pn}": -1.0, f"h_{pn}": -1.0}
            one = {}
            for s, lvl in enumerate(instance.speed_levels):
                v = lp.var(f"v_{pn}_{s}", 0.0, 1.0)
                lp.binaries.append(v)
                terms[v] = -lvl.time_per_distance * dist
                one[v] = 1.0
                lp.objective[v] = r.fuel_price * lvl.fuel_per_distance[ship.ship_class] * dist
            lp.row(f"arr_{n}", terms, "=", 0.0)
            lp.row(f"speed_{pn}", one, "=", 1.0)
    # pairwise non-overlap at each port, externals included as fixed rectangles
    for port in instance.ports:
        items = [("c", cid) for cid in instance.calls_at_port[port.id]]
        items += [("e", k) for k, _ in enumerate(instance.externals_at_port[port.id])]
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                if items[i][0] == "e" and items[j][0] == "e":
                    continue
                _pair_rows(lp, instance, port, items[i], items[j], M)
    return lp


def _rect_terms(instance, port, item):
    """(x terms, x const, length, y terms, y const, h terms, h const, label)."""
    kind, key = item
    if kind == "c":
        call = instance.call(key)
        n = f"{call.ship_id}_{call.call_index}"
        return ({f"x_{n}": 1.0}, 0.0, instance.ship(call.ship_id).length,
                {f"y_{n}": 1.0}, 0.0, {f"h_{n}": 1.0}, 0.0, n)
    e = instance.externals_at_port[port.id][key]
    return ({}, e.position, e.length, {}, e.start, {}, e.duration, f"{port.id}_e{key}")


def _pair_rows(lp, instance, port, a, b, M):
    ax, axc, al, ay, ayc, ah, ahc, an = _rect_terms(instance, port, a)
    bx, bxc, bl, by, byc, bh, bhc, bn = _rect_terms(instance, port, b)
    L = port.quay_length
    tag = f"{an}_{bn}"
    s_ab, s_ba = lp.var(f"sigma_{an}_{bn}", 0, 1), lp.var(f"sigma_{bn}_{an}", 0, 1)
    d_ab, d_ba = lp.var(f"delta_{an}_{bn}", 0, 1), lp.var(f"delta_{bn}_{an}", 0, 1)
    lp.binaries += [s_ab, s_ba, d_ab, d_ba]

    def add(*dicts):
        out: Dict[str, float] = {}
        for dct, k in dicts:
            for name, v in dct.items():
                out[name] = out.get(name, 0.0) + k * v
        return out

    # a left of b:  x_a + l_a <= x_b + L (1 - sigma_ab)
    lp.row(f"left_{tag}", add((ax, 1), (bx, -1), ({s_ab: L}, 1)), "<=", L + bxc - axc - al)
    lp.row(f"left_{bn}_{an}", add((bx, 1), (ax, -1), ({s_ba: L}, 1)), "<=", L + axc - bxc - bl)
    # a before b:  y_a + h_a <= y_b + M (1 - delta_ab)
    lp.row(f"before_{tag}", add((ay, 1), (ah, 1), (by, -1), ({d_ab: M}, 1)), "<=",
           M + byc - ayc - ahc)
    lp.row(f"before_{bn}_{an}", add((by, 1), (bh, 1), (ay, -1), ({d_ba: M}, 1)), "<=",
           M + ayc - byc - bhc)
    lp.row(f"sep_{tag}", {s_ab: 1, s_ba: 1, d_ab: 1, d_ba: 1}, ">=", 1.0)


def export_lp(instance: Instance, path, discretize: bool = False) -> str:
    text = build_lp(instance, discretize).text()
    Path(path).write_text(text, encoding="utf-8")
    return text


# -- reading the model back ------------------------------------------------------

@dataclass
class LPModel:
    objective: Dict[str, float]
    rows: List[Tuple[str, Dict[str, float], str, float]]
    bounds: Dict[str, Tuple[float, float]]
    binaries: List[str]
    integers: List[str]

    @property
    def variables(self) -> List[str]:
        names = set(self.objective) | set(self.bounds) | set(self.binaries) | set(self.integers)
        for _, terms, _, _ in self.rows:
            names.update(terms)
        return sorted(names)


def _parse_expr(text: str) -> Dict[str, float]:
    out: Dict[str, float] = {}
    tokens = text.split()
    i, sign = 0, 1.0
    coef = None
    while i < len(tokens):
        t = tokens[i]
        if t in "+-":
            sign = -1.0 if t == "-" else 1.0
        elif re.fullmatch(r"\d[\d.eE+-]*", t):
            coef = float(t)
        else:
            out[t] = out.get(t, 0.0) + sign * (1.0 if coef is None else coef)
            sign, coef = 1.0, None
        i += 1
    return out


def parse_lp(text: str) -> LPModel:
    section = None
    objective: Dict[str, float] = {}
    rows = []
    bounds: Dict[str, Tuple[float, float]] = {}
    binaries, integers = [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        low = line.lower()
        if low in ("minimize", "subject to", "bounds", "general", "binary", "end"):
            section = low
            continue
        if section == "minimize":
            objective = _parse_expr(line.split(":", 1)[1])
        elif section == "subject to":
            name, body = line.split(":", 1)
            m = re.match(r"(.*?)\s*(<=|>=|=)\s*(\S+)$", body.strip())
            if not m:
                raise ValueError(f"cannot parse row {name}")
            rows.append((name.strip(), _parse_expr(m.group(1)), m.group(2), float(m.group(3))))
        elif section == "bounds":
            lo, _, name, _, hi = line.split()
            bounds[name] = (float(lo), float(hi))
        elif section == "general":
            integers.append(line)
        elif section == "binary":
            binaries.append(line)
    for b in binaries:
        bounds.setdefault(b, (0.0, 1.0))
    return LPModel(objective, rows, bounds, binaries, integers)


@dataclass
class CheckReport:
    violated: List[Tuple[str, float]]
    objective: float
    n_rows: int

    @property
    def ok(self) -> bool:
        return not self.violated


def solution_values(instance: Instance, solution: Solution) -> Dict[str, float]:
    """Variable assignment for the exported model implied by a complete solution."""
    vals: Dict[str, float] = {}
    r = instance.cost_rates
    for call in instance.port_calls:
        if call.id not in solution:
            raise ModelError(f"solution lacks call {call.name}")
        a = solution[call.id]
        n = f"{call.ship_id}_{call.call_index}"
        h = call_handling(instance, solution, call.id)
        vals[f"x_{n}"] = a.berth_position
        vals[f"y_{n}"] = a.berth_start
        vals[f"h_{n}"] = h
        vals[f"r_{n}"] = abs(a.berth_position - call.ideal_position)
        vals[f"d_{n}"] = max(0.0, a.berth_start + h - call.eft)
        vals[f"u_{n}"] = max(0.0, a.berth_start + h - call.lft)
        port = instance.port(call.port)
        vals[f"kx_{n}"] = round(a.berth_position / port.segment_length)
        vals[f"ky_{n}"] = round(a.berth_start / instance.time_step)
        prev = instance.pred[call.id]
        if prev is None:
            vals[f"a_{n}"] = a.berth_start
        else:
            pc = instance.call(prev)
            pn = f"{call.ship_id}_{pc.call_index}"
            speed = solution[prev].leg_speed
            if speed is None:
                raise ModelError(f"leg after {pc.name} has no speed")
            for s in range(len(instance.speed_levels)):
                vals[f"v_{pn}_{s}"] = 1.0 if s == speed else 0.0
            lvl = instance.speed_levels[speed]
            vals[f"a_{n}"] = (solution[prev].berth_start + call_handling(instance, solution, prev)
                              + lvl.time_per_distance * instance.leg_distance[prev])
    for port in instance.ports:
        items = [("c", cid) for cid in instance.calls_at_port[port.id]]
        items += [("e", k) for k, _ in enumerate(instance.externals_at_port[port.id])]
        geo = {}
        for it in items:
            if it[0] == "c":
                call = instance.call(it[1])
                a = solution[it[1]]
                n = f"{call.ship_id}_{call.call_index}"
                geo[n] = (a.berth_position, instance.ship(call.ship_id).length, a.berth_start,
                          call_handling(instance, solution, it[1]))
            else:
                e = instance.externals_at_port[port.id][it[1]]
                geo[f"{port.id}_e{it[1]}"] = (e.position, e.length, e.start, e.duration)
        names = list(geo)
        for i in range(len(names)):
            for j in range(len(names)):
                if i == j:
                    continue
                p, q = geo[names[i]], geo[names[j]]
                vals[f"sigma_{names[i]}_{names[j]}"] = 1.0 if p[0] + p[1] <= q[0] + EPS else 0.0
                vals[f"delta_{names[i]}_{names[j]}"] = 1.0 if p[2] + p[3] <= q[2] + EPS else 0.0
    return vals


def substitute_and_check(model, instance: Instance, solution: Solution, tol: float = 1e-6) -> CheckReport:
    """Plug a solution into an exported model (path, text or parsed) and test every row."""
    if isinstance(model, LPModel):
        lp = model
    else:
        text = str(model)
        if "\n" not in text:
            text = Path(text).read_text(encoding="utf-8")
        lp = parse_lp(text)
    vals = solution_values(instance, solution)
    missing = [v for v in lp.variables if v not in vals]
    if missing:
        raise ValueError(f"model and solution disagree on variables: {missing[:5]}")
    violated = []
    for name, terms, sense, rhs in lp.rows:
        lhs = sum(c * vals[v] for v, c in terms.items())
        scale = tol * max(1.0, abs(rhs), max((abs(c * vals[v]) for v, c in terms.items()), default=0.0))
        bad = (sense == "<=" and lhs > rhs + scale) or (sense == ">=" and lhs < rhs - scale) \
            or (sense == "=" and abs(lhs - rhs) > scale)
        if bad:
            violated.append((name, lhs - rhs))
    for name, (lo, hi) in lp.bounds.items():
        v = vals[name]
        if v < lo - tol * max(1.0, abs(lo)) or v > hi + tol * max(1.0, abs(hi)):
            violated.append((f"bound:{name}", v))
    obj = sum(c * vals[v] for v, c in lp.objective.items())
    return CheckReport(violated, obj, len(lp.rows))


def solve_lp_highs(model, time_limit: float = 60.0):
    """Solve an exported model with HiGHS through scipy.  Returns (status, objective, values)."""
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy.sparse import lil_matrix

    lp = model if isinstance(model, LPModel) else parse_lp(
        Path(model).read_text(encoding="utf-8") if "\n" not in str(model) else str(model))
    names = lp.variables
    index = {n: i for i, n in enumerate(names)}
    c = np.zeros(len(names))
    for n, v in lp.objective.items():
        c[index[n]] = v
    A = lil_matrix((len(lp.rows), len(names)))
    lo = np.full(len(lp.rows), -np.inf)
    hi = np.full(len(lp.rows), np.inf)
    for k, (_, terms, sense, rhs) in enumerate(lp.rows):
        for n, v in terms.items():
            A[k, index[n]] = v
        if sense in ("<=", "="):
            hi[k] = rhs
        if sense in (">=", "="):
            lo[k] = rhs
    lb = np.array([lp.bounds.get(n, (0.0, np.inf))[0] for n in names])
    ub = np.array([lp.bounds.get(n, (0.0, np.inf))[1] for n in names])
    integrality = np.array([1 if (n in lp.binaries or n in lp.integers) else 0 for n in names])
    res = milp(c, constraints=LinearConstraint(A.tocsr(), lo, hi), bounds=Bounds(lb, ub),
               integrality=integrality, options={"time_limit": time_limit, "mip_rel_gap": 1e-9})
    values = dict(zip(names, res.x)) if res.x is not None else {}
    return res.status, (float(res.fun) if res.fun is not None else math.nan), values
