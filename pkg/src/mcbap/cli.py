"""Command line interface: ``mcbap <command> ...``.

Exit codes: 0 success, 2 infeasible solution, 3 I/O or format error,
4 parameter out of range.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

from . import instgen
from .model import check_feasibility, evaluate, gap
from .oracle import export_lp, substitute_and_check
from .plot import write_plots
from .search import LS_POLICIES, VARIANTS, SearchParams, run_alns, write_operator_stats, write_trace

EXIT_OK, EXIT_INFEASIBLE, EXIT_IO, EXIT_PARAM = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def data_dir() -> Path:
    return Path(os.environ.get("MCBAP_DATA_DIR", "bench"))


# -- generate -----------------------------------------------------------------

def _ensure_empty(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise CliError(f"{path} exists and is not empty (use --force)", EXIT_IO)


def cmd_generate(args) -> int:
    root = Path(args.out) if args.out else data_dir()
    if args.grid:
        target = root / args.grid
        if target.exists():
            _ensure_empty(target, args.force)
        paths = instgen.write_grid(args.grid, root)
        print(f"wrote {len(paths)} instances under {target}")
        return EXIT_OK
    if args.ships is None:
        raise CliError("give --grid or --ships", EXIT_PARAM)
    try:
        cfg = instgen.GeneratorConfig(seed=args.seed, n_ships=args.ships, n_external_per_port=args.external,
                                      segment_length=args.segment, fuel_price=args.fuel_price,
                                      time_step=args.time_step,
                                      ports=tuple(args.ports.split(",")) if args.ports else None,
                                      planning_window=args.window)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_PARAM)
    path = root / cfg.group / f"seed{cfg.seed}.json"
    if path.exists() and not args.force:
        raise CliError(f"{path} exists (use --force)", EXIT_IO)
    instgen.write_instance(instgen.generate(cfg), path)
    print(path)
    return EXIT_OK


# -- solve --------------------------------------------------------------------

def _parse_overrides(items: List[str]) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise CliError(f"--param expects name=value, got {item!r}", EXIT_PARAM)
        k, v = item.split("=", 1)
        try:
            out[k] = int(v) if k == "kappa" else float(v)
        except ValueError:
            raise CliError(f"bad value for {k}: {v!r}", EXIT_PARAM)
    return out


def _manifest_from_args(args) -> dict:
    if args.manifest:
        try:
            man = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read manifest: {exc}", EXIT_IO)
        if man.get("kind") != "mcbap-manifest":
            raise CliError("not a run manifest", EXIT_IO)
        if args.out:
            man["output_dir"] = args.out
        return man
    if not args.instance:
        raise CliError("give an instance file or --manifest", EXIT_PARAM)
    params = dict(time_limit=args.time_limit, seed=args.seed, ls_policy=args.ls_policy,
                  variant=args.variant, max_iterations=args.max_iterations)
    params.update(_parse_overrides(args.param))
    return {"schema_version": 1, "kind": "mcbap-manifest", "instance": str(args.instance),
            "params": params, "repeats": args.repeats, "unsafe": args.unsafe,
            "output_dir": args.out or "runs/" + Path(args.instance).stem}


def _params(man: dict) -> SearchParams:
    try:
        p = SearchParams.from_dict(man["params"])
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc), EXIT_PARAM)
    bad = p.out_of_range()
    if p.ls_policy not in LS_POLICIES or p.variant not in VARIANTS:
        raise CliError("; ".join(bad), EXIT_PARAM)
    if bad and not man.get("unsafe"):
        raise CliError("parameters out of range (use --unsafe): " + "; ".join(bad), EXIT_PARAM)
    return p


def _load_instance(path):
    try:
        return instgen.read_instance(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_IO)


def cmd_solve(args) -> int:
    man = _manifest_from_args(args)
    params = _params(man)
    inst = _load_instance(man["instance"])
    out = Path(man["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(man, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    repeats = int(man.get("repeats", 1))
    runs = []
    for r in range(repeats):
        p = SearchParams.from_dict({**params.to_dict(), "seed": params.seed + r})
        res = run_alns(inst, p)
        run_dir = out if repeats == 1 else out / f"run{r}"
        run_dir.mkdir(parents=True, exist_ok=True)
        instgen.write_solution(inst, res.best, run_dir / "solution.json",
                               extra={"objective": res.best_objective, "seed": p.seed})
        write_trace(run_dir / "trace.csv", res)
        write_operator_stats(run_dir / "operators.csv", res)
        runs.append({"seed": p.seed, "best": res.best_objective, "initial": res.initial_objective,
                     "iterations": res.iterations, "elapsed": res.elapsed})
        print(f"seed {p.seed}: construction {res.initial_objective:.2f} best {res.best_objective:.2f} "
              f"iterations {res.iterations}")
    best = min(r["best"] for r in runs)
    gaps = [gap(r["best"], best) for r in runs]
    summary = {"instance": man["instance"], "runs": runs, "best_found": best,
               "gap_avg": statistics.fmean(gaps), "gap_best": min(gaps), "gap_worst": max(gaps)}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if repeats > 1:
        print(f"gap to best found: avg {summary['gap_avg']:.4%} best {summary['gap_best']:.4%} "
              f"worst {summary['gap_worst']:.4%}")
    return EXIT_OK


# -- evaluate / plot / export ------------------------------------------------------

def _load_solution(path):
    try:
        return instgen.read_solution(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_IO)


def cmd_evaluate(args) -> int:
    inst = _load_instance(args.instance)
    sol = _load_solution(args.solution)
    missing = [c.name for c in inst.port_calls if c.id not in sol]
    unknown = [cid for cid in sol.assignments if cid not in {c.id for c in inst.port_calls}]
    if unknown:
        raise CliError(f"solution refers to unknown calls {unknown[:5]}", EXIT_IO)
    violations = check_feasibility(inst, sol)
    if not missing:
        cb = evaluate(inst, sol)
        for k, v in cb.as_dict().items():
            print(f"{k:12s} {v:16.2f}")
        if args.best is not None:
            print(f"gap          {gap(cb.total, args.best):16.6f}")
    for v in violations:
        print(f"violation {v.kind}: {v.message}")
    return EXIT_INFEASIBLE if violations else EXIT_OK


def cmd_plot(args) -> int:
    inst = _load_instance(args.instance)
    sol = _load_solution(args.solution) if args.solution else None
    for path in write_plots(inst, sol, args.out).values():
        print(path)
    return EXIT_OK


def cmd_export(args) -> int:
    inst = _load_instance(args.instance)
    try:
        export_lp(inst, args.out, discretize=args.discretize)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO)
    print(args.out)
    if args.check:
        rep = substitute_and_check(args.out, inst, _load_solution(args.check))
        print(f"rows {rep.n_rows} violated {len(rep.violated)} objective {rep.objective:.6f}")
        for name, amount in rep.violated[:20]:
            print(f"  {name}: {amount:+.6g}")
        return EXIT_INFEASIBLE if rep.violated else EXIT_OK
    return EXIT_OK


# -- bench --------------------------------------------------------------------

def _bench_one(job):
    path, params = job
    inst = instgen.read_instance(path)
    res = run_alns(inst, SearchParams.from_dict(params))
    return {"instance": str(path), "group": Path(path).parent.name, "seed": params["seed"],
            "construction": res.initial_objective, "best": res.best_objective,
            "iterations": res.iterations}


def cmd_bench(args) -> int:
    root = Path(args.root) if args.root else data_dir() / args.kind
    files = sorted(root.glob("*/seed*.json"))
    files = [f for f in files if not f.name.endswith(".oracle.json")]
    if args.groups:
        keep = set(args.groups.split(","))
        files = [f for f in files if f.parent.name in keep]
    if not files:
        raise CliError(f"no instances under {root}", EXIT_IO)
    base = dict(time_limit=args.time_limit, ls_policy=args.ls_policy, variant=args.variant,
                max_iterations=args.max_iterations)
    base.update(_parse_overrides(args.param))
    _params({"params": {**base, "seed": args.seed}, "unsafe": args.unsafe})
    jobs = [(f, {**base, "seed": args.seed + r}) for f in files for r in range(args.repeats)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_bench_one, jobs))
    else:
        rows = [_bench_one(j) for j in jobs]
    best = {}
    for r in rows:
        best[r["instance"]] = min(best.get(r["instance"], float("inf")), r["best"])
    for r in rows:
        r["gap"] = gap(r["best"], best[r["instance"]])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "instances", "runs", "construction_avg", "best_avg", "gap_avg", "gap_best",
                    "gap_worst", "iterations_avg"])
        for g in sorted({r["group"] for r in rows}, key=lambda s: tuple(float(t) for t in s.split("_"))):
            sub = [r for r in rows if r["group"] == g]
            per_inst = {}
            for r in sub:
                per_inst.setdefault(r["instance"], []).append(r["gap"])
            w.writerow([g, len(per_inst), len(sub),
                        f"{statistics.fmean(r['construction'] for r in sub):.2f}",
                        f"{statistics.fmean(r['best'] for r in sub):.2f}",
                        f"{statistics.fmean(r['gap'] for r in sub):.6f}",
                        f"{statistics.fmean(min(v) for v in per_inst.values()):.6f}",
                        f"{statistics.fmean(max(v) for v in per_inst.values()):.6f}",
                        f"{statistics.fmean(r['iterations'] for r in sub):.1f}"])
    runs_path = out.with_name(out.stem + "_runs.csv")
    with open(runs_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    manifest = {"schema_version": 1, "kind": "mcbap-bench-manifest", "root": str(root),
                "params": base, "seed": args.seed, "repeats": args.repeats, "groups": args.groups}
    out.with_name(out.stem + "_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(out)
    return EXIT_OK


# -- wiring -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcbap", description="Multi-port continuous berth allocation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write benchmark instances")
    g.add_argument("--grid", choices=("main", "small"))
    g.add_argument("--ships", type=int)
    g.add_argument("--external", type=int, default=5)
    g.add_argument("--segment", type=float, default=10.0)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--fuel-price", type=float, default=500.0)
    g.add_argument("--time-step", type=float, default=1.0)
    g.add_argument("--window", type=float, help="planning window in hours (default 3 x longest route span)")
    g.add_argument("--ports", help="comma separated subset, e.g. NLRTM,DEHAM")
    g.add_argument("--out", help="root directory (default $MCBAP_DATA_DIR or ./bench)")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_generate)

    def search_flags(p):
        p.add_argument("--time-limit", type=float, default=300.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--variant", choices=VARIANTS, default="alns")
        p.add_argument("--ls-policy", choices=LS_POLICIES, default="on-improve")
        p.add_argument("--max-iterations", type=int,
                       help="fixed iteration budget on a deterministic clock")
        p.add_argument("--param", action="append", metavar="NAME=VALUE",
                       help="override a tuned parameter, e.g. rho=0.4")
        p.add_argument("--repeats", type=int, default=1)
        p.add_argument("--unsafe", action="store_true", help="allow parameters outside the tuning ranges")

    s = sub.add_parser("solve", help="run the ALNS on one instance")
    s.add_argument("instance", nargs="?")
    s.add_argument("--manifest")
    s.add_argument("--out")
    search_flags(s)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("evaluate", help="cost breakdown and feasibility report")
    e.add_argument("instance")
    e.add_argument("solution")
    e.add_argument("--best", type=float, help="best known objective for the gap")
    e.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="one SVG per port")
    p.add_argument("instance")
    p.add_argument("solution", nargs="?")
    p.add_argument("--out", default="plots")
    p.set_defaults(func=cmd_plot)

    x = sub.add_parser("export-mip", help="write the MIP in CPLEX LP format")
    x.add_argument("instance")
    x.add_argument("--out", required=True)
    x.add_argument("--discretize", action="store_true", help="tie x and y to the grids")
    x.add_argument("--check", metavar="SOLUTION", help="substitute a solution into the model")
    x.set_defaults(func=cmd_export)

    b = sub.add_parser("bench", help="solve a benchmark tree and write the gap table")
    b.add_argument("--kind", default="main")
    b.add_argument("--root")
    b.add_argument("--groups", help="comma separated X_Y_Z groups")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", default="bench_results.csv")
    search_flags(b)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
