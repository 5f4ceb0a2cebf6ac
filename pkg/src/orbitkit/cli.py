"""Command line front end: ``orbitkit validate`` and ``orbitkit run``.

Exit codes: 0 when every task passes, 2 when any task fails or errors, 3 for
an invalid manifest.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .expr import parse, simplify, to_text
from .fields import bracket_closure, lie_bracket
from .flow import FlowOptions, Incomplete
from .geometry import sample_points
from .intertwine import (
    TrivializationError,
    build_trivialization,
    check_intertwine,
    overlap_consistency,
    rank_along_orbit,
    sample_fiber,
    sample_u0,
    verify_trivialization,
)
from .manifest import TASKS, Manifest, load
from .orbit import chart_jacobian, distinguished_chart, numerical_rank, orbit_dimension, sample_orbit

EXIT_OK, EXIT_FAIL, EXIT_MANIFEST = 0, 2, 3
OVERLAP_TOL = 1e-6

log = logging.getLogger("orbitkit")


class TaskContext:
    def __init__(self, manifest: Manifest, task: dict, opts: FlowOptions, seed: int, workers: int, out_dir: Path):
        self.manifest = manifest
        self.task = task
        self.opts = opts
        self.seed = seed
        self.workers = workers
        self.out_dir = out_dir
        self.files: list[str] = []
        _, defaults = TASKS[task["kind"]]
        self.args = {**defaults, **{k: v for k, v in task.items() if k in defaults}}

    def csv_path(self, suffix: str = "") -> Path:
        name = self.args.get("csv") or f"{self.task['name']}{suffix}.csv"
        self.files.append(name)
        return self.out_dir / name


def _expect(result: dict, expect: dict) -> list[str]:
    """Mismatches between ``result`` and the task's ``expect`` block.

    ``min_<key>`` and ``max_<key>`` bound a numeric result; any other key must
    match exactly.
    """
    problems = []
    for key, want in expect.items():
        if key.startswith(("min_", "max_")) and key[4:] in result:
            got = result[key[4:]]
            bad = got < want if key.startswith("min_") else got > want
            if bad:
                problems.append(f"{key[4:]} = {got}, expected {'>=' if key.startswith('min_') else '<='} {want}")
        elif key in result:
            if result[key] != want:
                problems.append(f"{key} = {result[key]!r}, expected {want!r}")
        else:
            problems.append(f"expected key {key!r} not in result")
    return problems


# ---------------------------------------------------------------------------
# task implementations: each returns (passed, result payload)


def _task_bracket(ctx: TaskContext):
    m, t = ctx.manifest, ctx.task
    X, Y = m.fields[t["X"]], m.fields[t["Y"]]
    Z = lie_bracket(X, Y)
    result = {"components": Z.text_components(), "zero": Z.is_zero}
    exp = dict(t.get("expect", {}))
    if "components" in exp:
        exp["components"] = [to_text(simplify(parse(c, X.space.coords))) for c in exp["components"]]
    return True, result, exp


def _task_closure(ctx: TaskContext):
    F = ctx.manifest.families[ctx.task["family"]]
    terms = bracket_closure(F, int(ctx.args["depth"]))
    pts = [np.asarray(p, dtype=float) for p in ctx.args["points"]]
    if ctx.args["random_points"]:
        pts.extend(sample_points(F.space, int(ctx.args["random_points"]), seed=ctx.seed))
    ranks = [numerical_rank(np.array([term.field(p) for term in terms]).T) for p in pts]
    result: dict[str, Any] = {"count": len(terms), "terms": [term.text for term in terms], "ranks": ranks}
    if ranks:
        result["min_rank"] = min(ranks)
    return True, result, ctx.task.get("expect", {})


def _task_rank(ctx: TaskContext):
    F = ctx.manifest.families[ctx.task["family"]]
    a = ctx.args
    od = orbit_dimension(
        F, ctx.task["point"], a["bracket_depth"], a["push_words"], a["push_len"], a["push_t_max"], a["rank_rel_tol"],
        ctx.seed, ctx.opts,
    )
    return True, od.as_dict(), ctx.task.get("expect", {})


def _task_chart(ctx: TaskContext):
    F = ctx.manifest.families[ctx.task["family"]]
    a = ctx.args
    c = distinguished_chart(
        F, ctx.task["point"], a["bracket_depth"], a["generators_only"], a["box"], a["cond_max"],
        push_t_max=a["push_t_max"], seed=ctx.seed, opts=ctx.opts,
    )
    result = c.as_dict()
    result["jacobian_rank"] = numerical_rank(chart_jacobian(c, np.zeros(c.k)))
    return result["jacobian_rank"] == c.k, result, ctx.task.get("expect", {})


def _task_sample(ctx: TaskContext):
    F = ctx.manifest.families[ctx.task["family"]]
    a = ctx.args
    s = sample_orbit(F, ctx.task["point"], int(ctx.task["budget"]), a["max_len"], a["t_max"], a["cell"], ctx.seed,
                     ctx.workers, ctx.opts)
    s.to_csv(ctx.csv_path())
    return True, s.summary(), ctx.task.get("expect", {})


def _task_check_map(ctx: TaskContext):
    S = ctx.manifest.systems[ctx.task["system"]]
    rep = check_intertwine(S, int(ctx.args["n_samples"]), float(ctx.args["tol"]), ctx.seed)
    return rep.passed, rep.as_dict(), ctx.task.get("expect", {})


def _task_rank_orbit(ctx: TaskContext):
    S = ctx.manifest.systems[ctx.task["system"]]
    a = ctx.args
    rep = rank_along_orbit(S, ctx.task["point"], int(a["n_words"]), float(a["tol"]), ctx.seed, int(a["max_len"]),
                           float(a["t_max"]), ctx.opts)
    result = rep.as_dict()
    result["rank"] = rep.ranks[0]
    return rep.constant, result, ctx.task.get("expect", {})


def _task_trivialize(ctx: TaskContext):
    S = ctx.manifest.systems[ctx.task["system"]]
    a = ctx.args
    kw = dict(
        box=a["box"], push_t_max=a["push_t_max"], fiber_budget=int(a["fiber_budget"]), fiber_cell=a["fiber_cell"],
        fiber_max_len=int(a["fiber_max_len"]), fiber_t_max=a["fiber_t_max"], seed=ctx.seed, workers=ctx.workers,
        opts=ctx.opts,
    )
    try:
        triv = build_trivialization(S, ctx.task["m1"], ctx.task["u0star"], **kw)
    except TrivializationError as exc:
        return False, {"trivialization": exc.as_dict()}, {}
    triv.fiber.to_csv(ctx.csv_path("-fiber"))
    ver = verify_trivialization(triv, int(a["n_samples"]), float(a["tol"]), ctx.seed)
    result = {**triv.as_dict(), "verify": ver.as_dict(), "fiber_dimension": triv.fiber.dimension}
    passed = ver.passed
    if a["overlap"] is not None:
        ov = a["overlap"]
        try:
            other = build_trivialization(S, ov["m1"], ov["u0star"], **{**kw, "fiber_budget": 200})
        except TrivializationError as exc:
            result["overlap"] = {"trivialization": exc.as_dict(), "pass": False}
            return False, result, ctx.task.get("expect", {})
        pts = sample_u0(triv, int(ov.get("n_samples", 100)), ctx.seed + 1, shrink=float(ov.get("shrink", 0.6)))
        rep = overlap_consistency(triv, other, pts)
        rep["pass"] = rep["shared_samples"] > 0 and rep["max_discrepancy"] <= OVERLAP_TOL
        result["overlap"] = rep
        passed = passed and rep["pass"]
    return passed, result, ctx.task.get("expect", {})


def _task_fiber(ctx: TaskContext):
    S = ctx.manifest.systems[ctx.task["system"]]
    a = ctx.args
    try:
        fs = sample_fiber(S, ctx.task["m1"], ctx.task["u0star"], int(a["budget"]), a["cell"], int(a["max_len"]),
                          a["t_max"], ctx.seed, ctx.workers, ctx.opts)
    except TrivializationError as exc:
        return False, {"trivialization": exc.as_dict()}, {}
    fs.to_csv(ctx.csv_path())
    return True, fs.as_dict(), ctx.task.get("expect", {})


RUNNERS: dict[str, Callable] = {
    "bracket": _task_bracket,
    "closure": _task_closure,
    "rank": _task_rank,
    "chart": _task_chart,
    "sample": _task_sample,
    "check-map": _task_check_map,
    "rank-orbit": _task_rank_orbit,
    "trivialize": _task_trivialize,
    "fiber": _task_fiber,
}


def _options(base: dict, override: dict | None) -> dict:
    out = dict(base)
    out.update(override or {})
    return out


def _flow_options(d: dict) -> FlowOptions:
    return FlowOptions().updated(
        method=d.get("method"), rel_tol=d.get("rtol"), abs_tol=d.get("atol"), max_step=d.get("max_step"),
        escape_norm=d.get("escape_norm"),
    )


def run_manifest(manifest: Manifest, seed: int = 0, workers: int = 1, cli_options: dict | None = None,
                 out_dir: Path = Path(".")) -> dict:
    """Execute every task in order and return the report dictionary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    global_opts = _options(manifest.options, {k: v for k, v in (cli_options or {}).items() if v is not None})
    entries = []
    counts = {"pass": 0, "fail": 0, "error": 0}
    t_start = time.perf_counter()
    for task in manifest.tasks:
        opts_dict = _options(global_opts, task.get("options"))
        task_seed = int(task.get("seed", seed))
        ctx = TaskContext(manifest, task, _flow_options(opts_dict), task_seed, workers, out_dir)
        t0 = time.perf_counter()
        entry: dict[str, Any] = {"name": task["name"], "kind": task["kind"]}
        try:
            passed, result, expect = RUNNERS[task["kind"]](ctx)
            problems = _expect(result, expect)
            if problems:
                result["expect_failures"] = problems
            status = "pass" if passed and not problems else "fail"
        except Incomplete as exc:
            status, result = "fail", exc.as_dict()
        except Exception as exc:  # reported per task, the run continues
            log.exception("task %s raised", task["name"])
            status, result = "error", {"error": type(exc).__name__, "message": str(exc)}
        counts[status] += 1
        entry.update(status=status, result=result, files=ctx.files, options=ctx.opts.as_dict(), seed=task_seed,
                     wall_time=round(time.perf_counter() - t0, 6))
        entries.append(entry)
        log.info("%s [%s] %s", task["name"], task["kind"], status)
    return {
        "orbitkit": __version__,
        "manifest": manifest.path.name,
        "seed": seed,
        "workers": workers,
        "tasks": entries,
        "summary": counts,
        "wall_time": round(time.perf_counter() - t_start, 6),
    }


def strip_wall_time(report: Any) -> Any:
    """Report payload without the wall-time entries (for reproducibility checks)."""
    if isinstance(report, dict):
        return {k: strip_wall_time(v) for k, v in report.items() if k != "wall_time"}
    if isinstance(report, list):
        return [strip_wall_time(v) for v in report]
    return report


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def cmd_validate(args) -> int:
    try:
        _, diags = load(args.manifest)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    for d in diags:
        print(d)
    if not diags:
        print(f"{args.manifest}: ok")
    return EXIT_OK if not diags else EXIT_MANIFEST


def cmd_run(args) -> int:
    try:
        manifest, diags = load(args.manifest)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    if diags:
        for d in diags:
            print(d, file=sys.stderr)
        return EXIT_MANIFEST
    out = Path(args.out)
    cli_opts = {"rtol": args.rtol, "atol": args.atol, "max_step": args.max_step}
    report = run_manifest(manifest, args.seed, args.workers, cli_opts, out.parent if str(out.parent) else Path("."))
    out.write_text(json.dumps(report, indent=2, default=_json_default) + "\n")
    for e in report["tasks"]:
        print(f"{e['status']:5s} {e['kind']:10s} {e['name']}")
    s = report["summary"]
    print(f"{s['pass']} passed, {s['fail']} failed, {s['error']} errors; report: {out}")
    return EXIT_OK if s["fail"] == 0 and s["error"] == 0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orbitkit", description="Orbits of vector-field families and intertwining maps.")
    p.add_argument("--version", action="version", version=f"orbitkit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log task progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a manifest without running flows")
    v.add_argument("manifest")
    v.set_defaults(func=cmd_validate)
    r = sub.add_parser("run", help="run every task of a manifest")
    r.add_argument("manifest")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--rtol", type=float)
    r.add_argument("--atol", type=float)
    r.add_argument("--max-step", type=float, dest="max_step")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", default="report.json")
    r.set_defaults(func=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
