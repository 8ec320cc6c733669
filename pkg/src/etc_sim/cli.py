"""``etc-sim`` command line: validate, run and sweep scenario files.

Exit codes: 0 success, 2 validation failure, 3 divergence or Zeno abort.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import triggers as trg
from .dynamics import DivergenceError
from .engine import metrics, run
from .scenario import ScenarioError, prepare, read_json, scenario_from_dict, with_override
from .traceio import write_outputs

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
SWEEP_KEYS = {"base", "base_file", "parameter", "values", "repetitions", "seed_offset"}
METRIC_COLUMNS = ["total_events", "min_inter_event", "mean_inter_event", "final_disagreement",
                  "final_V", "time_to_tolerance", "zeno_flag", "final_time"]


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _problems(payload) -> list[str]:
    try:
        s = scenario_from_dict(payload)
    except ScenarioError as exc:
        return exc.problems
    return prepare(s).problems


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    try:
        problems = _problems(read_json(args.file))
    except (ScenarioError, OSError) as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    if not problems:
        print(f"{args.file}: valid")
        return EXIT_OK
    print(f"{args.file}: {len(problems)} problem(s)")
    for p in problems:
        print(f"  - {p}")
    return EXIT_INVALID


# ---------------------------------------------------------------------------
# run


def one_line(m: dict) -> str:
    return (f"events={m['total_events']} final_disagreement={m['final_disagreement']:.6g} "
            f"zeno={'yes' if m['zeno_flag'] else 'no'}")


def cmd_run(args) -> int:
    try:
        payload = read_json(args.file)
        scenario = scenario_from_dict(payload)
        problems = prepare(scenario).problems
    except (ScenarioError, OSError) as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    if problems:
        for p in problems:
            _err(f"invalid: {p}")
        return EXIT_INVALID
    try:
        trace = run(scenario, seed=args.seed)
    except DivergenceError as exc:
        _err(f"diverged: {exc}")
        return EXIT_RUNTIME
    summary = write_outputs(trace, args.out)
    print(one_line(summary))
    if trace.zeno_flag:
        _err(f"zeno: {trace.zeno.describe()}")
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def _sweep_spec(path) -> tuple[dict, str, list, int, int]:
    spec = read_json(path)
    problems = []
    unknown = set(spec) - SWEEP_KEYS
    if unknown:
        problems.append(f"sweep: unknown keys {sorted(unknown)}")
    if "base" in spec:
        base = spec["base"]
    elif "base_file" in spec:
        base = read_json(Path(path).parent / spec["base_file"])
    else:
        base = None
        problems.append("sweep: needs 'base' or 'base_file'")
    param = spec.get("parameter")
    if not isinstance(param, str):
        problems.append("sweep: 'parameter' must be a dotted path string")
    values = spec.get("values")
    if not isinstance(values, list) or not values:
        problems.append("sweep: 'values' must be a non-empty list")
    reps = spec.get("repetitions", 1)
    if not isinstance(reps, int) or reps < 1:
        problems.append("sweep: 'repetitions' must be a positive integer")
    if problems:
        raise ScenarioError(problems)
    return base, param, values, reps, int(spec.get("seed_offset", 1))


def _variant(base: dict, param: str, value, rep: int, offset: int) -> dict:
    payload = with_override(base, param, value)
    shift = rep * offset
    payload["seed"] = int(payload.get("seed", 0)) + shift
    rnd = payload.get("initial_state", {}).get("random") if isinstance(
        payload.get("initial_state"), dict) else None
    if rnd is not None and shift:
        rnd["seed"] = int(rnd.get("seed", 0)) + shift
    return payload


def _sweep_job(job) -> dict:
    value, rep, payload = job
    row = {"value": value, "repetition": rep, "seed": payload["seed"]}
    s = scenario_from_dict(payload)
    try:
        trace = run(s)
    except DivergenceError:
        row["status"] = "diverged"
        return row
    m = metrics(trace)
    row["status"] = trace.status
    row.update({k: m[k] for k in METRIC_COLUMNS})
    if s.trigger.kind == trg.TIME_DEPENDENT:
        r = trace.info["radius"]
        row["radius_bound"] = r
        row["within_radius"] = bool(m["final_disagreement"] <= r * 1.1)
    return row


def _trend(xs, ys) -> str:
    """Direction of the per-value means of ``ys`` as ``xs`` increases."""
    pairs = sorted((x, y) for x, y in zip(xs, ys) if y is not None)
    levels = {}
    for x, y in pairs:
        levels.setdefault(x, []).append(y)
    means = [float(np.mean(v)) for _, v in sorted(levels.items())]
    d = np.diff(means)
    if d.size == 0 or np.all(d == 0):
        return "flat"
    if np.all(d <= 0):
        return "nonincreasing"
    if np.all(d >= 0):
        return "nondecreasing"
    return "mixed"


def _jobs(arg: Optional[int]) -> int:
    env = os.environ.get("ETC_SIM_JOBS")
    if env:
        return max(1, int(env))
    return max(1, arg or 1)


def cmd_sweep(args) -> int:
    try:
        base, param, values, reps, offset = _sweep_spec(args.file)
        jobs = [(v, r, _variant(base, param, v, r, offset)) for v in values for r in range(reps)]
        problems = []
        for v, r, payload in jobs:
            problems += [f"value={v!r} rep={r}: {p}" for p in _problems(payload)]
    except (ScenarioError, OSError) as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    if problems:
        for p in problems:
            _err(f"invalid: {p}")
        return EXIT_INVALID

    n_workers = _jobs(args.jobs)
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]

    numeric = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values)
    ev_trend = dis_trend = "n/a"
    if numeric:
        xs = [r["value"] for r in rows]
        ev_trend = _trend(xs, [r.get("total_events") for r in rows])
        dis_trend = _trend(xs, [r.get("final_disagreement") for r in rows])
    columns = ["parameter", "value", "repetition", "seed", "status"] + METRIC_COLUMNS
    if any("radius_bound" in r for r in rows):
        columns += ["radius_bound", "within_radius"]
    columns += ["events_trend", "disagreement_trend"]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", restval="")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "parameter": param, "events_trend": ev_trend,
                        "disagreement_trend": dis_trend})

    print(f"{len(rows)} runs written to {out / 'sweep.csv'}; "
          f"events vs value: {ev_trend}; disagreement vs value: {dis_trend}")
    if param.split(".")[-1] == "sigma" and ev_trend not in ("nonincreasing", "flat", "n/a"):
        print("warning: event count is not non-increasing in sigma", file=sys.stderr)
    if any(r.get("within_radius") is False for r in rows):
        print("warning: some runs end outside the time-dependent radius bound", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etc-sim",
                                description="Event-triggered consensus simulator")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("file")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter sweep")
    s.add_argument("file")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--jobs", type=int, default=1,
                   help="worker processes (ETC_SIM_JOBS overrides)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
