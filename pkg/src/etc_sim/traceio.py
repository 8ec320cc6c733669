"""CSV/JSON export of traces and the matching reader.

Floats are written with ``repr`` so a trace read back from disk is
bit-identical to the one in memory and reproduces its metrics exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .engine import Event, Trace, metrics
from .zeno import ZenoFlag

TRACE_FILE = "trace.csv"
EVENTS_FILE = "events.csv"
SUMMARY_FILE = "summary.json"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(payload) -> str:
    return json.dumps(payload, indent=2, default=_json_default)


def write_trace_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace.columns)
        for t, row, V, d in zip(trace.times, trace.states, trace.V, trace.disagreement):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row]
                       + [repr(float(V)), repr(float(d))])


def write_events_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "t", "kind"])
        for ev in trace.events:
            w.writerow([ev.agent + 1, repr(float(ev.t)), ev.kind])


def summary_payload(trace: Trace) -> dict:
    out = metrics(trace)
    z = trace.zeno
    out["layout"] = {
        "dynamics": trace.layout, "n_agents": trace.n_agents, "dim": trace.dim,
        "tolerance": trace.tolerance, "status": trace.status,
        "zeno": None if z is None else {
            "agent": z.agent + 1, "time": z.time, "reason": z.reason,
            "accumulation_estimate": z.accumulation_estimate},
    }
    out["info"] = trace.info
    return out


def write_outputs(trace: Trace, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out / TRACE_FILE)
    write_events_csv(trace, out / EVENTS_FILE)
    summary = summary_payload(trace)
    (out / SUMMARY_FILE).write_text(dumps(summary) + "\n")
    return summary


def read_trace(out_dir) -> Trace:
    """Rebuild a Trace from the three files written by ``write_outputs``."""
    out = Path(out_dir)
    summary = json.loads((out / SUMMARY_FILE).read_text())
    lay = summary["layout"]
    with open(out / TRACE_FILE, newline="") as fh:
        rows = list(csv.reader(fh))
    columns, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    with open(out / EVENTS_FILE, newline="") as fh:
        events = [Event(int(r["agent"]) - 1, float(r["t"]), r["kind"])
                  for r in csv.DictReader(fh)]
    z = lay["zeno"]
    flag = None if z is None else ZenoFlag(z["agent"] - 1, z["time"], z["reason"],
                                           z["accumulation_estimate"])
    return Trace(layout=lay["dynamics"], n_agents=lay["n_agents"], dim=lay["dim"],
                 columns=columns, times=data[:, 0], states=data[:, 1:-2], V=data[:, -2],
                 disagreement=data[:, -1], events=events, status=lay["status"], zeno=flag,
                 tolerance=lay["tolerance"], info=summary.get("info", {}))
