import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from conftest import P3
from etc_sim.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from etc_sim.engine import metrics
from etc_sim.traceio import EVENTS_FILE, SUMMARY_FILE, TRACE_FILE, read_trace

ANCHOR = {"schema_version": 1, "name": "anchor",
          "graph": {"generate": {"kind": "random_connected", "n": 10, "seed": 1}},
          "initial_state": {"random": {"seed": 3}},
          "trigger": {"kind": "BroadcastPhi"}, "horizon": 20}
# frozen after the first verified run
ANCHOR_DISAGREEMENT = 4.383232058925108e-06
ANCHOR_EVENTS = 563


def dump(tmp_path, name, payload):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


def p3(trigger, **extra):
    return dict({"graph": P3, "initial_state": {"x": [0, 1, 2]}, "trigger": trigger,
                 "horizon": 5}, **extra)


# -- validate ------------------------------------------------------------------

def test_validate_valid(tmp_path, capsys):
    f = dump(tmp_path, "ok.json", p3({"kind": "BroadcastPhi"}))
    assert main(["validate", f]) == EXIT_OK
    assert "valid" in capsys.readouterr().out


def test_validate_periodic_bound_message(tmp_path, capsys):
    f = dump(tmp_path, "bad.json", p3({"kind": "PeriodicZhat", "h": 0.2}))
    assert main(["validate", f]) == EXIT_INVALID
    out = capsys.readouterr().out
    # lambda_N(P3) = 3
    assert "h <= 1/(2 lambda_N) = 0.166667 violated" in out and "[PeriodicZhat]" in out


def test_validate_weight_balance(tmp_path, capsys):
    g = {"n": 3, "undirected": False, "edges": [[1, 2, 1], [2, 3, 1]]}
    f = dump(tmp_path, "dir.json", dict(p3({"kind": "Directed"}), graph=g))
    assert main(["validate", f]) == EXIT_INVALID
    assert "weight-balanced" in capsys.readouterr().out


def test_validate_malformed_json(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text('{"horizon": 5,\n "trigger": [}\n')
    assert main(["validate", str(p)]) == EXIT_INVALID
    captured = capsys.readouterr()
    assert "line 2, column" in captured.out + captured.err


# -- run -----------------------------------------------------------------------

def test_run_writes_files_and_round_trips(tmp_path, capsys):
    f = dump(tmp_path, "s.json", p3({"kind": "BroadcastZhat"}))
    out = tmp_path / "out"
    assert main(["run", f, "--out", str(out)]) == EXIT_OK
    line = capsys.readouterr().out.strip()
    assert line.startswith("events=") and "zeno=no" in line
    for name in (TRACE_FILE, EVENTS_FILE, SUMMARY_FILE):
        assert (out / name).exists()
    summary = json.loads((out / SUMMARY_FILE).read_text())
    again = metrics(read_trace(out))
    for key in ("total_events", "final_disagreement", "final_V", "min_inter_event",
                "mean_inter_event", "time_to_tolerance", "zeno_flag", "final_time"):
        a, b = summary[key], again[key]
        if isinstance(a, float):
            assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
        else:
            assert a == b
    with open(out / EVENTS_FILE) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == summary["total_events"] and set(rows[0]) == {"agent", "t", "kind"}
    header = (out / TRACE_FILE).read_text().splitlines()[0].split(",")
    assert header == ["t", "x_1", "x_2", "x_3", "V", "disagreement"]


def test_run_consensus_has_no_events(tmp_path, capsys):
    f = dump(tmp_path, "c.json", dict(p3({"kind": "BroadcastPhi"}),
                                      initial_state={"x": [2, 2, 2]}))
    assert main(["run", f, "--out", str(tmp_path / "o")]) == EXIT_OK
    assert "events=0 " in capsys.readouterr().out


def test_run_anchor(tmp_path, capsys):
    f = dump(tmp_path, "anchor.json", ANCHOR)
    assert main(["run", f, "--out", str(tmp_path / "o")]) == EXIT_OK
    summary = json.loads((tmp_path / "o" / SUMMARY_FILE).read_text())
    assert summary["final_disagreement"] < 1e-3
    assert summary["final_disagreement"] == pytest.approx(ANCHOR_DISAGREEMENT, rel=1e-6)
    assert summary["total_events"] == ANCHOR_EVENTS


def test_run_invalid_and_zeno_exit_codes(tmp_path):
    bad = dump(tmp_path, "bad.json", p3({"kind": "BroadcastPhi", "sigma": 3}))
    assert main(["run", bad, "--out", str(tmp_path / "a")]) == EXIT_INVALID
    zeno = dump(tmp_path, "zeno.json", {
        "graph": {"generate": {"kind": "random_connected", "n": 8, "seed": 0}},
        "initial_state": {"random": {"seed": 0}},
        "trigger": {"kind": "DecentralizedState"}, "horizon": 20})
    assert main(["run", zeno, "--out", str(tmp_path / "z")]) == EXIT_RUNTIME
    assert (tmp_path / "z" / SUMMARY_FILE).exists()


def test_run_divergence_exit_code(tmp_path):
    f = dump(tmp_path, "d.json", dict(p3({"kind": "BroadcastPhi"}),
                                      initial_state={"x": [0, 0, 5e9]}))
    assert main(["run", f, "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def events_for(tmp_path, payload, seed):
    f = dump(tmp_path, "s.json", payload)
    out = tmp_path / f"o{seed}"
    main(["run", f, "--out", str(out), "--seed", str(seed)])
    return (out / EVENTS_FILE).read_text()


def test_seed_matters_only_for_stochastic_channels(tmp_path):
    g = {"generate": {"kind": "random_connected", "n": 6, "seed": 2}}
    ideal = {"graph": g, "initial_state": {"random": {"seed": 1}},
             "trigger": {"kind": "BroadcastPhi"}, "horizon": 5}
    assert events_for(tmp_path, ideal, 1) == events_for(tmp_path, ideal, 2)
    lossy = dict(ideal, channel={"drop_prob": 0.3})
    assert events_for(tmp_path, lossy, 1) != events_for(tmp_path, lossy, 2)
    assert events_for(tmp_path, lossy, 1) == events_for(tmp_path, lossy, 1)


# -- sweep ---------------------------------------------------------------------

def read_rows(out):
    with open(out / "sweep.csv") as fh:
        return list(csv.DictReader(fh))


def test_sweep_time_dependent_radius(tmp_path):
    base = {"graph": {"generate": {"kind": "random_connected", "n": 6, "seed": 5}},
            "initial_state": {"random": {"seed": 1}},
            "trigger": {"kind": "TimeDependent", "c1": 0.5}, "horizon": 20}
    f = dump(tmp_path, "sw.json", {"base": base, "parameter": "trigger.c0",
                                   "values": [0.001, 0.01, 0.1], "repetitions": 2})
    out = tmp_path / "o"
    assert main(["sweep", f, "--out", str(out)]) == EXIT_OK
    rows = read_rows(out)
    assert len(rows) == 6
    for r in rows:
        # r(c0) = ||L|| sqrt(N) c0 / lambda2, plus the 10% allowance
        assert float(r["final_disagreement"]) <= 1.1 * float(r["radius_bound"])
        assert r["within_radius"] == "True"
    assert {r["disagreement_trend"] for r in rows} == {"nondecreasing"}
    assert rows[0]["seed"] != rows[1]["seed"]


def test_sweep_sigma_trend_and_base_file(tmp_path, monkeypatch, capsys):
    base = {"graph": {"generate": {"kind": "random_connected", "n": 8, "seed": 3}},
            "initial_state": {"random": {"seed": 2}},
            "trigger": {"kind": "BroadcastPhi"}, "horizon": 10}
    dump(tmp_path, "base.json", base)
    f = dump(tmp_path, "sw.json", {"base_file": "base.json", "parameter": "trigger.sigma",
                                   "values": [0.1, 0.5, 0.9], "repetitions": 2})
    monkeypatch.setenv("ETC_SIM_JOBS", "2")
    assert main(["sweep", f, "--out", str(tmp_path / "o"), "--jobs", "1"]) == EXIT_OK
    rows = read_rows(tmp_path / "o")
    # soft check: the trend column is reported, a mixed trend only warns
    trend = rows[0]["events_trend"]
    assert trend in ("nonincreasing", "flat", "mixed", "nondecreasing")
    if trend == "mixed":
        assert "warning" in capsys.readouterr().err
    per_value = {}
    for r in rows:
        per_value.setdefault(float(r["value"]), []).append(int(r["total_events"]))
    assert np.mean(per_value[0.1]) >= np.mean(per_value[0.9])


def test_sweep_parallel_matches_serial(tmp_path, monkeypatch):
    base = p3({"kind": "BroadcastPhi"})
    f = dump(tmp_path, "sw.json", {"base": base, "parameter": "trigger.sigma",
                                   "values": [0.2, 0.6]})
    monkeypatch.delenv("ETC_SIM_JOBS", raising=False)
    main(["sweep", f, "--out", str(tmp_path / "a"), "--jobs", "1"])
    monkeypatch.setenv("ETC_SIM_JOBS", "2")
    main(["sweep", f, "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "sweep.csv").read_text() == (tmp_path / "b" / "sweep.csv").read_text()


@pytest.mark.parametrize("spec", [
    {"parameter": "trigger.sigma", "values": []},
    {"parameter": "trigger.omega", "values": [0.1]},
    {"parameter": "trigger.sigma"},
    {"parameter": "trigger.sigma", "values": [0.1], "repetitions": 0},
    {"parameter": "trigger.sigma", "values": [5.0]},
])
def test_sweep_invalid(tmp_path, spec):
    f = dump(tmp_path, "sw.json", dict(spec, base=p3({"kind": "BroadcastPhi"})))
    assert main(["sweep", f, "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert not (tmp_path / "o" / "sweep.csv").exists()


@pytest.mark.skipif(shutil.which("etc-sim") is None, reason="console script not installed")
def test_console_script(tmp_path):
    f = dump(tmp_path, "ok.json", p3({"kind": "BroadcastPhi"}))
    res = subprocess.run(["etc-sim", "validate", f], capture_output=True, text=True)
    assert res.returncode == 0 and "valid" in res.stdout
