import math

import numpy as np
import pytest

from conftest import P3, scen
from etc_sim.engine import run
from etc_sim.zeno import (NO_MIET, POSITIVE_MIET, ZENO, ZenoConfig, ZenoMonitor,
                          classify_event_times, zeno_monitor)


def times_from_gaps(gaps):
    return np.concatenate([[0.0], np.cumsum(gaps)])


ELL = np.arange(2000, dtype=float)


def test_inverse_square_gaps_flagged_before_pi2_over_6():
    t = times_from_gaps(1.0 / (ELL + 1) ** 2)[1:]
    flag = zeno_monitor([(0, ti) for ti in t])
    assert flag is not None and flag.agent == 0
    assert flag.time < math.pi ** 2 / 6
    assert flag.accumulation_estimate == pytest.approx(math.pi ** 2 / 6, abs=1e-2)


@pytest.mark.parametrize("c", [1e-3, 0.05])
def test_floored_gaps_never_flag(c):
    t = times_from_gaps(c + 1.0 / (ELL + 1))[1:]
    assert zeno_monitor([(0, ti) for ti in t], count=10**9, eps_z=c / 2) is None


def test_monitor_window_count():
    mon = ZenoMonitor(2, ZenoConfig(window=0.1, count=3, eps_z=1e-9))
    for t in (0.0, 0.01, 0.02):
        assert mon.record(1, t) is None
    assert mon.record(0, 0.03) is None
    flag = mon.record(1, 0.03)
    assert flag is not None and flag.agent == 1 and "within" in flag.reason


def test_monitor_eps_floor():
    mon = ZenoMonitor(1, ZenoConfig(eps_z=1e-7))
    mon.record(0, 1.0)
    flag = mon.record(0, 1.0 + 1e-8)
    assert flag is not None and "eps_z" in flag.reason
    assert "agent 1" in flag.describe()


def test_classify_three_sequences():
    z = classify_event_times(times_from_gaps(1.0 / (ELL + 1) ** 2))
    assert z.label == ZENO
    assert z.exponent == pytest.approx(2.0, abs=1e-6)
    assert z.accumulation == pytest.approx(math.pi ** 2 / 6, abs=1e-9)
    assert classify_event_times(times_from_gaps(1.0 / (ELL + 1))).label == NO_MIET
    m = classify_event_times(times_from_gaps(0.05 + 1.0 / (ELL + 1)))
    assert m.label == POSITIVE_MIET and m.floor == pytest.approx(0.05, rel=1e-6)


def test_classify_rejects_bad_input():
    with pytest.raises(ValueError):
        classify_event_times([0, 1, 2])
    with pytest.raises(ValueError):
        classify_event_times([0, 1, 1, 2, 3, 4, 5, 6, 7, 8])


def test_periodic_run_never_flags():
    s = scen(P3, {"kind": "PeriodicZhat", "sigma": 0.1, "h": 1 / 6}, [0, 1, 2], horizon=20)
    tr = run(s)
    assert tr.zeno is None and tr.status == "ok"


def test_time_dependent_with_floor_never_flags():
    s = scen(P3, {"kind": "TimeDependent", "c0": 0.01, "c1": 0.1}, [0, 1, 2], horizon=40)
    tr = run(s)
    assert tr.zeno is None
