import numpy as np
import pytest

from etc_sim.scenario import scenario_from_dict

K2 = {"n": 2, "undirected": True, "edges": [[1, 2, 1]]}
P3 = {"n": 3, "undirected": True, "edges": [[1, 2, 1], [2, 3, 1]]}

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def scen(graph, trigger, x=None, horizon=10.0, **extra):
    """Scenario from keyword pieces; ``x`` may be a list or an rng seed."""
    payload = {"graph": graph, "trigger": trigger, "horizon": horizon}
    if isinstance(x, int) or x is None:
        payload["initial_state"] = {"random": {"seed": 0 if x is None else x}}
    else:
        key = "x"
        payload["initial_state"] = {key: list(x)}
    payload.update(extra)
    return scenario_from_dict(payload)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
