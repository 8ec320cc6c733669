"""Scenario schema (JSON, schema_version 1), parsing and validation.

A scenario file looks like::

    {
      "schema_version": 1,
      "graph": {"n": 3, "undirected": true, "edges": [[1, 2, 1], [2, 3, 1]]},
      "dynamics": "single",
      "initial_state": {"x": [0.0, 1.0, 2.0]},
      "trigger": {"kind": "BroadcastPhi", "sigma": 0.5},
      "horizon": 10.0
    }

``graph`` may instead be ``{"generate": {"kind": "random_connected", "n": 10,
"seed": 1}}`` and ``initial_state`` may be ``{"random": {"low": -1, "high":
1, "seed": 0}}``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import triggers as trg
from .channel import ChannelError, ChannelModel
from .design import DesignError, HurwitzReport, LinearDesign, design, verify_hurwitz_family
from .dynamics import CLOCK_OWN, CLOCK_SENDER, di_decay_rate
from .graph import (ConnectivityError, Graph, GraphError, SpectralSummary, generate,
                    graph_from_json, is_weight_balanced, laplacian, spectral_summary)
from .zeno import ZenoConfig

SCHEMA_VERSION = 1
SINGLE, DOUBLE, LINEAR = "single", "double", "linear"
DYNAMICS_KINDS = (SINGLE, DOUBLE, LINEAR)

TOP_KEYS = {
    "schema_version", "name", "graph", "dynamics", "initial_state", "trigger", "horizon",
    "channel", "detection_step", "output_step", "seed", "zeno", "linear", "di_clock",
    "tolerance",
}
# keys accepted inside each block, used by the sweep path resolver
BLOCK_KEYS = {
    "trigger": {f for f in trg.TriggerSpec.__dataclass_fields__},
    "channel": {"delay", "drop_prob", "quantizer"},
    "channel.quantizer": {"kind", "step"},
    "zeno": {"window", "count", "eps_z"},
    "linear": {"A", "B", "alpha_margin", "c_override", "epsilon"},
    "graph": {"n", "undirected", "edges", "generate"},
    "graph.generate": {"kind", "n", "seed", "p"},
    "initial_state": {"x", "r", "v", "random"},
    "initial_state.random": {"low", "high", "seed"},
}


class ScenarioError(ValueError):
    """Malformed or invalid scenario; ``problems`` lists every issue found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class LinearSpec:
    A: np.ndarray
    B: np.ndarray
    alpha_margin: float = 0.5
    c_override: Optional[float] = None
    epsilon: float = 1e-6

    def to_dict(self) -> dict:
        out = {"A": self.A.tolist(), "B": self.B.tolist(),
               "alpha_margin": self.alpha_margin, "epsilon": self.epsilon}
        if self.c_override is not None:
            out["c_override"] = self.c_override
        return out


@dataclass
class Scenario:
    graph: Graph
    dynamics: str
    trigger: trg.TriggerSpec
    initial_state: dict
    horizon: float
    channel: ChannelModel = field(default_factory=ChannelModel)
    detection_step: float = 1e-3
    output_step: float = 0.01
    seed: int = 0
    zeno: ZenoConfig = field(default_factory=ZenoConfig)
    linear: Optional[LinearSpec] = None
    di_clock: str = CLOCK_SENDER  # "own" is the literal law; it is not invariant to a common velocity
    tolerance: float = 1e-3
    name: str = ""

    @property
    def n(self) -> int:
        return self.graph.n

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "graph": self.graph.to_json(),
            "dynamics": self.dynamics,
            "initial_state": {k: np.asarray(v).tolist() for k, v in self.initial_state.items()},
            "trigger": self.trigger.to_dict(),
            "horizon": self.horizon,
            "channel": self.channel.to_dict(),
            "detection_step": self.detection_step,
            "output_step": self.output_step,
            "seed": self.seed,
            "zeno": self.zeno.to_dict(),
            "di_clock": self.di_clock,
            "tolerance": self.tolerance,
        }
        if self.linear is not None:
            out["linear"] = self.linear.to_dict()
        return out


# ---------------------------------------------------------------------------
# parsing


def _matrix(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ScenarioError(f"{name}: expected a matrix")
    return arr


def _graph(block) -> Graph:
    if not isinstance(block, dict):
        raise ScenarioError("graph: expected an object")
    try:
        if "generate" in block:
            gen = dict(block["generate"])
            unknown = set(gen) - BLOCK_KEYS["graph.generate"]
            if unknown:
                raise ScenarioError(f"graph.generate: unknown keys {sorted(unknown)}")
            return generate(gen["kind"], int(gen["n"]), seed=int(gen.get("seed", 0)),
                            p=float(gen.get("p", 0.4)))
        return graph_from_json(block)
    except KeyError as exc:
        raise ScenarioError(f"graph: missing field {exc}") from None
    except GraphError as exc:
        raise ScenarioError(f"graph: {exc}") from None


def _initial_state(block, dynamics: str, n: int, dim: int) -> dict:
    if not isinstance(block, dict):
        raise ScenarioError("initial_state: expected an object")
    unknown = set(block) - BLOCK_KEYS["initial_state"]
    if unknown:
        raise ScenarioError(f"initial_state: unknown keys {sorted(unknown)}")
    if "random" in block:
        spec = block["random"]
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        low, high = float(spec.get("low", -1.0)), float(spec.get("high", 1.0))
        if dynamics == SINGLE:
            return {"x": rng.uniform(low, high, n)}
        if dynamics == DOUBLE:
            return {"r": rng.uniform(low, high, n), "v": rng.uniform(low, high, n)}
        return {"x": rng.uniform(low, high, (n, dim))}
    if dynamics == DOUBLE:
        if "r" not in block:
            raise ScenarioError("initial_state: double-integrator scenarios need 'r'")
        r = np.asarray(block["r"], dtype=float)
        v = np.asarray(block.get("v", np.zeros(n)), dtype=float)
        return {"r": r, "v": v}
    if "x" not in block:
        raise ScenarioError("initial_state: missing 'x'")
    x = np.asarray(block["x"], dtype=float)
    if dynamics == LINEAR and x.ndim == 1 and dim == 1:
        x = x[:, None]
    return {"x": x}


def _default_step(trigger: trg.TriggerSpec) -> float:
    # periodic kinds need delta <= h/4; an explicit value is never changed
    if trigger.kind in trg.PERIODIC_KINDS and trigger.h is not None and trigger.h > 0:
        return min(1e-3, trigger.h / 4.0)
    return 1e-3


def scenario_from_dict(payload: dict) -> Scenario:
    """Build a Scenario; raises ScenarioError naming the offending field."""
    if not isinstance(payload, dict):
        raise ScenarioError("scenario: expected a JSON object")
    version = payload.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version: unsupported value {version!r}")
    unknown = set(payload) - TOP_KEYS
    if unknown:
        raise ScenarioError(f"scenario: unknown keys {sorted(unknown)}")
    for key in ("graph", "initial_state", "trigger", "horizon"):
        if key not in payload:
            raise ScenarioError(f"scenario: missing field '{key}'")
    dynamics = payload.get("dynamics", SINGLE)
    if dynamics not in DYNAMICS_KINDS:
        raise ScenarioError(f"dynamics: must be one of {DYNAMICS_KINDS}, got {dynamics!r}")
    graph = _graph(payload["graph"])
    linear = None
    if "linear" in payload:
        block = payload["linear"]
        unknown = set(block) - BLOCK_KEYS["linear"]
        if unknown:
            raise ScenarioError(f"linear: unknown keys {sorted(unknown)}")
        try:
            A = _matrix(block["A"], "linear.A")
            B = _matrix(block["B"], "linear.B")
        except KeyError as exc:
            raise ScenarioError(f"linear: missing field {exc}") from None
        c_over = block.get("c_override")
        linear = LinearSpec(A=A, B=B, alpha_margin=float(block.get("alpha_margin", 0.5)),
                            c_override=None if c_over is None else float(c_over),
                            epsilon=float(block.get("epsilon", 1e-6)))
    elif dynamics == LINEAR:
        raise ScenarioError("linear: linear dynamics need a 'linear' block with A and B")
    dim = linear.A.shape[0] if linear is not None else 1
    try:
        trigger = trg.TriggerSpec.from_dict(dict(payload["trigger"]))
        channel = ChannelModel.from_dict(payload.get("channel"))
        zeno = ZenoConfig.from_dict(payload.get("zeno"))
    except (trg.TriggerConfigError, ChannelError, ValueError, TypeError) as exc:
        raise ScenarioError(str(exc)) from None
    return Scenario(
        graph=graph, dynamics=dynamics, trigger=trigger,
        initial_state=_initial_state(payload["initial_state"], dynamics, graph.n, dim),
        horizon=float(payload["horizon"]), channel=channel,
        detection_step=float(payload.get("detection_step", _default_step(trigger))),
        output_step=float(payload.get("output_step", 0.01)),
        seed=int(payload.get("seed", 0)), zeno=zeno, linear=linear,
        di_clock=payload.get("di_clock", CLOCK_SENDER),
        tolerance=float(payload.get("tolerance", 1e-3)),
        name=str(payload.get("name", "")),
    )


def read_json(path) -> dict:
    """Load JSON, turning decode errors into a ScenarioError with line/column."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None


def load_scenario(path) -> Scenario:
    return scenario_from_dict(read_json(path))


def with_override(payload: dict, path: str, value) -> dict:
    """Copy of a scenario dict with the dotted ``path`` set to ``value``."""
    parts = path.split(".")
    if not path or parts[0] not in TOP_KEYS:
        raise ScenarioError(f"parameter path {path!r} does not resolve in the scenario schema")
    out = copy.deepcopy(payload)
    node = out
    for depth, key in enumerate(parts[:-1]):
        prefix = ".".join(parts[:depth + 1])
        if prefix not in BLOCK_KEYS:
            raise ScenarioError(f"parameter path {path!r}: '{prefix}' is not a block")
        nxt = node.get(key)
        if nxt is None:
            nxt = node[key] = {}
        if not isinstance(nxt, dict):
            raise ScenarioError(f"parameter path {path!r}: '{prefix}' is not an object")
        node = nxt
    parent = ".".join(parts[:-1])
    if parent and parts[-1] not in BLOCK_KEYS[parent]:
        raise ScenarioError(f"parameter path {path!r}: unknown key '{parts[-1]}' in '{parent}'")
    node[parts[-1]] = value
    return out


# ---------------------------------------------------------------------------
# validation and derived quantities


@dataclass
class Prepared:
    """Scenario plus everything derived from it that a run needs."""

    scenario: Scenario
    L: np.ndarray
    W: np.ndarray
    n_nbrs: np.ndarray
    spectral: Optional[SpectralSummary]
    trigger: Optional[trg.ResolvedTrigger]
    design: Optional[LinearDesign] = None
    hurwitz: Optional[HurwitzReport] = None
    decay_rate: Optional[float] = None
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


def _state_problems(s: Scenario) -> list[str]:
    out = []
    n = s.n
    shapes = {SINGLE: {"x": (n,)}, DOUBLE: {"r": (n,), "v": (n,)}}
    if s.dynamics == LINEAR and s.linear is not None:
        shapes[LINEAR] = {"x": (n, s.linear.A.shape[0])}
    for key, shape in shapes.get(s.dynamics, {}).items():
        arr = np.asarray(s.initial_state.get(key))
        if arr.shape != shape:
            out.append(f"initial_state.{key}: expected shape {shape}, got {arr.shape}")
        elif not np.all(np.isfinite(arr)):
            out.append(f"initial_state.{key}: nonfinite values")
    return out


def prepare(s: Scenario) -> Prepared:
    """Resolve defaults and collect every violated predicate."""
    problems: list[str] = []
    g = s.graph
    kind = s.trigger.kind
    tag = f"[{kind}]"
    L = laplacian(g)
    spec = None
    try:
        spec = spectral_summary(g)
    except ConnectivityError as exc:
        problems.append(f"graph: {exc}")

    if kind in trg.SINGLE_KINDS and s.dynamics != SINGLE:
        problems.append(f"{tag} needs single-integrator dynamics, got {s.dynamics}")
    if kind in trg.DOUBLE_KINDS and s.dynamics != DOUBLE:
        problems.append(f"{tag} needs double-integrator dynamics, got {s.dynamics}")
    if kind in trg.LINEAR_KINDS and s.dynamics != LINEAR:
        problems.append(f"{tag} needs linear dynamics, got {s.dynamics}")
    if kind == trg.DIRECTED:
        if not is_weight_balanced(g):
            problems.append(f"{tag} graph is not weight-balanced (1^T L != 0)")
    elif not g.undirected:
        problems.append(f"{tag} needs an undirected graph (only Directed accepts digraphs)")
    if s.dynamics == DOUBLE and s.di_clock not in (CLOCK_OWN, CLOCK_SENDER):
        problems.append(f"di_clock must be '{CLOCK_OWN}' or '{CLOCK_SENDER}'")

    for name, value in (("horizon", s.horizon), ("detection_step", s.detection_step),
                        ("output_step", s.output_step), ("tolerance", s.tolerance)):
        if not (np.isfinite(value) and value > 0):
            problems.append(f"{name} > 0 violated ({name} = {value})")
    if s.zeno.window <= 0 or s.zeno.count < 1 or s.zeno.eps_z < 0:
        problems.append("zeno: need window > 0, count >= 1, eps_z >= 0")
    problems.extend(f"channel: {p}" for p in s.channel.violations(g.n))
    if not s.channel.ideal and s.dynamics != SINGLE:
        problems.append("channel imperfections are supported for single-integrator runs only")
    problems.extend(_state_problems(s))

    n_nbrs = g.out_degree_count
    if np.any(n_nbrs == 0):
        problems.append("graph: every agent needs at least one (out-)neighbor")
    prep = Prepared(scenario=s, L=L, W=np.array(g.adjacency), n_nbrs=n_nbrs,
                    spectral=spec, trigger=None, problems=problems)
    if spec is None or np.any(n_nbrs == 0):
        return prep

    if s.dynamics == LINEAR and s.linear is not None:
        lin = s.linear
        if lin.B.shape[0] != lin.A.shape[0] or lin.A.shape[0] != lin.A.shape[1]:
            problems.append("linear: A must be square and B must have as many rows as A")
            return prep
        try:
            d = design(lin.A, lin.B, spec.lambda2, lin.alpha_margin, lin.epsilon,
                       c=lin.c_override)
        except DesignError as exc:
            problems.append(f"linear: {exc}")
            return prep
        prep.design = d
        prep.hurwitz = verify_hurwitz_family(lin.A, lin.B, d.F, d.c, spec.eigenvalues)
        if not prep.hurwitz.passed:
            problems.append(f"linear: A + c lambda_j B F not Hurwitz for j in "
                            f"{prep.hurwitz.failures}")

    decay = None
    if s.dynamics == DOUBLE:
        gamma = 1.0 if s.trigger.gamma is None else float(s.trigger.gamma)
        decay = di_decay_rate(L, gamma) if gamma > 0 else None
        prep.decay_rate = decay
    try:
        rt = trg.resolve(s.trigger, g.n, int(n_nbrs.max()), spec.lambda2, decay_rate=decay)
    except trg.TriggerConfigError as exc:
        problems.append(f"{tag} {exc}")
        return prep
    if prep.design is not None:
        # the state-dependent linear trigger's c1 is the coupling gain
        if s.trigger.c1_lin is None:
            rt.c1_lin = prep.design.c
        if s.trigger.c2_lin is None:
            rt.c2_lin = rt.c1_lin
    prep.trigger = rt
    problems.extend(f"{tag} {p}" for p in trg.trigger_violations(
        rt, n_nbrs=n_nbrs, lambda2=spec.lambda2, lambdaN=spec.lambdaN))

    # detection step against the expected event spacing
    if rt.periodic and rt.h is not None and rt.h > 0 and s.detection_step > rt.h / 4:
        problems.append(f"{tag} detection_step <= h/4 = {rt.h / 4:.6g} violated")
    miet = None
    if kind == trg.CENTRALIZED:
        miet = trg.centralized_miet(float(rt.sigma.min()), spec.laplacian_norm)
    elif kind == trg.DYNAMIC_MIET:
        miet = float(np.min(trg.dynamic_miet(n_nbrs)))
    if miet is not None and s.detection_step > miet / 10:
        problems.append(f"{tag} detection_step <= MIET/10 = {miet / 10:.6g} violated")

    return prep


def validate(s: Scenario) -> list[str]:
    return prepare(s).problems
