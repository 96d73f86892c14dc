"""Scenario documents (JSON), the built-in studies and a random instance generator."""

from __future__ import annotations

import json
from dataclasses import dataclass
from numbers import Real
from pathlib import Path

import numpy as np

from . import sgne
from .errors import ScenarioError
from .graph import CommGraph, named_graph
from .market import MarketParams, ProsumerParams, ScenarioInstance
from .runtime import StopTolerances
from .sgne import StepSizes

TOP_KEYS = ("prosumers", "graph", "step_sizes", "eta", "tolerances", "seed")
PROSUMER_KEYS = ("a", "c", "d", "D", "p_min", "p_max")
STEP_KEYS = ("gamma", "sigma_z", "sigma_mu", "safety")
TOLERANCE_KEYS = ("step", "consensus", "kkt", "max_iter", "rel_err_target")
DEFAULT_ETA = 0.3


def _is_number(x):
    return isinstance(x, Real) and not isinstance(x, bool)


def _need_number(x, where):
    if not _is_number(x):
        raise ScenarioError(f"expected a number, got {json.dumps(x)}", where=where)
    if not np.isfinite(x):
        raise ScenarioError("number must be finite", where=where)
    return x


def _need_object(x, where, allowed):
    if not isinstance(x, dict):
        raise ScenarioError(f"expected an object, got {type(x).__name__}", where=where)
    for key in x:
        if key not in allowed:
            raise ScenarioError(f"unknown key {key!r} (allowed: {', '.join(allowed)})", where=f"{where}.{key}")
    return x


@dataclass
class ScenarioFile:
    """A validated scenario document.

    The parsed JSON is kept untouched in ``doc`` (including the int/float
    distinction of every number), so :meth:`canonical` reproduces the input
    up to key order and whitespace.
    """

    doc: dict
    source: str = "<scenario>"
    base_dir: Path | None = None

    def __post_init__(self):
        self._validate()

    # parsing

    @classmethod
    def from_text(cls, text: str, source="<scenario>", base_dir=None) -> "ScenarioFile":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(exc.msg, where=f"{source}:{exc.lineno}:{exc.colno}") from None
        return cls(doc, source, base_dir)

    @classmethod
    def load(cls, path) -> "ScenarioFile":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario: {exc.strerror}", where=str(path)) from None
        return cls.from_text(text, source=str(path), base_dir=path.parent)

    def canonical(self) -> str:
        return json.dumps(self.doc, sort_keys=True, indent=2) + "\n"

    def _validate(self):
        doc = _need_object(self.doc, "$", TOP_KEYS)
        if "prosumers" not in doc:
            raise ScenarioError("missing required key 'prosumers'", where="$")
        pros = doc["prosumers"]
        if not isinstance(pros, list) or len(pros) < 2:
            raise ScenarioError("expected a list of at least two prosumers", where="$.prosumers")
        for i, pr in enumerate(pros):
            where = f"$.prosumers[{i}]"
            _need_object(pr, where, PROSUMER_KEYS)
            for key in PROSUMER_KEYS:
                if key not in pr:
                    raise ScenarioError(f"missing key {key!r}", where=where)
                _need_number(pr[key], f"{where}.{key}")
            if pr["a"] >= 0:
                raise ScenarioError("price elasticity must be negative", where=f"{where}.a")
            if pr["c"] < 0:
                raise ScenarioError("cost coefficient must be >= 0", where=f"{where}.c")
            if pr["p_min"] > pr["p_max"]:
                raise ScenarioError("p_min exceeds p_max", where=where)
        self._validate_graph(doc.get("graph"))
        if "step_sizes" in doc:
            st = _need_object(doc["step_sizes"], "$.step_sizes", STEP_KEYS)
            for key, val in st.items():
                where = f"$.step_sizes.{key}"
                if key == "gamma" and isinstance(val, list):
                    if len(val) != len(pros):
                        raise ScenarioError(f"gamma list needs {len(pros)} entries", where=where)
                    vals = [_need_number(v, f"{where}[{j}]") for j, v in enumerate(val)]
                else:
                    vals = [_need_number(val, where)]
                if any(v <= 0 for v in vals):
                    raise ScenarioError("step sizes must be positive", where=where)
        if "eta" in doc:
            eta = _need_number(doc["eta"], "$.eta")
            if not 0 <= eta < sgne.ETA_MAX:
                raise ScenarioError(f"eta={eta} outside [0, 1/3)", where="$.eta")
        if "tolerances" in doc:
            tol = _need_object(doc["tolerances"], "$.tolerances", TOLERANCE_KEYS)
            for key, val in tol.items():
                where = f"$.tolerances.{key}"
                if key == "rel_err_target" and val is None:
                    continue
                if key == "max_iter" and not (isinstance(val, int) and not isinstance(val, bool) and val > 0):
                    raise ScenarioError("expected a positive integer", where=where)
                if _need_number(val, where) <= 0:
                    raise ScenarioError("tolerance must be positive", where=where)
        if "seed" in doc and not (isinstance(doc["seed"], int) and not isinstance(doc["seed"], bool)):
            raise ScenarioError("seed must be an integer", where="$.seed")

    def _validate_graph(self, g):
        if g is None or isinstance(g, str):
            return
        if isinstance(g, dict):
            _need_object(g, "$.graph", ("edge_file",))
            if not isinstance(g.get("edge_file"), str):
                raise ScenarioError("expected {'edge_file': path}", where="$.graph")
            return
        if not isinstance(g, list):
            raise ScenarioError("expected a graph name, an edge list or {'edge_file': path}", where="$.graph")
        for j, e in enumerate(g):
            ok = isinstance(e, list) and len(e) == 2 and all(isinstance(v, int) and not isinstance(v, bool) for v in e)
            if not ok:
                raise ScenarioError(f"expected [u, v] integer pair, got {json.dumps(e)}", where=f"$.graph[{j}]")

    # conversion

    @property
    def n(self) -> int:
        return len(self.doc["prosumers"])

    @property
    def eta(self) -> float:
        return float(self.doc.get("eta", DEFAULT_ETA))

    @property
    def seed(self):
        return self.doc.get("seed")

    def graph(self) -> CommGraph:
        g, n = self.doc.get("graph"), self.n
        try:
            if g is None:
                return CommGraph.complete(n)
            if isinstance(g, str):
                return named_graph(g, n)
            if isinstance(g, dict):
                path = Path(g["edge_file"])
                if not path.is_absolute() and self.base_dir is not None:
                    path = self.base_dir / path
                return CommGraph.from_edge_file(path, n)
            return CommGraph(n, [tuple(e) for e in g])
        except ScenarioError as exc:
            where = exc.where if exc.where and exc.where != "graph" else "$.graph"
            raise ScenarioError(exc.message, where=where) from None
        except (ValueError, OSError) as exc:
            raise ScenarioError(str(exc), where="$.graph") from None

    def to_instance(self) -> ScenarioInstance:
        pros = self.doc["prosumers"]
        market = MarketParams(np.array([float(pr["a"]) for pr in pros]))
        people = [ProsumerParams(*(float(pr[k]) for k in PROSUMER_KEYS[1:])) for pr in pros]
        return ScenarioInstance(market, people, self.graph())

    def step_sizes(self, graph: CommGraph | None = None, eta: float | None = None) -> StepSizes:
        """Default dominance-rule step sizes with the document's overrides."""
        graph = graph or self.graph()
        eta = self.eta if eta is None else eta
        over = self.doc.get("step_sizes", {})
        base = sgne.default_step_sizes(graph, safety=float(over.get("safety", 1.0)), eta=eta)
        if not any(k in over for k in ("gamma", "sigma_z", "sigma_mu")):
            return base
        return StepSizes(
            gamma=np.asarray(over.get("gamma", base.gamma), dtype=float),
            sigma_z=float(over.get("sigma_z", base.sigma_z)),
            sigma_mu=float(over.get("sigma_mu", base.sigma_mu)),
            eta=eta,
        )

    def tolerances(self, **overrides) -> StopTolerances:
        vals = dict(self.doc.get("tolerances", {}))
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return StopTolerances(**vals)


def _three_prosumer_doc(D):
    c = (0.00075, 0.0006, 0.001)
    return {
        "prosumers": [
            {"a": -1000, "c": ci, "d": 0, "D": Di, "p_min": 0, "p_max": 1000} for ci, Di in zip(c, D)
        ],
        "graph": "ring",
        "eta": DEFAULT_ETA,
    }


def _ieee123_doc():
    n = 123
    D = np.round(np.random.default_rng(123).uniform(0.0, 10.0, n), 2)
    return {
        "prosumers": [
            {"a": -0.1, "c": 1 + (i + 1) / n, "d": 1, "D": float(D[i]), "p_min": 0, "p_max": 10}
            for i in range(n)
        ],
        "graph": "ieee123",
        # the dominance rule is very conservative on this long feeder tree
        "step_sizes": {"gamma": 1.0, "sigma_z": 5.0, "sigma_mu": 0.0045},
        "eta": DEFAULT_ETA,
        "seed": 123,
    }


BUILTINS = {
    "three_stage1": lambda: _three_prosumer_doc((730, 365, 0)),
    "three_stage2": lambda: _three_prosumer_doc((730, 0, 0)),
    "ieee123": _ieee123_doc,
}


def builtin(name: str) -> ScenarioFile:
    try:
        doc = BUILTINS[name]()
    except KeyError:
        raise ScenarioError(f"unknown builtin {name!r} (known: {', '.join(BUILTINS)})", where="--builtin") from None
    return ScenarioFile(doc, source=f"builtin:{name}")


def random_instance(n: int, rng: np.random.Generator, extra_edges=None, graph: CommGraph | None = None) -> ScenarioInstance:
    """Random connected instance whose bounds leave 20% slack around the demand.

    ``sum(p_min) <= 0.4 sum(D)`` and ``sum(p_max) = 1.2 sum(D)``, so some
    bounds may bind at the equilibrium but the balance stays feasible.
    """
    a = rng.uniform(-2.0, -0.1, n)
    c = rng.uniform(0.1, 2.0, n)
    d = rng.uniform(0.0, 1.0, n)
    D = rng.uniform(0.0, 10.0, n)
    total = D.sum()
    p_min = rng.uniform(0.0, 0.5, n) * 0.8 * total / n
    w = rng.uniform(0.5, 1.5, n)
    p_max = p_min + w * (1.2 * total - p_min.sum()) / w.sum()
    if graph is None:
        graph = CommGraph.random_connected(n, rng, extra_edges)
    return ScenarioInstance.from_arrays(a, c, d, D, p_min, p_max, graph)


def random_instances(count: int, seed: int = 0, n_range=(3, 50)):
    """``count`` reproducible instances with sizes drawn from ``n_range``."""
    rng = np.random.default_rng(seed)
    lo, hi = n_range
    return [random_instance(int(rng.integers(lo, hi + 1)), rng) for _ in range(count)]


def instance_to_doc(scenario: ScenarioInstance, eta: float = DEFAULT_ETA) -> dict:
    """Scenario document for an in-memory instance (explicit edge list)."""
    cols = [scenario.a, scenario.c, scenario.d, scenario.D, scenario.p_min, scenario.p_max]
    return {
        "prosumers": [dict(zip(PROSUMER_KEYS, (float(col[i]) for col in cols))) for i in range(scenario.n)],
        "graph": [list(e) for e in scenario.graph.edges],
        "eta": eta,
    }
