import json

import numpy as np
import pytest

from prosumer_gne import equivalent as eq
from prosumer_gne.errors import ScenarioError
from prosumer_gne.scenarios import BUILTINS, ScenarioFile, builtin, instance_to_doc, random_instance, random_instances

DOC = """{
  "seed": 7,
  "prosumers": [
    {"p_max": 10, "a": -1, "c": 1.0, "d": 0, "D": 10, "p_min": 0},
    {"a": -1.5e0, "c": 0.001, "d": 0.25, "D": 0.0, "p_min": -2, "p_max": 1E1}
  ],
  "graph": [[0, 1]],
  "eta": 0.25,
  "tolerances": {"max_iter": 5000, "kkt": 1e-7},
  "step_sizes": {"safety": 0.5}
}
"""


def _doc(**over):
    d = json.loads(DOC)
    d.update(over)
    return json.dumps(d)


def test_round_trip_is_canonical():
    sf = ScenarioFile.from_text(DOC)
    canon = json.dumps(json.loads(DOC), sort_keys=True, indent=2) + "\n"
    assert sf.canonical() == canon
    assert ScenarioFile.from_text(sf.canonical()).canonical() == canon
    # ints stay ints
    assert '"p_max": 10\n' in canon or '"p_max": 10,' in canon


def test_builtins_round_trip():
    for name in BUILTINS:
        sf = builtin(name)
        again = ScenarioFile.from_text(sf.canonical())
        assert again.canonical() == sf.canonical()


def test_parsed_instance():
    sc = ScenarioFile.from_text(DOC).to_instance()
    assert sc.n == 2 and sc.a.tolist() == [-1.0, -1.5]
    assert sc.p_max.tolist() == [10.0, 10.0]
    assert sc.graph.edges == ((0, 1),)


def test_step_sizes_and_tolerances():
    sf = ScenarioFile.from_text(DOC)
    s = sf.step_sizes()
    assert s.eta == 0.25 and s.gamma.tolist() == [1.5, 1.5]
    assert s.sigma_z == pytest.approx(1 / 2.5)
    tol = sf.tolerances()
    assert tol.max_iter == 5000 and tol.kkt == 1e-7 and tol.step == 1e-8
    assert sf.tolerances(max_iter=10).max_iter == 10
    over = ScenarioFile.from_text(_doc(step_sizes={"gamma": [3, 4], "sigma_mu": 0.1}))
    s = over.step_sizes()
    assert s.gamma.tolist() == [3.0, 4.0] and s.sigma_mu == 0.1
    assert s.sigma_z == pytest.approx(1 / 3)


@pytest.mark.parametrize(
    "text, where",
    [
        (_doc(colour="red"), "$.colour"),
        (_doc(step_sizes={"gama": 1}), "$.step_sizes.gama"),
        (_doc(tolerances={"kkt": 1e-6, "steps": 1}), "$.tolerances.steps"),
        (_doc(eta=0.5), "$.eta"),
        (_doc(eta="fast"), "$.eta"),
        (_doc(seed=1.5), "$.seed"),
        (_doc(graph=[[0, 1, 2]]), "$.graph[0]"),
        (_doc(graph=5), "$.graph"),
        (_doc(graph="moebius"), "$.graph"),
        (_doc(graph=[[0, 0]]), "$.graph"),
        (_doc(step_sizes={"gamma": -1}), "$.step_sizes.gamma"),
        (_doc(step_sizes={"gamma": [1, 2, 3]}), "$.step_sizes.gamma"),
        (_doc(tolerances={"max_iter": 0}), "$.tolerances.max_iter"),
    ],
)
def test_invalid_documents(text, where):
    with pytest.raises(ScenarioError) as e:
        ScenarioFile.from_text(text).to_instance()
    assert e.value.where == where


def test_invalid_prosumers():
    d = json.loads(DOC)
    d["prosumers"][1]["colour"] = 1
    with pytest.raises(ScenarioError) as e:
        ScenarioFile(d)
    assert e.value.where == "$.prosumers[1].colour"
    d = json.loads(DOC)
    del d["prosumers"][0]["c"]
    with pytest.raises(ScenarioError) as e:
        ScenarioFile(d)
    assert e.value.where == "$.prosumers[0]"
    d = json.loads(DOC)
    d["prosumers"][0]["a"] = 1
    with pytest.raises(ScenarioError, match="negative"):
        ScenarioFile(d)
    d["prosumers"][0]["a"] = True
    with pytest.raises(ScenarioError):
        ScenarioFile(d)
    with pytest.raises(ScenarioError):
        ScenarioFile({"prosumers": d["prosumers"][:1]})
    with pytest.raises(ScenarioError):
        ScenarioFile({"graph": "ring"})


def test_json_syntax_error_location():
    with pytest.raises(ScenarioError) as e:
        ScenarioFile.from_text('{\n  "prosumers": [\n    {"a": -1,}\n  ]\n}', source="x.json")
    assert e.value.where.startswith("x.json:3:")


def test_load_missing_file(tmp_path):
    with pytest.raises(ScenarioError):
        ScenarioFile.load(tmp_path / "nope.json")


def test_edge_file_relative_to_scenario(tmp_path):
    (tmp_path / "g.txt").write_text("# two nodes\n0 1\n")
    d = json.loads(DOC)
    d["graph"] = {"edge_file": "g.txt"}
    (tmp_path / "s.json").write_text(json.dumps(d))
    sc = ScenarioFile.load(tmp_path / "s.json").to_instance()
    assert sc.graph.edges == ((0, 1),)
    d["graph"] = {"edge_file": "missing.txt"}
    (tmp_path / "s.json").write_text(json.dumps(d))
    with pytest.raises(ScenarioError):
        ScenarioFile.load(tmp_path / "s.json").to_instance()


def test_default_graph_is_complete():
    d = json.loads(DOC)
    del d["graph"]
    d["prosumers"].append(dict(d["prosumers"][0]))
    sc = ScenarioFile(d).to_instance()
    assert len(sc.graph.edges) == 3


def test_three_stage_builtins():
    s1 = builtin("three_stage1").to_instance()
    assert s1.D.sum() == 1095
    rep = eq.solve_scenario(s1)
    assert abs(rep.point.p.sum() - 1095) <= 1e-8
    assert s1.a.tolist() == [-1000.0] * 3
    assert s1.c.tolist() == [0.00075, 0.0006, 0.001]
    s2 = builtin("three_stage2").to_instance()
    assert s2.D.tolist() == [730.0, 0.0, 0.0]


def test_ieee123_builtin():
    sf = builtin("ieee123")
    sc = sf.to_instance()
    i = np.arange(1, 124)
    assert np.allclose(sc.c, 1 + i / 123)
    assert np.all(sc.d == 1) and np.all(sc.a == -0.1)
    assert sc.graph.node_count == 123 and sc.is_strictly_feasible()
    s = sf.step_sizes()
    assert s.lambda_min is None
    from prosumer_gne.sgne import certify

    assert certify(s, sc.graph).lambda_min > 0


def test_unknown_builtin():
    with pytest.raises(ScenarioError):
        builtin("nine_stage")


def test_random_instance_ranges(rng):
    for _ in range(30):
        n = int(rng.integers(3, 50))
        sc = random_instance(n, rng)
        assert np.all((-2 <= sc.a) & (sc.a <= -0.1))
        assert np.all((0.1 <= sc.c) & (sc.c <= 2))
        assert np.all((0 <= sc.d) & (sc.d <= 1))
        assert np.all((0 <= sc.D) & (sc.D <= 10))
        total = sc.D.sum()
        assert sc.p_min.sum() <= 0.8 * total
        assert sc.p_max.sum() == pytest.approx(1.2 * total)
        assert sc.is_strictly_feasible()


def test_random_instances_reproducible():
    a, b = random_instances(5, seed=3), random_instances(5, seed=3)
    for x, y in zip(a, b):
        assert x.graph == y.graph and np.array_equal(x.D, y.D) and np.array_equal(x.a, y.a)


def test_instance_to_doc(rng):
    sc = random_instance(6, rng)
    back = ScenarioFile(instance_to_doc(sc)).to_instance()
    assert back.graph == sc.graph
    assert np.array_equal(back.p_max, sc.p_max) and np.array_equal(back.a, sc.a)
