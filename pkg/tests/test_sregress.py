import numpy as np
import pytest

from toolphys import expr as ex
from toolphys.errors import (CycleDetected, DanglingTarget, EmptyCandidates, EmptyDomain,
                             InsufficientData)
from toolphys.sregress import (RegressionConfig, build_prg, contribution, fit_scores, idsr,
                               pareto_select, symbolic_regress)
from toolphys.table import Level, VariableTable


def planted(f, names, parents=None, n=1000, seed=0, noise=1e-6):
    rng = np.random.default_rng(seed)
    cols = {k: rng.uniform(0.5, 2.0, n) for k in names}
    y = f(cols)
    if np.std(y) > 0:
        y = y + noise * np.std(y) * rng.standard_normal(n)
    levels = {k: "Action" for k in names}
    levels["y"] = "Effect"
    return VariableTable.from_arrays({**cols, "y": y}, levels, parents or {})


def test_table_validation():
    with pytest.raises(ValueError):
        VariableTable.from_arrays({"a": [1, 2], "b": [1]}, {"a": "Action", "b": "Action"})
    with pytest.raises(ValueError):
        VariableTable.from_arrays({"a": [1.0], "b": [1.0]}, {"a": "Action", "b": "Action"},
                                  {"a": "b", "b": "a"})
    # Effect child of an Action parent sits above its parent
    with pytest.raises(ValueError):
        VariableTable.from_arrays({"a": [1.0], "e": [1.0]}, {"a": "Action", "e": "Effect"}, {"e": "a"})


def test_pareto_select_examples():
    t3, t5, t9 = (ex.parse(s) for s in ("x + y", "x + (y * z)", "((x + y) * z) / (w + v)"))
    assert ex.complexity(t3) == 3 and ex.complexity(t5) == 5 and ex.complexity(t9) == 9
    assert pareto_select([(t3, 0.5), (t5, 0.01), (t9, 0.0099)], 0.05) is t5
    assert pareto_select([(t3, 0.5)], 0.05) is t3
    a, b = ex.parse("x + y"), ex.parse("x * y")
    assert pareto_select([(a, 0.0102), (b, 0.0100)], 0.05) is b
    with pytest.raises(EmptyCandidates):
        pareto_select([], 0.05)


def test_symbolic_regress_linear():
    data = planted(lambda c: 3 * c["x1"], ["x1", "x2"])
    tree = symbolic_regress(data, "y", {"x1", "x2"}, RegressionConfig(seed=1))
    assert ex.leaf_symbols(tree) == {"x1"}
    assert fit_scores(tree, data, "y")[1] >= 0.999


def test_symbolic_regress_constant():
    data = planted(lambda c: 0 * c["x1"] + 7.0, ["x1", "x2"], n=50)
    tree = symbolic_regress(data, "y", {"x1", "x2"}, RegressionConfig(seed=0, generations=5))
    assert isinstance(tree, ex.Const) and ex.complexity(tree) == 1
    assert tree.value == pytest.approx(7.0)


def test_symbolic_regress_product():
    data = planted(lambda c: c["x1"] * c["x2"], ["x1", "x2", "x3"])
    tree = symbolic_regress(data, "y", {"x1", "x2", "x3"}, RegressionConfig(seed=2))
    assert ex.leaf_symbols(tree) == {"x1", "x2"}


def test_symbolic_regress_errors():
    data = planted(lambda c: c["x1"], ["x1"], n=5)
    with pytest.raises(InsufficientData):
        symbolic_regress(data, "y", {"x1"}, RegressionConfig(seed=0))
    data = planted(lambda c: c["x1"], ["x1"], n=20)
    with pytest.raises(EmptyDomain):
        symbolic_regress(data, "y", set(), RegressionConfig(seed=0))


def test_symbolic_regress_deterministic():
    data = planted(lambda c: c["x1"] + c["x2"], ["x1", "x2"], n=100)
    cfg = RegressionConfig(seed=5, generations=8)
    a = symbolic_regress(data, "y", {"x1", "x2"}, cfg)
    b = symbolic_regress(data, "y", {"x1", "x2"}, cfg)
    assert ex.to_text(a) == ex.to_text(b)


def test_idsr_deepens_unselected_root():
    names = ["x1", "x2", "x3", "x4", "x5", "x6"]
    data = planted(lambda c: c["x1"] + c["x5"] * c["x6"], names, {"x5": "x4", "x6": "x4"})
    res = idsr(data, "y", RegressionConfig(seed=0), levels=[Level.ACTION])
    assert ex.leaf_symbols(res.trees[0]) == {"x1"}
    assert "x4" not in res.domains[1] and {"x5", "x6"} <= set(res.domains[1])
    assert ex.leaf_symbols(res.tree) == {"x1", "x5", "x6"}
    assert res.iterations == 2


def test_idsr_single_root_terminates():
    data = planted(lambda c: 2 * c["x1"], ["x1"], n=200)
    res = idsr(data, "y", RegressionConfig(seed=0, generations=10), levels=[Level.ACTION])
    assert res.iterations == 1
    assert ex.leaf_symbols(res.tree) == {"x1"}


def test_idsr_default_levels_use_level_below():
    rng = np.random.default_rng(0)
    f = rng.uniform(1, 2, 200)
    v = rng.uniform(1, 2, 200)
    data = VariableTable.from_arrays({"v": v, "F": f, "pieces": 2 * f},
                                     {"v": "Action", "F": "Simulation", "pieces": "Effect"})
    res = idsr(data, "pieces", RegressionConfig(seed=0, generations=5))
    assert res.domains[0] == ["F"]


def test_contribution_examples():
    rng = np.random.default_rng(3)
    x1 = rng.standard_normal(500)
    x2 = rng.standard_normal(500)
    x2 = (x2 - x2.mean()) / x2.std() * x1.std() + x1.mean()
    data = VariableTable.from_arrays({"x1": x1, "x2": x2}, {"x1": "Action", "x2": "Action"})
    assert contribution(ex.parse("x1"), data) == {"x1": 1.0}
    w = contribution(ex.parse("x1 + x2"), data)
    assert w["x1"] == pytest.approx(0.5, abs=1e-6) and w["x2"] == pytest.approx(0.5, abs=1e-6)
    w = contribution(ex.parse("10*x1 + x2"), data)
    assert w["x1"] == pytest.approx(10 / 11, abs=1e-6)
    w = contribution(ex.parse("x1 * square(x2) + x2"), data)
    assert sum(w.values()) == pytest.approx(1.0, abs=1e-9) and min(w.values()) >= 0


def test_build_prg_examples():
    levels = {"pieces": "Effect", "contact_force": "Simulation", "v_z": "Action"}
    t1 = ex.parse("2.0 * contact_force")
    prg = build_prg([("pieces", t1, {"contact_force": 1.0})], levels)
    assert len(prg.nodes) == 2 and len(prg.edges) == 1 and prg.edges[0].weight == 1.0

    t2 = ex.parse("square(v_z)")
    prg = build_prg([("pieces", t1, {"contact_force": 1.0}),
                     ("contact_force", t2, {"v_z": 1.0})], levels)
    assert set(prg.nodes) == {"pieces", "contact_force", "v_z"}
    assert [(e.source, e.target, e.pass_index) for e in prg.edges] == [
        ("contact_force", "pieces", 0), ("v_z", "contact_force", 1)]
    assert prg.nodes["v_z"] is Level.ACTION

    with pytest.raises(DanglingTarget):
        build_prg([("pieces", t1, {"contact_force": 1.0}), ("energy", t2, {"v_z": 1.0})], levels)
    with pytest.raises(CycleDetected):
        build_prg([("pieces", t1, {"contact_force": 1.0}),
                   ("contact_force", ex.parse("pieces"), {"pieces": 1.0})], levels)


def test_prg_round_trip():
    levels = {"pieces": "Effect", "F": "Simulation", "A": "Simulation", "v": "Action", "d": "Action"}
    prg = build_prg([("pieces", ex.parse("F / A"), {"F": 0.6, "A": 0.4}),
                     ("F", ex.parse("square(v)"), {"v": 1.0}),
                     ("A", ex.parse("abs(d)"), {"d": 1.0})], levels)
    again = type(prg).from_dict(prg.to_dict())
    assert again.to_dict() == prg.to_dict()
    for target in ("pieces", "F", "A"):
        assert sum(e.weight for e in prg.incoming(target)) == pytest.approx(1.0, abs=1e-9)
