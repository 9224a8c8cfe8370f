import numpy as np
import pytest

from toolphys import expr as ex
from toolphys.errors import InsufficientSamples, MissingModel, NoActionPath
from toolphys.goalinfer import (GoalConfig, GoalSpec, MixtureModel, condition, edge_key, fit_gmm,
                                infer_goal, map_value, sample)
from toolphys.sregress import build_prg


def gaussian(mean, cov):
    return MixtureModel(np.ones(1), np.array([mean], float), np.array([cov], float))


def test_fit_single_gaussian_mean():
    rng = np.random.default_rng(0)
    n, d, sigma = 1000, 2, 0.5
    truth = np.array([1.0, -2.0])
    x = truth + sigma * rng.standard_normal((n, d))
    m = fit_gmm(x, K=1, seed=0)
    # the K=1 MLE is the sample mean
    assert np.max(np.abs(m.means[0] - x.mean(axis=0))) <= 0.1 * sigma / np.sqrt(n) * np.sqrt(d)
    assert np.max(np.abs(m.means[0] - truth)) <= 4 * sigma / np.sqrt(n)


def test_fit_identical_samples_returns_floored_model():
    m = fit_gmm(np.ones((50, 2)), K=1, seed=0)
    np.testing.assert_allclose(m.covariances[0], 1e-6 * np.eye(2), atol=1e-15)
    assert np.min(np.linalg.eigvalsh(m.covariances[0])) >= 1e-9


def test_fit_two_clusters_weights():
    rng = np.random.default_rng(1)
    a = rng.normal([0, 0], 0.3, size=(300, 2))
    b = rng.normal([5, 5], 0.3, size=(700, 2))
    m = fit_gmm(np.vstack([a, b]), K=2, seed=3)
    w = sorted(m.weights)
    assert w[0] == pytest.approx(0.3, abs=0.05) and w[1] == pytest.approx(0.7, abs=0.05)
    assert abs(m.weights.sum() - 1) <= 1e-12


def test_fit_bic_picks_two_components():
    rng = np.random.default_rng(2)
    x = np.vstack([rng.normal(-4, 0.5, size=(200, 1)), rng.normal(4, 0.5, size=(200, 1))])
    assert fit_gmm(x, seed=0).n_components == 2


def test_em_log_likelihood_monotone():
    rng = np.random.default_rng(4)
    x = np.vstack([rng.normal([0, 1], [1.0, 0.2], size=(200, 2)),
                   rng.normal([3, -1], [0.4, 0.8], size=(150, 2)),
                   rng.normal([-2, 4], 0.5, size=(150, 2))])
    m = fit_gmm(x, K=3, seed=0)
    ll = np.array(m.log_likelihood)
    assert len(ll) > 2
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[1:]))


def test_fit_insufficient_samples():
    with pytest.raises(InsufficientSamples):
        fit_gmm(np.zeros((9, 2)), K=1)


def test_condition_closed_form():
    m = gaussian([0, 0], [[1, 0.5], [0.5, 1]])
    c = condition(m, [0], [1.0])
    assert c.means[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert c.covariances[0, 0, 0] == pytest.approx(0.75, abs=1e-12)


def test_condition_schur_complement_exact():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((4, 4))
    cov = a @ a.T + 0.1 * np.eye(4)
    mu = rng.standard_normal(4)
    c = condition(gaussian(mu, cov), [1, 3], [0.2, -0.4])
    free, obs = [0, 2], [1, 3]
    s = cov[np.ix_(free, free)] - cov[np.ix_(free, obs)] @ np.linalg.inv(cov[np.ix_(obs, obs)]) @ cov[np.ix_(obs, free)]
    np.testing.assert_allclose(c.covariances[0], s, atol=1e-9)


def test_condition_symmetric_weights_and_independence():
    m = MixtureModel(np.array([0.5, 0.5]), np.array([[-1.0, 0.0], [1.0, 0.0]]),
                     np.array([np.eye(2), np.eye(2)]))
    c = condition(m, [0], [0.0])
    np.testing.assert_allclose(c.weights, [0.5, 0.5], atol=1e-12)
    diag = gaussian([2.0, 3.0], np.diag([1.0, 4.0]))
    c = condition(diag, [0], [10.0])
    assert c.means[0, 0] == pytest.approx(3.0) and c.covariances[0, 0, 0] == pytest.approx(4.0)
    with pytest.raises(ValueError):
        condition(diag, [0, 1], [0.0, 0.0])


def test_sample_examples():
    m = gaussian([0.0, 0.0], 1e-6 * np.eye(2))
    assert np.max(np.abs(sample(m, 0))) < 1e-2
    tiny = gaussian([0.0], [[1e-12]])
    assert abs(sample(tiny, 1)[0]) < 1e-3
    np.testing.assert_array_equal(sample(m, 5), sample(m, 5))
    g = gaussian([1.0, -1.0], [[2.0, 0.3], [0.3, 0.5]])
    rng = np.random.default_rng(9)
    draws = np.array([sample(g, rng) for _ in range(100_000)])
    sd = np.sqrt(np.diag(g.covariances[0]))
    assert np.all(np.abs(draws.mean(axis=0) - g.means[0]) <= 3 * sd / np.sqrt(len(draws)))


def _planted_chain(n=2000, noise=1e-4, seed=0):
    # pieces = 2 F + 1, F = -30 v_z
    rng = np.random.default_rng(seed)
    v = rng.uniform(-2.0, -0.2, n)
    f = -30.0 * v + noise * rng.standard_normal(n)
    p = 2.0 * f + 1.0 + noise * rng.standard_normal(n)
    prg = build_prg([("pieces", ex.parse("2.0 * F + 1.0"), {"F": 1.0}),
                     ("F", ex.parse("-30.0 * v_z"), {"v_z": 1.0})],
                    {"pieces": "Effect", "F": "Simulation", "v_z": "Action"})
    models = {edge_key("F", "pieces"): fit_gmm(np.c_[p, f], K=1, seed=0, floor=1e-12),
              edge_key("v_z", "F"): fit_gmm(np.c_[f, v], K=1, seed=0, floor=1e-12)}
    return prg, models


def test_infer_goal_planted_chain_map_and_sample():
    prg, models = _planted_chain()
    cfg = GoalConfig(action_map={"v_z": "v_z"}, v_tool=(0, 0, 0), d_tool=0.0)
    desired = 41.0  # F = 20, v_z = -2/3
    g = infer_goal(prg, models, desired, [0.5, 0, 0.1], seed=0, config=cfg, map_mode=True)
    assert g.v_tool[2] == pytest.approx(-2.0 / 3.0, abs=1e-3)
    assert g.d_tool == 0.0
    g2 = infer_goal(prg, models, desired, [0.5, 0, 0.1], seed=0, config=cfg)
    assert g2.v_tool[2] == pytest.approx(-2.0 / 3.0, abs=1e-3)
    g3 = infer_goal(prg, models, desired, [0.5, 0, 0.1], seed=0, config=cfg)
    np.testing.assert_array_equal(g2.v_tool, g3.v_tool)


def test_infer_goal_within_conditional_sigma():
    prg, models = _planted_chain(noise=0.05, seed=1)
    cfg = GoalConfig(action_map={"v_z": "v_z"}, v_tool=(0, 0, 0))
    for seed in range(10):
        g = infer_goal(prg, models, 41.0, [0, 0, 0], seed=seed, config=cfg)
        cond_f = condition(models["F->pieces"], [0], [41.0])
        f = g.inferred["v_z"]
        cond_v = condition(models["v_z->F"], [0], [20.0])
        sd = np.sqrt(cond_v.covariances[0, 0, 0] + cond_f.covariances[0, 0, 0] / 900.0)
        assert abs(f - (-2.0 / 3.0)) <= 3 * sd + 1e-3


def test_infer_goal_errors():
    prg, models = _planted_chain()
    with pytest.raises(MissingModel):
        infer_goal(prg, {"F->pieces": models["F->pieces"]}, 4.0, [0, 0, 0], seed=0)
    lonely = build_prg([("pieces", ex.parse("2.0 * F"), {"F": 1.0})],
                       {"pieces": "Effect", "F": "Simulation"})
    with pytest.raises(NoActionPath):
        infer_goal(lonely, models, 4.0, [0, 0, 0], seed=0)


def test_infer_goal_cut_graph_populates_velocity_and_orientation():
    rng = np.random.default_rng(0)
    n = 1500
    v = rng.uniform(-2.0, -0.5, n)
    d = rng.uniform(0.0, 1.0, n)
    f = -20 * v + 0.01 * rng.standard_normal(n)
    area = 0.002 + 0.02 * d + 1e-4 * rng.standard_normal(n)
    pieces = 0.2 * f - 100 * area + 0.01 * rng.standard_normal(n)
    levels = {"pieces": "Effect", "F": "Simulation", "A": "Simulation", "v_z": "Action",
              "d_tool": "Action"}
    prg = build_prg([("pieces", ex.parse("0.2 * F - 100 * A"), {"F": 0.5, "A": 0.5}),
                     ("F", ex.parse("-20 * v_z"), {"v_z": 1.0}),
                     ("A", ex.parse("0.002 + 0.02 * d_tool"), {"d_tool": 1.0})], levels)
    models = {"F->pieces": fit_gmm(np.c_[pieces, f], K=1), "A->pieces": fit_gmm(np.c_[pieces, area], K=1),
              "v_z->F": fit_gmm(np.c_[f, v], K=1), "d_tool->A": fit_gmm(np.c_[area, d], K=1)}
    cfg = GoalConfig(action_map={"v_z": "v_z", "d_tool": "d_tool"}, v_tool=(0, 0, 0))
    g = infer_goal(prg, models, 2.0, [0, 0, 0], seed=3, config=cfg, map_mode=True)
    assert g.v_tool[2] < 0 and g.d_tool is not None and 0 <= g.d_tool <= np.pi
    assert set(g.inferred) == {"v_z", "d_tool"}


def test_goal_clamp_and_round_trip():
    prg, models = _planted_chain()
    cfg = GoalConfig(action_map={"v_z": "v_z"}, v_tool=(0, 0, 0), max_speed=0.5,
                     workspace=((-1, -1, 0), (1, 1, 1)))
    g = infer_goal(prg, models, 41.0, [3.0, 0, -1], seed=0, config=cfg, map_mode=True)
    assert np.linalg.norm(g.v_tool) == pytest.approx(0.5)
    np.testing.assert_array_equal(g.p_g, [1.0, 0.0, 0.0])
    g.validate(cfg.max_speed, cfg.workspace)
    again = GoalSpec.from_dict(g.to_dict())
    np.testing.assert_array_equal(again.v_tool, g.v_tool)
    assert again.d_tool == g.d_tool


def test_mixture_round_trip_and_map():
    m = MixtureModel(np.array([0.25, 0.75]), np.array([[0.0, 1.0], [2.0, 3.0]]),
                     np.array([np.eye(2), 2 * np.eye(2)]), ("a", "b"))
    again = MixtureModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(again.covariances, m.covariances)
    np.testing.assert_array_equal(map_value(m), [2.0, 3.0])
