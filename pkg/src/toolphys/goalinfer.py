"""Gaussian mixtures over property pairs and sequential goal inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import networkx as nx
import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateData, InsufficientSamples, MissingModel, NoActionPath
from .sregress import PhysicalRelationGraph
from .table import Level

COV_FLOOR = 1e-6


@dataclass(frozen=True)
class MixtureModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d, d)
    names: tuple = ()
    log_likelihood: tuple = field(default=(), compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        c = np.asarray(self.covariances, dtype=float).reshape(len(w), m.shape[1], m.shape[1])
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covariances", c)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return logsumexp(_component_logpdf(x, self.means, self.covariances)
                         + np.log(self.weights), axis=1)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MixtureModel":
        return cls(np.array(d["weights"], dtype=float), np.array(d["means"], dtype=float),
                   np.array(d["covariances"], dtype=float), tuple(d.get("names", ())))


def _component_logpdf(x, means, covs):
    """``(n, K)`` log densities."""
    n, d = x.shape
    out = np.empty((n, len(means)))
    for k, (mu, cov) in enumerate(zip(means, covs)):
        chol = np.linalg.cholesky(cov)
        z = np.linalg.solve(chol, (x - mu).T)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, k] = -0.5 * (np.sum(z * z, axis=0) + logdet + d * np.log(2 * np.pi))
    return out


def _clip_cov(cov, floor):
    # exact maximizer of the expected log-likelihood subject to eig >= floor
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def _kmeans_pp(x, k, rng):
    centers = [x[rng.integers(len(x))]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(len(x)) if total <= 0 else rng.choice(len(x), p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _em(x, k, rng, floor, max_iter, tol):
    n, d = x.shape
    centers = _kmeans_pp(x, k, rng)
    labels = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    resp = np.full((n, k), 1e-3 / max(k - 1, 1)) if k > 1 else np.ones((n, 1))
    if k > 1:
        resp[np.arange(n), labels] = 1.0 - 1e-3
    history = []
    weights = means = covs = None
    for _ in range(max_iter + 1):
        # M-step
        nk = resp.sum(axis=0) + 1e-12
        weights = nk / nk.sum()
        means = (resp.T @ x) / nk[:, None]
        covs = np.empty((k, d, d))
        for j in range(k):
            diff = x - means[j]
            covs[j] = _clip_cov((resp[:, j, None] * diff).T @ diff / nk[j], floor)
        # E-step
        logp = _component_logpdf(x, means, covs) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        resp = np.exp(logp - norm[:, None])
        if history and ll - history[-1] < tol * n:
            history.append(ll)
            break
        history.append(ll)
    weights = weights / weights.sum()
    return MixtureModel(weights, means, covs, log_likelihood=tuple(history)), history[-1]


def fit_gmm(samples, K: int | None = None, seed: int = 0, *, floor: float = COV_FLOOR,
            max_iter: int = 500, tol: float = 1e-8, k_max: int = 5, names=()) -> MixtureModel:
    """Fit a full-covariance mixture by EM.

    With ``K=None`` the component count is chosen by BIC over ``1..k_max``
    (only counts with enough samples are tried). ``tol`` bounds the
    per-sample log-likelihood gain that ends the iteration.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if d < 1:
        raise ValueError("need at least one dimension")
    if not np.all(np.isfinite(x)):
        raise DegenerateData("samples contain non-finite values")
    ks = [K] if K is not None else [k for k in range(1, k_max + 1) if n >= 5 * k * d]
    if not ks or n < 5 * ks[0] * d:
        raise InsufficientSamples(f"need >= {5 * (K or 1) * d} samples, have {n}")
    best, best_bic = None, np.inf
    for k in ks:
        rng = np.random.default_rng([seed, k])
        model, ll = _em(x, k, rng, floor, max_iter, tol)
        n_params = (k - 1) + k * d + k * d * (d + 1) / 2
        bic = -2 * ll + n_params * np.log(n)
        if bic < best_bic - 1e-9:
            best, best_bic = model, bic
    return MixtureModel(best.weights, best.means, best.covariances, tuple(names),
                        best.log_likelihood)


def condition(model: MixtureModel, observed_dims: Sequence[int], observed_values) -> MixtureModel:
    """Condition every component on ``x[observed_dims] = observed_values``."""
    obs = [int(i) for i in observed_dims]
    d = model.dim
    if not obs or len(set(obs)) != len(obs) or len(obs) >= d or min(obs) < 0 or max(obs) >= d:
        raise ValueError("observed_dims must be a proper nonempty subset of the dimensions")
    free = [i for i in range(d) if i not in obs]
    xo = np.atleast_1d(np.asarray(observed_values, dtype=float))
    means, covs, logw = [], [], []
    for w, mu, cov in zip(model.weights, model.means, model.covariances):
        s_oo = cov[np.ix_(obs, obs)]
        s_fo = cov[np.ix_(free, obs)]
        s_ff = cov[np.ix_(free, free)]
        gain = np.linalg.solve(s_oo, s_fo.T).T
        means.append(mu[free] + gain @ (xo - mu[obs]))
        c = s_ff - gain @ s_fo.T
        covs.append(0.5 * (c + c.T))
        logw.append(np.log(w) + _component_logpdf(xo[None], mu[obs][None], s_oo[None])[0, 0])
    logw = np.array(logw)
    weights = np.exp(logw - logsumexp(logw))
    # components whose posterior weight underflows carry no mass
    keep = weights > 0
    weights = weights[keep] / weights[keep].sum()
    names = tuple(model.names[i] for i in free) if model.names else ()
    return MixtureModel(weights, np.array(means)[keep], np.array(covs)[keep], names)


def sample(model: MixtureModel, seed) -> np.ndarray:
    """One draw: pick a component by weight, then a multivariate normal."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = int(rng.choice(model.n_components, p=model.weights))
    chol = np.linalg.cholesky(model.covariances[k] + 1e-300 * np.eye(model.dim))
    return model.means[k] + chol @ rng.standard_normal(model.dim)


def map_value(model: MixtureModel) -> np.ndarray:
    """Mean of the heaviest component."""
    return model.means[int(np.argmax(model.weights))].copy()


# -- goals ------------------------------------------------------------------------------

@dataclass
class GoalSpec:
    """Terminal contact goal.

    ``v_tool`` is the tool-tip velocity at contact (m/s, world), ``d_tool``
    the angle (rad) between the functional-basis normal and ``v_tool``, or
    ``None`` to leave the orientation free; ``p_g`` the contact position (m).
    """

    v_tool: np.ndarray
    d_tool: float | None
    p_g: np.ndarray
    inferred: dict = field(default_factory=dict)

    def __post_init__(self):
        self.v_tool = np.asarray(self.v_tool, dtype=float).reshape(3)
        self.p_g = np.asarray(self.p_g, dtype=float).reshape(3)
        if self.d_tool is not None:
            self.d_tool = float(self.d_tool)

    def validate(self, max_speed=np.inf, workspace=None):
        if np.linalg.norm(self.v_tool) > max_speed + 1e-12:
            raise ValueError(f"|v_tool| exceeds max speed {max_speed}")
        if self.d_tool is not None and not 0.0 <= self.d_tool <= np.pi:
            raise ValueError("d_tool must lie in [0, pi]")
        if workspace is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in workspace)
            if np.any(self.p_g < lo) or np.any(self.p_g > hi):
                raise ValueError("p_g outside the workspace box")

    def to_dict(self) -> dict:
        return {"v_tool": self.v_tool.tolist(), "d_tool": self.d_tool, "p_g": self.p_g.tolist(),
                "inferred": {k: float(v) for k, v in self.inferred.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GoalSpec":
        return cls(d["v_tool"], d.get("d_tool"), d["p_g"], dict(d.get("inferred", {})))


@dataclass(frozen=True)
class GoalConfig:
    """How sampled Action-level values become a :class:`GoalSpec`.

    ``action_map`` sends a property symbol to one of ``v_x``, ``v_y``,
    ``v_z`` (velocity component), ``speed`` (magnitude along
    ``direction``) or ``d_tool``.
    """

    action_map: Mapping = field(default_factory=dict)
    v_tool: tuple = (0.0, 0.0, -1.0)
    direction: tuple = (0.0, 0.0, -1.0)
    d_tool: float | None = None
    max_speed: float = 5.0
    workspace: tuple = ((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0))


def edge_key(source: str, target: str) -> str:
    return f"{source}->{target}"


def infer_goal(prg: PhysicalRelationGraph, models: Mapping, desired_effect: float, p_g, seed: int,
               config: GoalConfig = GoalConfig(), *, map_mode: bool = False,
               effect: str | None = None) -> GoalSpec:
    """Walk each Action-to-Effect path backwards, conditioning and sampling.

    ``models`` maps ``edge_key(source, target)`` (or a ``(source, target)``
    tuple) to a 2-D mixture over ``[target, source]``.
    """
    g = prg.digraph()
    if effect is None:
        effects = prg.effect_nodes()
        if not effects:
            raise NoActionPath("graph has no Effect node")
        effect = effects[0]
    actions = sorted(n for n, lvl in prg.nodes.items()
                     if Level(lvl) is Level.ACTION and n in g and nx.has_path(g, n, effect))
    if not actions:
        raise NoActionPath(f"no Action-level node reaches {effect!r}")

    values = {}
    for i, a in enumerate(actions):
        rng = np.random.default_rng([seed, i])
        path = nx.shortest_path(g, a, effect)
        current = float(desired_effect)
        for src, dst in reversed(list(zip(path[:-1], path[1:]))):
            model = models.get(edge_key(src, dst), models.get((src, dst)))
            if model is None:
                raise MissingModel(f"no joint model for edge {src} -> {dst}")
            cond = condition(model, [0], [current])
            current = float(map_value(cond)[0] if map_mode else sample(cond, rng)[0])
        values[a] = current

    v = np.array(config.v_tool, dtype=float)
    d_tool = config.d_tool
    direction = np.asarray(config.direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    for sym, val in values.items():
        fld = config.action_map.get(sym)
        if fld in ("v_x", "v_y", "v_z"):
            v["xyz".index(fld[-1])] = val
        elif fld == "speed":
            v = abs(val) * direction
        elif fld == "d_tool":
            d_tool = val
    speed = np.linalg.norm(v)
    if speed > config.max_speed:
        v = v * (config.max_speed / speed)
    if d_tool is not None:
        d_tool = float(np.clip(abs(d_tool), 0.0, np.pi))
    lo, hi = (np.asarray(b, dtype=float) for b in config.workspace)
    p = np.clip(np.asarray(p_g, dtype=float), lo, hi)
    return GoalSpec(v, d_tool, p, values)
