"""Symbolic regression, iterative domain deepening and relation graphs.

The regression engine is a small genetic-programming loop (tournament
selection, subtree crossover and mutation, coordinate hill-climbing of the
elite constants each generation). Every evaluated tree also feeds a
per-complexity archive together with its affine-rescaled variants; after
the last generation the archive constants are polished by least squares and
the final tree is picked by :func:`pareto_select`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np
from scipy.optimize import least_squares

from . import expr as ex
from .errors import (CycleDetected, DanglingTarget, DomainError, EmptyCandidates, EmptyDomain,
                     InsufficientData)
from .table import Level, VariableTable

log = logging.getLogger(__name__)

MIN_SAMPLES = 10
POW_EXPONENTS = (-3.0, -2.0, -1.0, 2.0, 3.0)


@dataclass(frozen=True)
class RegressionConfig:
    seed: int
    population_size: int = 200
    generations: int = 30
    tournament_size: int = 5
    p_crossover: float = 0.6
    p_mutation: float = 0.35
    max_complexity: int = 15
    pareto_delta: float = 0.05
    init_depth: tuple = (1, 3)
    const_range: tuple = (-3.0, 3.0)
    n_elite: int = 4
    hill_climb_rounds: int = 6

    def __post_init__(self):
        for name in ("p_crossover", "p_mutation"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.p_crossover + self.p_mutation > 1.0:
            raise ValueError("p_crossover + p_mutation must not exceed 1")
        if self.pareto_delta < 0:
            raise ValueError("pareto_delta must be >= 0")
        if self.tournament_size < 1 or self.population_size < 2:
            raise ValueError("population_size >= 2 and tournament_size >= 1 required")
        if self.seed is None:
            raise ValueError("seed is mandatory")


# -- Pareto selection -----------------------------------------------------------------

def pareto_select(candidates: Iterable, delta: float = 0.05, atol: float = 0.0):
    """Pick the simplest tree whose MSE lies within ``(1+delta)*min_mse + atol``.

    Ties on complexity go to the lower MSE, then to the lexicographically
    smaller text form.
    """
    cands = [(t, float(m)) for t, m in candidates]
    if not cands:
        raise EmptyCandidates("no candidates")
    if not all(np.isfinite(m) for _, m in cands):
        raise ValueError("candidate MSEs must be finite")
    best = min(m for _, m in cands)
    band = [(t, m) for t, m in cands if m <= (1.0 + delta) * best + atol]
    return min(band, key=lambda tm: (ex.complexity(tm[0]), tm[1], ex.to_text(tm[0])))[0]


# -- GP machinery ------------------------------------------------------------------------

def _preorder(tree):
    out = [tree]
    for c in ex.children(tree):
        out.extend(_preorder(c))
    return out


def _replace(tree, index, new):
    """Replace the pre-order ``index``-th node of ``tree`` with ``new``."""
    if index == 0:
        return new
    index -= 1
    if isinstance(tree, ex.Unary):
        return ex.Unary(tree.op, _replace(tree.child, index, new))
    size_left = ex.complexity(tree.left)
    if index < size_left:
        return ex.Binary(tree.op, _replace(tree.left, index, new), tree.right)
    return ex.Binary(tree.op, tree.left, _replace(tree.right, index - size_left, new))


def _free_const_mask(tree, frozen=False):
    # pow exponents stay fixed integers
    if isinstance(tree, ex.Const):
        return [not frozen]
    if isinstance(tree, ex.Var):
        return []
    if isinstance(tree, ex.Unary):
        return _free_const_mask(tree.child)
    return _free_const_mask(tree.left) + _free_const_mask(tree.right, frozen=tree.op == "pow")


class _Engine:
    def __init__(self, y, columns, domain, cfg: RegressionConfig, warm=()):
        self.y = y
        self.warm = list(warm)
        self.cols = columns
        self.n = len(y)
        self.domain = list(domain)
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.var_y = float(np.var(y))
        self.cache = {}
        self.archive = {}

    # random trees
    def terminal(self):
        if self.rng.random() < 0.75:
            return ex.Var(self.domain[self.rng.integers(len(self.domain))])
        lo, hi = self.cfg.const_range
        return ex.Const(float(np.round(self.rng.uniform(lo, hi), 3)))

    def grow(self, depth, full=False):
        if depth <= 0 or (not full and self.rng.random() < 0.3):
            return self.terminal()
        r = self.rng.random()
        if r < 0.72:
            op = ("add", "sub", "mul", "div")[self.rng.integers(4)]
            return ex.Binary(op, self.grow(depth - 1, full), self.grow(depth - 1, full))
        if r < 0.80:
            k = POW_EXPONENTS[self.rng.integers(len(POW_EXPONENTS))]
            return ex.Binary("pow", self.grow(depth - 1, full), ex.Const(k))
        op = ex.UNARY_OPS[self.rng.integers(len(ex.UNARY_OPS))]
        return ex.Unary(op, self.grow(depth - 1, full))

    def initial_population(self):
        pop = [ex.Var(v) for v in self.domain] + self.warm
        lo, hi = self.cfg.init_depth
        while len(pop) < self.cfg.population_size:
            d = int(self.rng.integers(lo, hi + 1))
            t = self.grow(d, full=bool(self.rng.integers(2)))
            if ex.complexity(t) <= self.cfg.max_complexity:
                pop.append(t)
        return pop[: self.cfg.population_size]

    # fitness
    def values(self, tree):
        f = ex.evaluate_array(tree, self.cols, self.n)
        if not np.all(np.isfinite(f)):
            return None
        return f

    def fitness(self, tree):
        """Affine-rescaled MSE; inf for trees invalid on any sample."""
        hit = self.cache.get(tree)
        if hit is not None:
            return hit
        f = self.values(tree)
        if f is None:
            score = np.inf
        else:
            score = self._offer(tree, f)
        self.cache[tree] = score
        return score

    def _archive_put(self, tree, mse):
        c = ex.complexity(tree)
        if c > self.cfg.max_complexity + 4 or not np.isfinite(mse):
            return
        cur = self.archive.get(c)
        if cur is None or (mse, ex.to_text(tree)) < (cur[1], ex.to_text(cur[0])):
            self.archive[c] = (tree, mse)

    def _offer(self, tree, f):
        y = self.y
        mse_raw = float(np.mean((y - f) ** 2))
        self._archive_put(tree, mse_raw)
        fc = f - f.mean()
        vf = float(np.mean(fc * fc))
        if vf <= 1e-300 * max(1.0, float(np.mean(f * f))):
            return self.var_y
        b = float(np.mean(fc * (y - y.mean()))) / vf
        a = float(y.mean() - b * f.mean())
        mse_ab = float(np.mean((y - a - b * f) ** 2))
        a0 = float(np.mean(y - f))
        ff = float(np.mean(f * f))
        b0 = float(np.mean(f * y)) / ff if ff > 0 else 0.0
        for variant, m in (
            (ex.Binary("add", ex.Const(a0), tree), float(np.mean((y - a0 - f) ** 2))),
            (ex.Binary("mul", ex.Const(b0), tree), float(np.mean((y - b0 * f) ** 2))),
            (ex.Binary("add", ex.Const(a), ex.Binary("mul", ex.Const(b), tree)), mse_ab),
        ):
            self._archive_put(ex.simplify(variant), m)
        return min(mse_ab, mse_raw)

    def raw_mse(self, tree):
        f = self.values(tree)
        return np.inf if f is None else float(np.mean((self.y - f) ** 2))

    # variation operators
    def tournament(self, pop, fit):
        idx = self.rng.integers(len(pop), size=self.cfg.tournament_size)
        best = min(idx, key=lambda i: (fit[i], ex.complexity(pop[i]), i))
        return pop[best]

    def crossover(self, a, b):
        for _ in range(4):
            na, nb = _preorder(a), _preorder(b)
            child = _replace(a, int(self.rng.integers(len(na))), nb[int(self.rng.integers(len(nb)))])
            if ex.complexity(child) <= self.cfg.max_complexity:
                return child
        return a

    def mutate(self, t):
        nodes = _preorder(t)
        r = self.rng.random()
        i = int(self.rng.integers(len(nodes)))
        node = nodes[i]
        if r < 0.4:
            new = _replace(t, i, self.grow(int(self.rng.integers(0, 3))))
        elif r < 0.75:
            new = _replace(t, i, self._point(node))
        elif r < 0.9:
            new = nodes[i] if i > 0 else self.grow(2)
        else:
            # wrap a subtree in a fresh binary op with a terminal
            op = ("add", "sub", "mul", "div")[self.rng.integers(4)]
            new = _replace(t, i, ex.Binary(op, node, self.terminal()))
        return new if ex.complexity(new) <= self.cfg.max_complexity else t

    def _point(self, node):
        if isinstance(node, ex.Var):
            return ex.Var(self.domain[self.rng.integers(len(self.domain))])
        if isinstance(node, ex.Const):
            return ex.Const(float(node.value * (1 + 0.5 * self.rng.standard_normal())))
        if isinstance(node, ex.Unary):
            return ex.Unary(ex.UNARY_OPS[self.rng.integers(len(ex.UNARY_OPS))], node.child)
        if node.op == "pow":
            k = POW_EXPONENTS[self.rng.integers(len(POW_EXPONENTS))]
            return ex.Binary("pow", node.left, ex.Const(k))
        op = ("add", "sub", "mul", "div")[self.rng.integers(4)]
        return ex.Binary(op, node.left, node.right)

    # constant refinement
    def hill_climb(self, tree):
        mask = _free_const_mask(tree)
        if not any(mask):
            return tree
        vals = ex.constants(tree)
        best = self.raw_mse(tree)
        step = 0.5
        for _ in range(self.cfg.hill_climb_rounds):
            improved = False
            for j, free in enumerate(mask):
                if not free:
                    continue
                for cand in (vals[j] * (1 + step), vals[j] * (1 - step), vals[j] + step, vals[j] - step):
                    trial = list(vals)
                    trial[j] = cand
                    m = self.raw_mse(ex.substitute_constants(tree, trial))
                    if m < best:
                        best, vals, improved = m, trial, True
            if not improved:
                step *= 0.5
        out = ex.substitute_constants(tree, vals)
        self.fitness(out)
        return out

    def polish(self, tree):
        """Least-squares refinement of the free constants."""
        mask = np.array(_free_const_mask(tree), dtype=bool)
        if not mask.any():
            return tree, self.raw_mse(tree)
        vals = np.array(ex.constants(tree), dtype=float)

        def resid(p):
            full = vals.copy()
            full[mask] = p
            f = self.values(ex.substitute_constants(tree, full))
            if f is None:
                return np.full(self.n, 1e6)
            return f - self.y

        try:
            res = least_squares(resid, vals[mask], method="lm", xtol=1e-15, ftol=1e-15,
                                gtol=1e-15, max_nfev=200 * (mask.sum() + 1))
        except ValueError:
            return tree, self.raw_mse(tree)
        full = vals.copy()
        full[mask] = res.x
        cand = ex.substitute_constants(tree, full)
        m_new, m_old = self.raw_mse(cand), self.raw_mse(tree)
        return (cand, m_new) if m_new < m_old else (tree, m_old)

    def run(self):
        cfg = self.cfg
        self._archive_put(ex.Const(float(self.y.mean())), self.var_y)
        pop = self.initial_population()
        for gen in range(cfg.generations):
            fit = [self.fitness(t) for t in pop]
            order = sorted(range(len(pop)), key=lambda i: (fit[i], ex.complexity(pop[i]), i))
            elites = [self.hill_climb(pop[i]) for i in order[: cfg.n_elite]]
            new = list(elites)
            while len(new) < cfg.population_size:
                r = self.rng.random()
                parent = self.tournament(pop, fit)
                if r < cfg.p_crossover:
                    child = self.crossover(parent, self.tournament(pop, fit))
                elif r < cfg.p_crossover + cfg.p_mutation:
                    child = self.mutate(parent)
                else:
                    child = parent
                new.append(child)
            pop = new
        for t in pop:
            self.fitness(t)
        front = []
        for c in sorted(self.archive):
            tree, _ = self.archive[c]
            tree, m = self.polish(tree)
            tree = ex.simplify(tree)
            front.append((tree, self.raw_mse(tree)))
        front = [(t, m) for t, m in front if np.isfinite(m)]
        return front


def _check_inputs(data: VariableTable, target: str, domain):
    if target not in data:
        raise KeyError(f"unknown target {target!r}")
    if data.n_samples < MIN_SAMPLES:
        raise InsufficientData(f"need >= {MIN_SAMPLES} samples, have {data.n_samples}")
    domain = sorted(set(domain))
    if not domain:
        raise EmptyDomain("empty search domain")
    if target in domain:
        raise ValueError("target must not be in the search domain")
    missing = [v for v in domain if v not in data]
    if missing:
        raise KeyError(f"domain symbols missing from data: {missing}")
    return domain


def _mse_atol(y):
    # absorbs float rounding between equally exact fits
    return 1e-24 * float(np.mean(np.asarray(y) ** 2)) + 1e-300


def regression_front(data: VariableTable, target: str, domain, cfg: RegressionConfig, warm=()) -> list:
    """Polished per-complexity archive ``[(tree, mse), ...]`` of one GP run.

    ``warm`` trees join the initial population when they only use domain symbols.
    """
    domain = _check_inputs(data, target, domain)
    y = np.asarray(data[target], dtype=float)
    warm = [t for t in warm if ex.leaf_symbols(t) <= set(domain) and ex.complexity(t) <= cfg.max_complexity]
    eng = _Engine(y, data.arrays(domain), domain, cfg, warm)
    with np.errstate(all="ignore"):
        return eng.run()


def symbolic_regress(data: VariableTable, target: str, domain, cfg: RegressionConfig, warm=()):
    """Pareto-selected expression for ``target`` over the symbols in ``domain``."""
    front = regression_front(data, target, domain, cfg, warm)
    return pareto_select(front, cfg.pareto_delta, atol=_mse_atol(data[target]))


def fit_scores(tree, data: VariableTable, target: str) -> tuple:
    """``(mse, r2)`` of ``tree`` against ``target``; NaN predictions count as inf."""
    y = np.asarray(data[target], dtype=float)
    f = ex.evaluate_array(tree, data.arrays(), len(y))
    if not np.all(np.isfinite(f)):
        return np.inf, -np.inf
    mse = float(np.mean((y - f) ** 2))
    var = float(np.var(y))
    r2 = 1.0 - mse / var if var > 0 else (1.0 if mse == 0 else -np.inf)
    return mse, r2


# -- iterative deepening ------------------------------------------------------------------

@dataclass
class IDSRResult:
    tree: object
    iterations: int
    domains: list = field(default_factory=list)
    trees: list = field(default_factory=list)


def idsr(data: VariableTable, target: str, cfg: RegressionConfig, levels=None) -> IDSRResult:
    """Iterative-deepening symbolic regression.

    The domain starts from the root columns (restricted to ``levels``, which
    defaults to the level just below the target's). After each regression,
    every domain symbol missing from the tree's leaves that has children is
    swapped for them and the kept tree seeds the next search; the loop stops
    once no swap happens. A new tree only replaces the kept one when
    :func:`pareto_select` prefers it.
    """
    if target not in data:
        raise KeyError(f"unknown target {target!r}")
    if levels is None:
        below = data.level(target).below()
        levels = [below] if below is not None else [data.level(target)]
    domain = data.roots(exclude=(target,), levels=levels)
    if not domain:
        raise EmptyDomain(f"no root variables for target {target!r}")
    atol = _mse_atol(data[target])
    kept, kept_mse = None, None
    result = IDSRResult(tree=None, iterations=0)
    terminate = False
    while not terminate:
        terminate = True
        # the kept tree seeds the deeper search, which then only has to extend it
        tree = symbolic_regress(data, target, domain, cfg, warm=() if kept is None else (kept,))
        mse, _ = fit_scores(tree, data, target)
        result.iterations += 1
        result.domains.append(list(domain))
        result.trees.append(tree)
        if kept is None or pareto_select([(kept, kept_mse), (tree, mse)], cfg.pareto_delta, atol) is tree:
            kept, kept_mse = tree, mse
        leaves = ex.leaf_symbols(tree)
        diff = [v for v in domain if v not in leaves]
        for v in diff:
            kids = data.children(v)
            if kids:
                domain = [d for d in domain if d != v] + [k for k in kids if k not in domain]
                terminate = False
        log.debug("idsr %s iteration %d: %s", target, result.iterations, ex.to_text(tree))
    result.tree = kept
    return result


# -- contribution weights -------------------------------------------------------------------

def contribution(tree, data: VariableTable) -> dict:
    """Sensitivity-times-spread weight of each leaf symbol, normalized to 1."""
    leaves = sorted(ex.leaf_symbols(tree))
    if not leaves:
        return {}
    missing = [v for v in leaves if v not in data]
    if missing:
        raise KeyError(f"leaf symbols missing from data: {missing}")
    cols = data.arrays(leaves)
    n = data.n_samples
    base = ex.evaluate_array(tree, cols, n)
    valid = np.isfinite(base)
    grads = {}
    for v in leaves:
        std = float(np.std(cols[v]))
        h = max(1e-4 * std, 1e-8)
        up = dict(cols)
        dn = dict(cols)
        up[v] = cols[v] + h
        dn[v] = cols[v] - h
        fp = ex.evaluate_array(tree, up, n)
        fm = ex.evaluate_array(tree, dn, n)
        g = (fp - fm) / (2 * h)
        valid &= np.isfinite(g)
        grads[v] = (g, std)
    if valid.mean() < 0.5:
        raise DomainError("tree evaluation fails on more than half of the samples")
    raw = {v: float(np.mean(np.abs(g[valid]))) * std for v, (g, std) in grads.items()}
    total = sum(raw.values())
    if total <= 0:
        return {v: 1.0 / len(leaves) for v in leaves}
    return {v: w / total for v, w in raw.items()}


# -- physical relation graph ---------------------------------------------------------------

@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    weight: float
    expression: str
    pass_index: int


@dataclass
class PhysicalRelationGraph:
    nodes: dict = field(default_factory=dict)  # symbol -> Level
    edges: list = field(default_factory=list)

    def digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for n, lvl in self.nodes.items():
            g.add_node(n, level=lvl)
        for e in self.edges:
            g.add_edge(e.source, e.target, weight=e.weight, expression=e.expression,
                       pass_index=e.pass_index)
        return g

    def incoming(self, target: str) -> list:
        return [e for e in self.edges if e.target == target]

    def edge(self, source: str, target: str) -> Edge:
        for e in self.edges:
            if e.source == source and e.target == target:
                return e
        raise KeyError((source, target))

    def effect_nodes(self) -> list:
        return [n for n, l in self.nodes.items() if Level(l) is Level.EFFECT]

    def to_dict(self) -> dict:
        return {
            "nodes": [{"symbol": n, "level": Level(l).value} for n, l in self.nodes.items()],
            "edges": [
                {"source": e.source, "target": e.target, "weight": e.weight,
                 "expression": e.expression, "pass": e.pass_index}
                for e in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PhysicalRelationGraph":
        nodes = {n["symbol"]: Level(n["level"]) for n in d["nodes"]}
        edges = [Edge(e["source"], e["target"], float(e["weight"]), e["expression"], int(e["pass"]))
                 for e in d["edges"]]
        return cls(nodes, edges)


def build_prg(passes: Sequence, levels: Mapping | None = None) -> PhysicalRelationGraph:
    """Insert regression passes ``(target, tree, contributions)`` into a graph.

    The first pass (or any pass on an Effect-level target) may start a new
    target; later targets must be leaves of an earlier pass.
    """
    levels = {k: Level(v) for k, v in (levels or {}).items()}
    prg = PhysicalRelationGraph()
    g = nx.DiGraph()
    for i, (target, tree, contrib) in enumerate(passes):
        sources = {e.source for e in prg.edges}
        is_effect = levels.get(target) is Level.EFFECT or (not levels and i == 0)
        if i > 0 and not is_effect and target not in sources:
            raise DanglingTarget(f"pass {i} targets {target!r}, which no earlier expression uses")
        text = ex.to_text(tree)
        prg.nodes.setdefault(target, levels.get(target, Level.EFFECT if i == 0 else Level.SIMULATION))
        g.add_node(target)
        for src in sorted(ex.leaf_symbols(tree)):
            if src == target or (src in g and nx.has_path(g, target, src)):
                raise CycleDetected(f"edge {src} -> {target} closes a cycle")
            if src not in prg.nodes:
                below = prg.nodes[target].below() if isinstance(prg.nodes[target], Level) else None
                prg.nodes[src] = levels.get(src, below or Level.ACTION)
            g.add_edge(src, target)
            prg.edges.append(Edge(src, target, float(contrib.get(src, 0.0)), text, i))
    return prg
