"""Command-line surface: simulate, learn, infer, plan, rank, evaluate and the full demo.

Each step reads the experiment config plus earlier outputs from the output
directory and writes its own files and a manifest recording input hashes,
seeds and library versions. ``--config`` also accepts a manifest, which
reruns the recorded command on the recorded config.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import platform
import sys
from importlib import metadata
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import effectsim as es
from . import expr as ex
from . import goalinfer as gi
from . import pipeline as pl
from . import sregress as sr
from .dynamics import geometric_jacobian
from .errors import NoValidStrategy, ToolphysError, ValidationError
from .experiment import ExperimentConfig, load_config
from .fileio import dump_json, load_json, read_table, write_curves, write_table
from .ocp import TrajectorySolution, normal_angle
from .table import Level, VariableTable
from .vkc import construct_vkc

log = logging.getLogger("toolphys")

COMMANDS = ("simulate", "learn", "infer", "plan", "rank", "evaluate", "demo")
FILES = {"table": "demonstrations.csv", "prg": "prg.json", "models": "models.json", "goal": "goal.json",
         "trajectory": "trajectory.json", "ranking": "ranking.json", "ranking_curves": "ranking.csv",
         "evaluation": "evaluation.json", "log_curves": "execution_log.csv"}
VERSIONED = ("numpy", "scipy", "jax", "numba", "networkx", "PyYAML")


class StepFailed(ToolphysError):
    """A step produced an invalid result under ``--strict``."""


# -- steps --------------------------------------------------------------------------------------

def cli_simulate(cfg: ExperimentConfig, seed=None) -> VariableTable:
    seed = cfg.demo_seed if seed is None else seed
    return es.generate_demonstrations(cfg.scenario, cfg.n_trials, seed=seed)


def cli_learn(cfg: ExperimentConfig, table: VariableTable, seed=None) -> dict:
    """IDSR on the Effect column, then on every Simulation property its expression uses."""
    seed = cfg.regression.seed if seed is None else seed
    reg = lambda k: replace(cfg.regression, seed=seed + k)
    effect = [n for n in table.names if table.level(n) is Level.EFFECT][0]
    passes = [(effect, sr.idsr(table, effect, reg(0)))]
    for s in sorted(ex.leaf_symbols(passes[0][1].tree)):
        if table.level(s) is Level.SIMULATION:
            passes.append((s, sr.idsr(table, s, reg(1))))
    prg = sr.build_prg([(t, r.tree, sr.contribution(r.tree, table)) for t, r in passes], table.levels())
    fits = []
    for t, r in passes:
        mse, r2 = sr.fit_scores(r.tree, table, t)
        fits.append({"target": t, "expression": ex.to_text(r.tree), "iterations": r.iterations,
                     "mse": mse, "r2": r2, "domains": [sorted(d) for d in r.domains]})
    return {"prg": prg.to_dict(), "passes": fits}


def fit_edge_models(cfg: ExperimentConfig, prg: sr.PhysicalRelationGraph, table: VariableTable) -> dict:
    out = {}
    for e in prg.edges:
        x = np.column_stack([table[e.target], table[e.source]])
        out[gi.edge_key(e.source, e.target)] = gi.fit_gmm(x, seed=cfg.gmm["seed"], k_max=cfg.gmm["k_max"],
                                                          names=(e.target, e.source))
    return out


def cli_infer(cfg: ExperimentConfig, prg: sr.PhysicalRelationGraph, table: VariableTable, desired=None,
              seed=0, map_mode=False):
    models = fit_edge_models(cfg, prg, table)
    desired = cfg.task.desired_effect if desired is None else desired
    goal = gi.infer_goal(prg, models, desired, cfg.task.p_g, seed, cfg.goal, map_mode=map_mode)
    return goal, models


def cli_plan(cfg: ExperimentConfig, goal: gi.GoalSpec, affordance, functional, seed=None) -> pl.Strategy:
    seed = cfg.rank_seed if seed is None else seed
    return pl.plan_strategy(cfg.robot, cfg.tool, affordance, functional, goal, cfg.task.q_init, seed,
                            cfg.task.ocp)


def comparison_plans(cfg: ExperimentConfig, affordance, functional) -> dict:
    """Mimicked demonstrations and the kinematic baseline on the given pair."""
    w_qd, w_u = cfg.task.weights
    out = {f"mimic:{d.name}": pl.mimic_plan(cfg.robot, cfg.tool, d, cfg.task.q_init, w_qd, w_u)
           for d in cfg.demos}
    out["baseline"] = pl.baseline_plan(cfg.robot, cfg.tool, affordance, functional, cfg.task.p_g,
                                       cfg.task.q_init, w_qd=w_qd, w_u=w_u, **cfg.baseline)
    return out


def cli_rank(cfg: ExperimentConfig, goal: gi.GoalSpec, n_samples=None, seed=None):
    n = cfg.n_samples if n_samples is None else n_samples
    seed = cfg.rank_seed if seed is None else seed
    try:
        ranked = pl.rank_strategies(cfg.robot, cfg.tool, cfg.task, goal, n, seed)
    except NoValidStrategy as e:
        return e.strategies, {}
    best = ranked[0]
    return ranked, comparison_plans(cfg, best.affordance, best.functional)


def cli_evaluate(cfg: ExperimentConfig, strategy: pl.Strategy, seeds=None, with_baseline=True) -> dict:
    seeds = cfg.eval_seeds if seeds is None else seeds
    report = {"task": cfg.task.name, "seeds": [int(s) for s in seeds]}
    rate, rows = pl.success_rate(strategy, cfg.task, seeds)
    report["strategy"] = {**_describe(strategy, cfg), "success_rate": rate, "trials": rows}
    if with_baseline:
        base = comparison_plans(cfg, strategy.affordance, strategy.functional)["baseline"]
        entry = _describe(base, cfg)
        if base.valid:
            entry["success_rate"], entry["trials"] = pl.success_rate(base, cfg.task, seeds)
        report["baseline"] = entry
    return report


def _describe(s: pl.Strategy, cfg: ExperimentConfig) -> dict:
    d = s.to_dict()
    if s.valid and s.solution is not None:
        q, qd = s.solution.q[-1], s.solution.qd[-1]
        v = geometric_jacobian(s.vkc.chain, q, check=False)[:3] @ qd
        d["impact_speed"] = float(np.linalg.norm(v))
        d["impact_d_tool"] = normal_angle(s.vkc, q, v) if d["impact_speed"] > 0 else 0.0
    return d


# -- file plumbing ------------------------------------------------------------------------------

def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("toolphys",) + VERSIONED:
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def strategy_file(s: pl.Strategy, cfg: ExperimentConfig) -> dict:
    return {"robot": cfg.robot.name, "tool": cfg.tool.name, **s.to_dict(with_trajectory=True)}


def strategy_from_file(d: dict, cfg: ExperimentConfig, path="trajectory") -> pl.Strategy:
    if d.get("tool") != cfg.tool.name or d.get("robot") != cfg.robot.name:
        raise ValidationError(f"trajectory was planned for {d.get('robot')}+{d.get('tool')}, config uses "
                              f"{cfg.robot.name}+{cfg.tool.name}", str(path), 1, "tool")
    if "trajectory" not in d:
        raise ValidationError("file holds no trajectory", str(path), 1, "trajectory")
    vkc = construct_vkc(cfg.robot, cfg.tool, d["affordance"], d["functional"])
    sol = TrajectorySolution.from_dict(d["trajectory"])
    return pl.Strategy(d["affordance"], d["functional"], sol, dict(sol.costs), bool(d["valid"]),
                       d.get("diagnostics", {}), d.get("kind", "optimal"), vkc)


def ranking_report(ranked, comparisons, goal) -> dict:
    rep = {"goal": goal.to_dict(), "strategies": [s.to_dict() for s in ranked],
           "best": list(ranked[0].labels) if ranked and ranked[0].valid else None}
    rep["comparisons"] = {k: s.to_dict() for k, s in comparisons.items()}
    return rep


def ranking_curves(ranked, comparisons) -> dict:
    rows = list(ranked) + list(comparisons.values())
    return {"rank": list(range(len(rows))),
            "C_qd": [s.costs.get("C_qd", np.nan) for s in rows],
            "C_u": [s.costs.get("C_u", np.nan) for s in rows],
            "T": [s.costs.get("T", np.nan) for s in rows],
            "total": [s.costs.get("total", np.nan) for s in rows],
            "valid": [float(s.valid) for s in rows]}


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command, cfg: ExperimentConfig, config_path, out, args: dict):
        self.command, self.cfg, self.args = command, cfg, args
        self.config_path = str(config_path)
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = dict(cfg.inputs)
        self.outputs = []
        self.invalid = []

    def path(self, key) -> Path:
        return self.out / FILES[key]

    def read(self, key, explicit=None):
        p = Path(explicit) if explicit else self.path(key)
        if not p.exists():
            raise ValidationError(f"missing input; run the step that writes {FILES[key]} first", str(p), 0, key)
        self.inputs[f"{key}:{p.name}"] = _sha(p)
        return read_table(p) if p.suffix == ".csv" else load_json(p)

    def write(self, key, obj):
        p = self.path(key)
        if isinstance(obj, VariableTable):
            write_table(obj, p)
        elif key.endswith("curves"):
            write_curves(obj, p)
        else:
            dump_json(obj, p)
        self.outputs.append(p)

    def manifest(self) -> Path:
        m = {"command": self.command, "config": self.config_path, "args": self.args,
             "inputs": dict(sorted(self.inputs.items())), "seeds": self.cfg.seeds, "versions": _versions(),
             "outputs": {p.name: _sha(p) for p in self.outputs}, "invalid": self.invalid}
        p = self.out / f"manifest-{self.command}.json"
        dump_json(m, p)
        return p


def _goal_from(d) -> gi.GoalSpec:
    return gi.GoalSpec.from_dict(d)


def do_simulate(run: Run, a):
    run.write("table", cli_simulate(run.cfg, a.seed))


def do_learn(run: Run, a):
    table = run.read("table", a.table)
    run.write("prg", cli_learn(run.cfg, table, a.seed))


def do_infer(run: Run, a):
    table = run.read("table", a.table)
    prg = sr.PhysicalRelationGraph.from_dict(run.read("prg", a.prg)["prg"])
    goal, models = cli_infer(run.cfg, prg, table, a.effect, a.seed or 0, a.map)
    run.write("models", {k: m.to_dict() for k, m in models.items()})
    run.write("goal", goal.to_dict())


def do_plan(run: Run, a):
    goal = _goal_from(run.read("goal", a.goal))
    s = cli_plan(run.cfg, goal, a.affordance, a.functional, a.seed)
    if not s.valid:
        run.invalid.append(f"plan {s.affordance}/{s.functional}: {s.diagnostics.get('message', '')}")
    run.write("trajectory", strategy_file(s, run.cfg))


def do_rank(run: Run, a):
    goal = _goal_from(run.read("goal", a.goal))
    ranked, comp = cli_rank(run.cfg, goal, a.n_samples, a.seed)
    if not ranked[0].valid:
        run.invalid.append("no valid strategy")
    for k, s in comp.items():
        if not s.valid:
            run.invalid.append(f"{k}: {s.diagnostics.get('message', '')}")
    run.write("ranking", ranking_report(ranked, comp, goal))
    run.write("ranking_curves", ranking_curves(ranked, comp))
    run.write("trajectory", strategy_file(ranked[0], run.cfg))


def do_evaluate(run: Run, a):
    d = run.read("trajectory", a.trajectory)
    if not d.get("valid"):
        run.invalid.append("trajectory is invalid; nothing to execute")
        d.pop("trajectory", None)
        run.write("evaluation", {"task": run.cfg.task.name, "strategy": {**d, "success_rate": None}})
        return
    s = strategy_from_file(d, run.cfg, a.trajectory or "trajectory")
    seeds = run.cfg.eval_seeds if a.seed is None else tuple(range(a.seed, a.seed + len(run.cfg.eval_seeds)))
    report = cli_evaluate(run.cfg, s, seeds)
    run.write("evaluation", report)
    log_, _, _ = pl.evaluate_execution(s, run.cfg.task, seeds[0])
    run.write("log_curves", log_.arrays())


STEPS = {"simulate": do_simulate, "learn": do_learn, "infer": do_infer, "plan": do_plan, "rank": do_rank,
         "evaluate": do_evaluate}
DEMO_ORDER = ("simulate", "learn", "infer", "rank", "evaluate")


# -- argument handling ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="toolphys", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="experiment YAML, shipped scenario name, or manifest JSON")
        s.add_argument("--seed", type=int, default=None, help="replace the step's configured seed")
        s.add_argument("--out", default=None, help="output directory (default: the config's out)")
        s.add_argument("--strict", action="store_true", help="exit nonzero on any invalid result")
        if name in ("learn", "infer", "demo"):
            s.add_argument("--table", default=None)
        if name in ("infer", "demo"):
            s.add_argument("--prg", default=None)
            s.add_argument("--effect", type=float, default=None, help="desired fragment count")
            s.add_argument("--map", action="store_true", help="MAP values instead of sampling")
        if name in ("plan", "rank", "demo"):
            s.add_argument("--goal", default=None)
        if name == "plan":
            s.add_argument("--affordance", required=True)
            s.add_argument("--functional", required=True)
        if name in ("rank", "demo"):
            s.add_argument("--n-samples", type=int, default=None)
        if name in ("evaluate", "demo"):
            s.add_argument("--trajectory", default=None)
    return p


RECORDED = ("seed", "strict", "table", "prg", "effect", "map", "goal", "affordance", "functional", "n_samples",
            "trajectory")


def _from_manifest(args, parser):
    m = load_json(args.config)
    if m.get("command") != args.command:
        parser.error(f"manifest records command {m.get('command')!r}, not {args.command!r}")
    rec = m.get("args", {})
    for k in RECORDED:
        if k in rec and hasattr(args, k):
            setattr(args, k, rec[k])
    cfg_path = m["config"]
    cfg = load_config(cfg_path)
    want = m.get("inputs", {}).get("config")
    if want and cfg.inputs.get("config") != want:
        raise ValidationError("config changed since the manifest was written", cfg_path, 0, "config")
    return cfg_path, cfg


def run_command(args, parser=None) -> int:
    parser = parser or build_parser()
    if str(args.config).endswith(".json"):
        config_path, cfg = _from_manifest(args, parser)
    else:
        config_path, cfg = args.config, load_config(args.config)
    out = args.out or cfg.out
    recorded = {k: getattr(args, k) for k in RECORDED if hasattr(args, k)}
    steps = DEMO_ORDER if args.command == "demo" else (args.command,)
    invalid = []
    for step in steps:
        run = Run(step if args.command != "demo" else f"demo-{step}", cfg, config_path, out, recorded)
        STEPS[step](run, _step_args(args, step))
        invalid += run.invalid
        run.manifest()
        log.info("%s: wrote %s", step, ", ".join(p.name for p in run.outputs))
    if args.command == "demo":
        run = Run("demo", cfg, config_path, out, recorded)
        for key in ("table", "prg", "goal", "ranking", "trajectory", "evaluation"):
            run.outputs.append(run.path(key))
        run.invalid = invalid
        run.manifest()
        _summary(Path(out))
    for msg in invalid:
        print(f"invalid: {msg}", file=sys.stderr)
    if invalid and args.strict:
        return 1
    return 0


def _step_args(args, step):
    """Inside ``demo`` every step reads what the previous one wrote."""
    a = argparse.Namespace(**vars(args))
    for k in ("table", "prg", "goal", "trajectory", "effect", "map", "n_samples"):
        if not hasattr(a, k):
            setattr(a, k, None)
    return a


def _summary(out: Path):
    rank = load_json(out / FILES["ranking"])
    ev = load_json(out / FILES["evaluation"])
    best = rank["best"]
    print(f"best strategy: {best[0]}/{best[1]}" if best else "best strategy: none")
    s = ev.get("strategy", {})
    if s.get("success_rate") is not None:
        print(f"success rate: {s['success_rate']:.2f} over {len(ev['seeds'])} seeds")
    b = ev.get("baseline", {})
    if b.get("success_rate") is not None:
        print(f"baseline success rate: {b['success_rate']:.2f}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        return run_command(args, parser)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ToolphysError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
