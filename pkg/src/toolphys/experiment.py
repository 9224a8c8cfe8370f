"""Experiment configuration files: robot, tool, task, body, trial plan and seeds.

Input paths inside a config resolve against the config's own directory and
bare names pick shipped data files; the output directory is relative to
the working directory. Every seed is explicit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import effectsim as es
from .dynamics import KinematicChain
from .errors import ValidationError
from .fileio import DATA_DIR, Doc, Reader, chain_from_doc, tool_from_doc
from .goalinfer import GoalConfig
from .pipeline import OCP_KEYS, Demonstration, TaskDefinition, swing_demo
from .sregress import RegressionConfig
from .vkc import ToolDescriptor

SECTIONS = ("name", "robot", "tool", "q_init", "task", "body", "strike", "demonstrations", "regression",
            "gmm", "goal", "ocp", "ranking", "evaluation", "baseline", "demos", "out")
GOAL_FIELDS = ("v_x", "v_y", "v_z", "speed", "d_tool")


def _only(r: Reader, allowed):
    for k in r.value:
        if k not in allowed:
            raise r.error(k, f"unknown field; expected one of {sorted(allowed)}")


def _pair(r: Reader, name, default, lo=None):
    if not r.has(name):
        return tuple(default)
    v = r.vector(name, 2)
    if v[0] > v[1]:
        raise r.error(name, "range must be ordered [low, high]")
    if lo is not None and v[0] < lo:
        raise r.error(name, f"range must start at >= {lo}")
    return (float(v[0]), float(v[1]))


def resolve(base: Path, ref: str, kind: str) -> Path:
    p = Path(ref)
    if not p.suffix and not p.is_absolute() and len(p.parts) == 1:
        shipped = DATA_DIR / kind / f"{ref}.yaml"
        if shipped.exists():
            return shipped
    return p if p.is_absolute() else base / p


@dataclass(frozen=True)
class ExperimentConfig:
    path: str
    name: str
    robot: KinematicChain
    tool: ToolDescriptor
    task: TaskDefinition
    n_trials: int
    demo_seed: int
    regression: RegressionConfig
    gmm: dict
    goal: GoalConfig
    n_samples: int
    rank_seed: int
    eval_seeds: tuple
    baseline: dict
    demos: tuple
    out: str
    inputs: dict = field(default_factory=dict)

    @property
    def scenario(self) -> es.Scenario:
        return self.task.scenario

    @property
    def seeds(self) -> dict:
        return {"demonstrations": self.demo_seed, "regression": self.regression.seed,
                "gmm": self.gmm["seed"], "ranking": self.rank_seed,
                "evaluation": [int(self.eval_seeds[0]), len(self.eval_seeds)]}


def _body(r: Reader | None) -> es.BodySpec:
    if r is None:
        return es.BodySpec()
    _only(r, es.BodySpec.__dataclass_fields__)
    positive = ("radius", "spacing", "E_y", "eps_f", "thickness", "density")
    kw = {k: r.float(k, lo=None if k in ("center_x", "ground") else 0.0, strict_lo=k in positive)
          for k in r.value}
    try:
        return es.BodySpec(**kw)
    except ValueError as e:
        raise r.error(None, str(e)) from None


def _scenario(name, body, r: Reader | None, tool: ToolDescriptor) -> es.Scenario:
    kw = {}
    if r is not None:
        _only(r, ("basis", "width", "depth", "tool_mass", "speed", "approach", "d_tool", "accel", "lead",
                  "duration", "dt", "path_step", "jitter", "thresholds"))
        if r.has("basis"):
            label = r.str("basis")
            if label not in tool.labels:
                raise r.error("basis", f"tool has no basis {label!r}")
            b = tool.basis(label)
            kw.update(width=b.width, depth=b.depth)
        for k in ("width", "depth", "tool_mass", "lead", "duration", "dt", "path_step"):
            if r.has(k):
                kw[k] = r.float(k, lo=0.0, strict_lo=True)
        if r.has("jitter"):
            kw["jitter"] = r.float("jitter", lo=0.0, hi=0.99)
        for k, lo in (("speed", 0.0), ("approach", None), ("d_tool", 0.0), ("accel", None)):
            if r.has(k):
                kw[k] = _pair(r, k, (0, 0), lo)
        if r.has("thresholds"):
            lo, hi = _pair(r, "thresholds", (2, 6), 2)
            kw["thresholds"] = (int(lo), int(hi))
        if "dt" in kw and kw["dt"] > 1e-3:
            raise r.error("dt", "must be <= 1e-3 s")
    return es.Scenario(name=name, body=body, **kw)


def demo_from_doc(doc: Doc) -> Demonstration:
    r = Reader(doc)
    _only(r, ("name", "affordance", "functional", "swing", "times", "positions", "normals"))
    name, a, f = r.str("name"), r.str("affordance"), r.str("functional")
    if r.has("swing"):
        s = r.sub("swing")
        _only(s, ("center", "radius", "start", "end", "duration", "samples"))
        return swing_demo(name, a, f, s.vector("center", 3), s.float("radius", lo=0.0, strict_lo=True),
                          s.float("start"), s.float("end"), s.float("duration", lo=0.0, strict_lo=True),
                          s.int("samples", 41, lo=3))
    times = r.vector("times", len(r.value.get("times", [])))
    pos = [p for _, p in r.items("positions")]
    nrm = [n for _, n in r.items("normals")]
    try:
        return Demonstration(name, a, f, times, pos, nrm)
    except ValueError as e:
        raise r.error("times", str(e)) from None


def load_demo(path) -> Demonstration:
    return demo_from_doc(Doc.load(resolve(Path("."), str(path), "demos")))


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_from_doc(doc: Doc) -> ExperimentConfig:
    base = Path(doc.path).parent
    r = Reader(doc)
    _only(r, SECTIONS)
    inputs = {}

    def load(key, kind, parse):
        ref = r.str(key)
        p = resolve(base, ref, kind)
        if not p.exists():
            raise r.error(key, f"file not found: {p}")
        inputs[f"{key}:{ref}"] = _digest(p)
        return parse(Doc.load(p))

    robot = load("robot", "chains", chain_from_doc)
    tool = load("tool", "tools", tool_from_doc)
    t = r.sub("task")
    _only(t, ("name", "desired_effect", "requires"))
    tname = t.str("name", choices=("crack", "cut"))
    requires = tuple(x for _, x in t.items("requires", required=False)) or ("v_tool",)
    body = _body(r.sub("body", required=False))
    scenario = _scenario(tname, body, r.sub("strike", required=False), tool)
    ocp = {}
    o = r.sub("ocp", required=False)
    if o is not None:
        _only(o, OCP_KEYS)
        for k in ("w_qd", "w_u"):
            if o.has(k):
                ocp[k] = o.float(k, lo=0.0)
        if o.has("N"):
            ocp["N"] = o.int("N", lo=10)
        if o.has("T_bounds"):
            ocp["T_bounds"] = _pair(o, "T_bounds", (0.2, 5.0), 0.0)
    q_init = r.vector("q_init", robot.dof) if r.has("q_init") else None
    try:
        task = TaskDefinition(tname, scenario, t.float("desired_effect", 4.0, lo=1.0), requires,
                              q_init=q_init, ocp=ocp)
    except ValueError as e:
        raise t.error(None, str(e)) from None

    d = r.sub("demonstrations", required=False)
    if d is not None:
        _only(d, ("n_trials", "seed"))
    n_trials = d.int("n_trials", 100, lo=1) if d else 100
    demo_seed = d.int("seed", 0, lo=0) if d else 0

    g = r.sub("regression", required=False)
    reg_kw = {}
    if g is not None:
        _only(g, RegressionConfig.__dataclass_fields__)
        for k in g.value:
            reg_kw[k] = g.int(k, lo=0) if isinstance(g.value[k], int) else g.float(k)
    reg_kw.setdefault("seed", 0)
    try:
        regression = RegressionConfig(**reg_kw)
    except (ValueError, TypeError) as e:
        raise g.error(None, str(e)) from None

    m = r.sub("gmm", required=False)
    if m is not None:
        _only(m, ("k_max", "seed"))
    gmm = {"k_max": m.int("k_max", 5, lo=1) if m else 5, "seed": m.int("seed", 0, lo=0) if m else 0}

    gs = r.sub("goal", required=False)
    goal_kw = {}
    if gs is not None:
        _only(gs, ("action_map", "direction", "d_tool", "max_speed"))
        amap = gs.value.get("action_map", {})
        if not isinstance(amap, dict) or not set(amap.values()) <= set(GOAL_FIELDS):
            raise gs.error("action_map", f"must map symbols to one of {list(GOAL_FIELDS)}")
        goal_kw["action_map"] = dict(amap)
        if gs.has("direction"):
            goal_kw["direction"] = tuple(gs.vector("direction", 3))
            goal_kw["v_tool"] = goal_kw["direction"]
        if gs.has("d_tool") and gs.value["d_tool"] is not None:
            goal_kw["d_tool"] = gs.float("d_tool", lo=0.0, hi=np.pi)
        if gs.has("max_speed"):
            goal_kw["max_speed"] = gs.float("max_speed", lo=0.0, strict_lo=True)
    goal = GoalConfig(**goal_kw)
    if "d_tool" in requires and "d_tool" not in goal.action_map.values():
        raise (gs or t).error("action_map" if gs else "requires",
                              "task requires d_tool but no symbol maps to it")

    k = r.sub("ranking", required=False)
    if k is not None:
        _only(k, ("n_samples", "seed"))
    n_samples = k.int("n_samples", 10, lo=1) if k else 10
    rank_seed = k.int("seed", 0, lo=0) if k else 0

    e = r.sub("evaluation", required=False)
    if e is not None:
        _only(e, ("seeds", "first_seed"))
    n_eval = e.int("seeds", 50, lo=1) if e else 50
    first = e.int("first_seed", 0, lo=0) if e else 0

    b = r.sub("baseline", required=False)
    if b is not None:
        _only(b, ("speed", "descent", "step"))
    baseline = {"speed": b.float("speed", 0.1, lo=0.0, strict_lo=True) if b else 0.1,
                "descent": b.float("descent", 0.05, lo=0.0, strict_lo=True) if b else 0.05,
                "step": b.float("step", 0.01, lo=0.0, strict_lo=True) if b else 0.01}

    demos = []
    for key, ref in r.items("demos", required=False):
        if not isinstance(ref, str):
            raise doc.error(key, "expected a demo file name")
        p = resolve(base, ref, "demos")
        if not p.exists():
            raise doc.error(key, f"file not found: {p}")
        inputs[f"demo:{ref}"] = _digest(p)
        demo = demo_from_doc(Doc.load(p))
        for lab in (demo.affordance, demo.functional):
            if lab not in tool.labels:
                raise doc.error(key, f"demo basis {lab!r} is not on tool {tool.name!r}")
        demos.append(demo)

    return ExperimentConfig(
        doc.path, r.str("name", tname), robot, tool, task, n_trials, demo_seed, regression, gmm, goal,
        n_samples, rank_seed, tuple(range(first, first + n_eval)), baseline, tuple(demos),
        r.str("out", "out"), inputs)


def load_config(path) -> ExperimentConfig:
    p = resolve(Path("."), str(path), "scenarios")
    if not p.exists():
        raise ValidationError("file not found", str(p), 0, "")
    doc = Doc.load(p)
    cfg = config_from_doc(doc)
    cfg.inputs["config"] = _digest(p)
    return cfg
