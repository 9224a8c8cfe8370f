"""Strategy ranking, demonstration mimicry, the kinematic baseline and execution checks.

A strategy is a basis pair plus a joint trajectory. Optimal strategies
come from the goal-constrained trajectory solver; mimicked and baseline
ones from per-waypoint IK along a Cartesian path. Every strategy is
executed the same way: the functional-basis motion over the final
approach is handed to the effect simulator, which plays it into the body
and lets the tool coast through contact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import effectsim as es
from .dynamics import KinematicChain, inverse_dynamics, tip_pose
from .errors import IKDiverged, MaxIterations, NoValidStrategy, SingularJacobian
from .goalinfer import GoalSpec
from .ocp import (TrajectorySolution, make_problem, solve, solve_goal_ik, trajectory_costs, transcribe)
from .vkc import VKC, ToolDescriptor, construct_vkc, functional_normal, valid_pairs

log = logging.getLogger(__name__)

TRACK_TOL = (1e-9, 1e-6)
BAND = 0.15
BAND_SHARE = 0.9
OCP_KEYS = ("w_qd", "w_u", "N", "T_bounds")


# -- types ----------------------------------------------------------------------------------

@dataclass
class Strategy:
    affordance: str
    functional: str
    solution: TrajectorySolution | None
    costs: dict
    valid: bool
    diagnostics: dict = field(default_factory=dict)
    kind: str = "optimal"
    vkc: VKC | None = field(default=None, repr=False, compare=False)

    @property
    def labels(self) -> tuple:
        return (self.affordance, self.functional)

    @property
    def total(self) -> float:
        return float(self.costs.get("total", np.inf))

    def to_dict(self, with_trajectory=False) -> dict:
        d = {"affordance": self.affordance, "functional": self.functional, "kind": self.kind,
             "valid": self.valid, "costs": dict(self.costs), "diagnostics": dict(self.diagnostics)}
        if with_trajectory and self.solution is not None:
            d["trajectory"] = self.solution.to_dict()
        return d


@dataclass(frozen=True)
class TaskDefinition:
    """What to achieve on which body.

    ``desired_effect`` is the target fragment count the goal is inferred
    for; success is judged by ``scenario.thresholds`` (crack) or the
    clean-halves rule (cut). ``requires`` lists the Action properties the
    goal constrains.
    """

    name: str
    scenario: es.Scenario
    desired_effect: float = 4.0
    requires: tuple = ("v_tool",)
    p_g: np.ndarray = None
    q_init: np.ndarray = None
    ocp: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in ("crack", "cut"):
            raise ValueError(f"unknown task {self.name!r}; expected crack or cut")
        if self.name == "cut" and "d_tool" not in self.requires:
            raise ValueError("a cut task must constrain the tool orientation (d_tool)")
        if self.p_g is None:
            c = self.scenario.contact_point
            object.__setattr__(self, "p_g", np.array([c[0], 0.0, c[1]]))
        object.__setattr__(self, "p_g", np.asarray(self.p_g, dtype=float).reshape(3))
        if self.q_init is not None:
            object.__setattr__(self, "q_init", np.asarray(self.q_init, dtype=float))
        unknown = set(self.ocp) - set(OCP_KEYS)
        if unknown:
            raise ValueError(f"unknown OCP options {sorted(unknown)}")

    @property
    def weights(self):
        return self.ocp.get("w_qd", 0.1), self.ocp.get("w_u", 1.0)


@dataclass(frozen=True)
class Demonstration:
    """Observed basis pair and functional-basis path (positions m, unit normals)."""

    name: str
    affordance: str
    functional: str
    times: np.ndarray
    positions: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        fix = lambda k, v: object.__setattr__(self, k, v)
        fix("times", np.asarray(self.times, dtype=float).reshape(-1))
        fix("positions", np.asarray(self.positions, dtype=float).reshape(-1, 3))
        n = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        fix("normals", n / np.linalg.norm(n, axis=1, keepdims=True))
        if not len(self.times) == len(self.positions) == len(self.normals) >= 3:
            raise ValueError("demonstration needs >= 3 waypoints with matching arrays")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("demonstration times must increase")


def swing_demo(name, affordance, functional, center, radius, start, end, duration, n=41):
    """Circular swing in the x-z plane accelerating from rest; the normal leads along the path.

    Angles are measured from +x toward +z; the swing ends at angle ``end``.
    """
    tau = np.linspace(0.0, 1.0, n)
    s = tau**2
    ang = start + (end - start) * s
    c = np.asarray(center, dtype=float)
    pos = c + radius * np.column_stack([np.cos(ang), np.zeros(n), np.sin(ang)])
    sign = np.sign(end - start)
    tangent = sign * np.column_stack([-np.sin(ang), np.zeros(n), np.cos(ang)])
    return Demonstration(name, affordance, functional, duration * tau, pos, tangent)


def _vkc_q(vkc: VKC, q_robot):
    q = np.zeros(vkc.dof)
    if q_robot is not None:
        q[:vkc.robot_dof] = np.asarray(q_robot, dtype=float)[:vkc.robot_dof]
    return np.clip(q, vkc.chain.lower, vkc.chain.upper)


# -- ranking --------------------------------------------------------------------------------

def _diagnose(exc) -> dict:
    d = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, IKDiverged):
        d["position_residual"] = float(exc.position_residual)
        d["angle_residual"] = float(exc.angle_residual)
    if isinstance(exc, MaxIterations) and exc.solution is not None:
        d.update(exc.solution.feasibility)
    return d


def plan_strategy(robot: KinematicChain, tool: ToolDescriptor, affordance, functional, goal: GoalSpec,
                  q_init=None, seed=0, ocp=None) -> Strategy:
    """One basis pair through IK, terminal velocity, transcription and solve."""
    vkc = construct_vkc(robot, tool, affordance, functional)
    opts = dict(ocp or {})
    try:
        problem = make_problem(vkc, goal, _vkc_q(vkc, q_init), seed=seed, **opts)
        sol = solve(transcribe(problem), seed=seed)
    except (IKDiverged, SingularJacobian, MaxIterations) as e:
        sol = e.solution if isinstance(e, MaxIterations) else None
        costs = dict(sol.costs) if sol is not None else {}
        return Strategy(affordance, functional, sol, costs, False, _diagnose(e), vkc=vkc)
    return Strategy(affordance, functional, sol, dict(sol.costs), True, dict(sol.feasibility), vkc=vkc)


def sort_strategies(strategies) -> list:
    """Valid ones by total cost then labels; invalid ones after, by labels."""
    return sorted(strategies, key=lambda s: (not s.valid, s.total if s.valid else 0.0, s.labels))


def rank_strategies(robot: KinematicChain, tool: ToolDescriptor, task: TaskDefinition | None,
                    goal: GoalSpec, n_samples=10, seed=0, q_init=None, ocp=None) -> list:
    """Plan every valid basis pair (or a seeded sample of ``n_samples``) and order them."""
    pairs = valid_pairs(tool)
    if len(pairs) > n_samples:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(pairs), size=n_samples, replace=False))
        pairs = [pairs[i] for i in pick]
    q_init = task.q_init if q_init is None and task is not None else q_init
    ocp = task.ocp if ocp is None and task is not None else ocp
    out = []
    for a, f in pairs:
        s = plan_strategy(robot, tool, a, f, goal, q_init, seed, ocp)
        log.info("strategy %s/%s: valid=%s total=%s", a, f, s.valid, s.costs.get("total"))
        out.append(s)
    ranked = sort_strategies(out)
    if not ranked[0].valid:
        lines = "; ".join(f"{s.affordance}/{s.functional}: {s.diagnostics.get('message', '')}"
                          for s in ranked)
        raise NoValidStrategy(f"no valid strategy among {len(ranked)} pairs: {lines}", ranked)
    return ranked


# -- kinematic plans ------------------------------------------------------------------------

def track_path(vkc: VKC, positions, normals, q_init):
    """Per-waypoint damped-least-squares IK, warm-started along the path.

    Returns ``(q, failure)``; ``failure`` is ``None`` or a diagnostic dict
    for the first waypoint that could not be reached.
    """
    q = _vkc_q(vkc, q_init) if len(np.atleast_1d(q_init)) != vkc.dof else np.asarray(q_init, float)
    out = []
    for k, (p, n) in enumerate(zip(positions, normals)):
        goal = GoalSpec(n, 0.0, p)
        try:
            q = solve_goal_ik(vkc, goal, q, tol=TRACK_TOL, max_iter=200, restarts=0)
        except IKDiverged as e:
            at = [int(i) for i in np.where((e.q <= vkc.chain.lower + 1e-9) | (e.q >= vkc.chain.upper - 1e-9))[0]]
            return np.array(out), {"error": "IKDiverged", "waypoint": k, "position_residual": e.position_residual,
                                   "angle_residual": e.angle_residual, "joints_at_limit": at,
                                   "message": f"waypoint {k} unreachable" +
                                              (f"; joints {at} at their limits" if at else "")}
        out.append(q)
    return np.array(out), None


def kinematic_strategy(vkc: VKC, times, q, w_qd, w_u, kind, diagnostics=None) -> Strategy:
    """Joint path to strategy: finite-difference rates and inverse-dynamics torques."""
    chain = vkc.chain
    qd = np.gradient(q, times, axis=0, edge_order=2)
    qdd = np.gradient(qd, times, axis=0, edge_order=2)
    u = np.array([inverse_dynamics(chain, a, b, c) for a, b, c in zip(q, qd, qdd)])
    u[:, ~chain.actuated] = 0.0
    T = float(times[-1] - times[0])
    sol = TrajectorySolution(T, times - times[0], q, qd, u, {}, {}, False, message=kind)
    c_qd, c_u, _, total = trajectory_costs(sol, w_qd, w_u)
    sol.costs = {"C_qd": c_qd, "C_u": c_u, "T": T, "total": total}
    over = {"velocity": float(np.max(np.abs(qd) - chain.velocity_limit, initial=-np.inf)),
            "effort": float(np.max(np.abs(u) - chain.effort_limit, initial=-np.inf))}
    diag = dict(diagnostics or {})
    diag.update({f"{k}_margin": -v for k, v in over.items()})
    bad = [k for k, v in over.items() if v > 1e-9]
    if bad:
        diag["message"] = "exceeds " + " and ".join(f"{k} limits" for k in bad)
    sol.valid = not bad
    sol.feasibility = {k: v for k, v in diag.items() if isinstance(v, float)}
    return Strategy(vkc.affordance, vkc.functional, sol, dict(sol.costs), sol.valid, diag, kind, vkc)


def _invalid(vkc, kind, diagnostics):
    return Strategy(vkc.affordance, vkc.functional, None, {}, False, diagnostics, kind, vkc)


def mimic_plan(robot: KinematicChain, tool: ToolDescriptor, demo: Demonstration, q_init=None,
               w_qd=0.1, w_u=1.0) -> Strategy:
    """Track the demonstrated functional-basis path with IK on the demo's basis pair."""
    vkc = construct_vkc(robot, tool, demo.affordance, demo.functional)
    q, fail = track_path(vkc, demo.positions, demo.normals, q_init)
    if fail is not None:
        return _invalid(vkc, "mimic", fail)
    return kinematic_strategy(vkc, demo.times, q, w_qd, w_u, "mimic", {"demo": demo.name})


def baseline_plan(robot: KinematicChain, tool: ToolDescriptor, affordance, functional, p_g, q_init=None,
                  speed=0.1, descent=0.05, step=0.01, w_qd=0.1, w_u=1.0) -> Strategy:
    """Straight descent onto ``p_g`` at constant ``speed`` with the functional normal along gravity."""
    vkc = construct_vkc(robot, tool, affordance, functional)
    g = np.asarray(robot.gravity, dtype=float)
    down = g / np.linalg.norm(g) if np.linalg.norm(g) > 0 else np.array([0.0, 0.0, -1.0])
    T = descent / speed
    n = max(int(round(T / step)), 2)
    times = np.linspace(0.0, T, n + 1)
    p_g = np.asarray(p_g, dtype=float)
    positions = p_g[None] - down[None] * (speed * (T - times))[:, None]
    q, fail = track_path(vkc, positions, np.tile(down, (n + 1, 1)), q_init)
    if fail is not None:
        return _invalid(vkc, "baseline", fail)
    pts = np.array([tip_pose(vkc.chain, x)[1] for x in q[-2:]])
    approach = float(np.linalg.norm(pts[1] - pts[0]) / (times[-1] - times[-2]))
    align = float(np.arccos(np.clip(functional_normal(vkc, q[-1]) @ down, -1.0, 1.0)))
    diag = {"approach_speed": approach, "normal_gravity_angle": align,
            "position_residual": float(np.linalg.norm(tip_pose(vkc.chain, q[-1])[1] - p_g))}
    return kinematic_strategy(vkc, times, q, w_qd, w_u, "baseline", diag)


# -- execution ------------------------------------------------------------------------------

def approach_profile(strategy: Strategy, scenario: es.Scenario, p_g) -> es.ToolProfile:
    """Functional-basis motion over the final ``scenario.lead`` seconds, in body coordinates.

    World x-z maps to the simulator plane with ``p_g`` placed on the body's
    contact point; the trajectory end is time 0.
    """
    sol, vkc = strategy.solution, strategy.vkc
    spline = CubicHermiteSpline(sol.times, sol.q, sol.qd, axis=0)
    n = max(int(round(scenario.lead / scenario.path_step)), 1)
    t = sol.T - scenario.path_step * np.arange(n, -1, -1)
    t = t[t >= 0.0]
    if len(t) < 2:
        t = np.array([max(sol.T - scenario.path_step, 0.0), sol.T])
    qs = spline(t)
    qs[-1] = sol.q[-1]
    pos = np.array([tip_pose(vkc.chain, x, check=False)[1] for x in qs])
    nrm = np.array([functional_normal(vkc, x, check=False) for x in qs])
    p_g = np.asarray(p_g, dtype=float)
    c = scenario.contact_point
    xy = np.column_stack([pos[:, 0] - p_g[0] + c[0], pos[:, 2] - p_g[2] + c[1]])
    angles = np.unwrap(np.arctan2(nrm[:, 2], nrm[:, 0]))
    basis = vkc.functional_basis
    return es.ToolProfile.rectangle(basis.width, basis.depth, t - sol.T, xy, angles, scenario.tool_mass)


def cut_quality(final: es.DeformableBody2D, rest: es.DeformableBody2D, radius) -> float:
    """Share of broken springs whose rest midpoint lies in the mid-body band."""
    mid = es.broken_midpoints(final, rest)
    if not len(mid):
        return 0.0
    return float(np.mean(np.abs(mid[:, 0] - rest.center[0]) <= BAND * 2 * radius))


def judge(task: TaskDefinition, log_: es.PropertyLog, final, rest):
    pieces = log_.final_fragments
    label = es.classify_effect(pieces, task.scenario.thresholds)
    if task.name == "crack":
        return label, label == "cracked"
    ok = pieces == 2 and cut_quality(final, rest, task.scenario.body.radius) >= BAND_SHARE
    return label, bool(ok)


def evaluate_execution(strategy: Strategy, task: TaskDefinition, seed):
    """Play the strategy into a body jittered by ``seed``; returns ``(log, label, success)``."""
    if not strategy.valid or strategy.solution is None:
        raise ValueError("only valid strategies can be executed")
    sc = task.scenario
    tool = approach_profile(strategy, sc, task.p_g)
    spec = sc.jittered_body(np.random.default_rng([seed, 1]))
    log_, final, rest = es.run_strike(sc, tool, spec, seed)
    label, ok = judge(task, log_, final, rest)
    return log_, label, ok


def success_rate(strategy: Strategy, task: TaskDefinition, seeds) -> tuple:
    """(rate, per-seed records) over ``seeds``, in seed order."""
    rows = []
    for s in seeds:
        log_, label, ok = evaluate_execution(strategy, task, int(s))
        rows.append({"seed": int(s), "fragments": log_.final_fragments, "label": label, "success": ok,
                     "peak_force": log_.peak("contact_force")})
    return float(np.mean([r["success"] for r in rows])), rows


def with_orientation(goal: GoalSpec, keep: bool) -> GoalSpec:
    """The goal itself, or its velocity-only variant with a free orientation."""
    return goal if keep else replace(goal, d_tool=None, inferred=dict(goal.inferred))
