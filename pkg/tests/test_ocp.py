from dataclasses import replace

import numpy as np
import pytest

from toolphys import dynamics as dy
from toolphys import ocp
from toolphys.errors import IKDiverged, MaxIterations, SingularJacobian
from toolphys.fileio import load_chain, load_tool
from toolphys.goalinfer import GoalSpec
from toolphys.vkc import Basis, ToolDescriptor, construct_vkc

Q0 = np.array([0.3, -1.2, -0.8])
STRIKE = GoalSpec(np.array([0.0, 0.0, -1.5]), 0.0, np.array([0.55, 0.0, 0.05]))


def bare_tool():
    """Massless tool whose functional basis sits on the gripper origin."""
    return ToolDescriptor("bare", 0.0, np.zeros(3), np.zeros((3, 3)),
                          [Basis("a", [0, 0, 0], [0, 0, -1], {"affordance"}),
                           Basis("f", [0, 0, 0], [0, 0, 1], {"functional"})])


def hammer_vkc(a="neck", f="head_side"):
    return construct_vkc(load_chain("planar3"), load_tool("hammer"), a, f)


def double_integrator(T_bounds=(1.0, 1.0), qd_goal=0.0, u_bounds=None, N=40):
    chain = dy.KinematicChain((dy.Link("x", "prismatic", [1, 0, 0], mass=1.0),), gravity=(0, 0, 0))
    v = construct_vkc(chain, bare_tool(), "a", "f")
    goal = GoalSpec(np.zeros(3), None, np.array([1.0, 0, 0]))
    return ocp.OCProblem(v, goal, [0.0], [1.0], [qd_goal], w_qd=0.0, w_u=1.0, N=N,
                         T_bounds=T_bounds, u_bounds=u_bounds)


def trapezoid_defects(chain, q, qd, u, T):
    """Reference defects computed node by node with the numpy ABA."""
    N = len(q) - 1
    h = T / N
    a = [dy.aba_forward_dynamics(chain, q[k], qd[k], u[k]) for k in range(N + 1)]
    dq = [q[k + 1] - q[k] - h / 2 * (qd[k] + qd[k + 1]) for k in range(N)]
    dv = [qd[k + 1] - qd[k] - h / 2 * (a[k] + a[k + 1]) for k in range(N)]
    return np.array(dq), np.array(dv)


# -- terminal goal -----------------------------------------------------------------------

def test_ik_fixed_point():
    v = hammer_vkc()
    pos = dy.tip_pose(v.chain, Q0)[1]
    vel = np.array([0.3, 0.0, -1.0])
    goal = GoalSpec(vel, ocp.normal_angle(v, Q0, vel), pos)
    np.testing.assert_array_equal(ocp.solve_goal_ik(v, goal, Q0), Q0)


def test_ik_reachable_goal_meets_residuals():
    v = hammer_vkc()
    q = ocp.solve_goal_ik(v, STRIKE, Q0)
    rot, pos = dy.tip_pose(v.chain, q)
    fz = rot[:, 2]
    cos = fz @ STRIKE.v_tool / (np.linalg.norm(fz) * np.linalg.norm(STRIKE.v_tool))
    assert np.linalg.norm(pos - STRIKE.p_g) < 1e-4
    assert abs(np.arccos(np.clip(cos, -1, 1)) - STRIKE.d_tool) < 1e-3


def test_ik_unreachable_reports_residual():
    v = hammer_vkc()
    goal = GoalSpec(STRIKE.v_tool, 0.0, np.array([3.0, 0.0, 0.0]))
    with pytest.raises(IKDiverged) as e:
        ocp.solve_goal_ik(v, goal, Q0, restarts=2)
    assert e.value.position_residual > 1.5 and e.value.q is not None


def test_goal_joint_velocity_two_link_example():
    v = construct_vkc(dy.planar_arm([1.0, 1.0]), bare_tool(), "a", "f")
    qd = ocp.goal_joint_velocity(v, np.zeros(2), [0.0, 1.0, 0.0])
    np.testing.assert_allclose(qd, [0.4, 0.2], atol=1e-12)
    np.testing.assert_array_equal(ocp.goal_joint_velocity(v, np.zeros(2), np.zeros(3)), 0.0)
    with pytest.raises(SingularJacobian):
        ocp.goal_joint_velocity(v, np.zeros(2), [1.0, 0.0, 0.0])


def test_goal_joint_velocity_realizes_v_tool():
    v = hammer_vkc()
    q = ocp.solve_goal_ik(v, STRIKE, Q0)
    qd = ocp.goal_joint_velocity(v, q, STRIKE.v_tool)
    j = dy.geometric_jacobian(v.chain, q)[:3]
    assert np.max(np.abs(j @ qd - STRIKE.v_tool)) < 1e-9


# -- transcription -------------------------------------------------------------------------

def test_decision_dimension():
    v = hammer_vkc()
    nlp = ocp.transcribe(ocp.OCProblem(v, STRIKE, Q0, Q0, np.zeros(3), N=10))
    assert nlp.n_var == 100 and len(nlp.initial_guess()) == 100
    with pytest.raises(ValueError):
        ocp.OCProblem(v, STRIKE, Q0, Q0, np.zeros(3), N=9)


def test_equilibrium_has_zero_defects():
    v = hammer_vkc()
    nlp = ocp.transcribe(ocp.OCProblem(v, STRIKE, Q0, Q0, np.zeros(3), N=10))
    n = 11
    g = dy.gravity_torques(v.chain, Q0)
    z = nlp.pack(np.tile(Q0, (n, 1)), np.zeros((n, 3)), np.tile(g, (n, 1)), 0.7)
    dq, dv = nlp.defects(z)
    assert np.max(np.abs(dq)) == 0.0 and np.max(np.abs(dv)) < 1e-12


def test_defects_match_reference_residuals():
    rng = np.random.default_rng(0)
    v = hammer_vkc()
    nlp = ocp.transcribe(ocp.OCProblem(v, STRIKE, Q0, Q0, np.zeros(3), N=10))
    for _ in range(3):
        q, qd, u = rng.uniform(-1, 1, (11, 3)), rng.uniform(-2, 2, (11, 3)), rng.uniform(-5, 5, (11, 3))
        T = rng.uniform(0.3, 2.0)
        dq, dv = nlp.defects(nlp.pack(q, qd, u, T))
        rq, rv = trapezoid_defects(v.chain, q, qd, u, T)
        np.testing.assert_allclose(dq, rq, atol=1e-12)
        np.testing.assert_allclose(dv, rv, atol=1e-9)


def test_unactuated_controls_pinned():
    from toolphys.vkc import VirtualJoint

    v = construct_vkc(load_chain("planar3"), load_tool("hammer"), "neck", "head_side", VirtualJoint("hinge"))
    p = ocp.OCProblem(v, STRIKE, np.r_[Q0, 0.0], np.r_[Q0, 0.0], np.zeros(4), N=10)
    lo, hi = ocp.transcribe(p).bounds()
    u_idx = np.arange(11)[:, None] * 12 + 8 + np.arange(4)
    assert np.all(lo[u_idx[:, 3]] == 0) and np.all(hi[u_idx[:, 3]] == 0)
    assert np.all(hi[u_idx[:, :3]] > 0)


def test_ad_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    v = hammer_vkc()
    nlp = ocp.transcribe(ocp.OCProblem(v, STRIKE, Q0, Q0, np.zeros(3), N=10))
    for _ in range(3):
        z = np.concatenate([rng.uniform(-1, 1, nlp.n_var - 1), [rng.uniform(0.3, 2)]])
        g_err, j_err = ocp.gradient_errors(nlp, z)
        assert g_err <= 1e-4 and j_err <= 1e-4
    assert ocp.check_gradients(nlp, z)


# -- solving ---------------------------------------------------------------------------------

def test_double_integrator_minimum_effort():
    sol = ocp.solve(ocp.transcribe(double_integrator()))
    assert sol.valid and sol.n_nodes == 41
    assert abs(sol.costs["C_u"] - 12.0) / 12.0 < 0.02
    np.testing.assert_allclose(sol.u[:, 0], 6 - 12 * sol.times, atol=0.15)


def test_degenerate_goal_stays_put_at_minimum_time():
    # without gravity, staying at rest costs nothing but the horizon
    robot = replace(load_chain("planar3"), gravity=(0.0, 0.0, 0.0))
    v = construct_vkc(robot, load_tool("hammer"), "neck", "head_side")
    p = ocp.OCProblem(v, STRIKE, Q0, Q0, np.zeros(3), N=10)
    sol = ocp.solve(ocp.transcribe(p))
    assert sol.valid
    assert abs(sol.T - p.T_bounds[0]) < 1e-6
    assert np.max(np.abs(sol.q - Q0)) < 1e-6
    assert abs(sol.costs["total"] - p.T_bounds[0]) < 1e-8


def test_infeasible_terminal_velocity_is_invalid():
    nlp = ocp.transcribe(double_integrator(T_bounds=(0.5, 1.0), qd_goal=10.0, u_bounds=([-1.0], [1.0]), N=10))
    with pytest.raises(MaxIterations) as e:
        ocp.solve(nlp, max_outer=15)
    sol = e.value.solution
    f = sol.feasibility
    # the shortfall is spread over defects and the terminal velocity
    assert not sol.valid and f["terminal_qd"] > 0.1
    assert max(f["max_defect"], f["terminal_qd"]) > 0.5


def test_planned_strike_satisfies_validity_invariants():
    v = hammer_vkc()
    sol = ocp.plan(v, STRIKE, Q0)
    p = ocp.make_problem(v, STRIKE, Q0)
    assert sol.valid and sol.n_nodes == p.N + 1
    rq, rv = trapezoid_defects(v.chain, sol.q, sol.qd, sol.u, sol.T)
    assert max(np.max(np.abs(rq)), np.max(np.abs(rv))) <= 1e-5
    for x, (lo, hi) in ((sol.q, p.q_bounds), (sol.qd, p.qd_bounds), (sol.u, p.u_bounds)):
        assert np.all(x >= lo - 1e-8) and np.all(x <= hi + 1e-8)
    assert np.max(np.abs(sol.q[-1] - p.q_goal)) <= 1e-5
    assert np.max(np.abs(sol.qd[-1] - p.qd_goal)) <= 1e-5
    np.testing.assert_array_equal(sol.q[0], Q0)


def test_solve_is_bit_identical():
    a = ocp.solve(ocp.transcribe(double_integrator()), seed=3)
    b = ocp.solve(ocp.transcribe(double_integrator()), seed=3)
    for k in ("q", "qd", "u", "times"):
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()
    assert a.costs == b.costs


# -- costs ---------------------------------------------------------------------------------------

def test_trajectory_cost_identities():
    sol = ocp.solve(ocp.transcribe(double_integrator()))
    c = ocp.trajectory_costs(sol, 0.0, 1.0)
    assert c == (sol.costs["C_qd"], sol.costs["C_u"], sol.costs["T"], sol.costs["total"])
    assert ocp.trajectory_costs(sol, 0.0, 2.0)[1] == 2 * c[1]
    zero = ocp.TrajectorySolution(1.5, np.linspace(0, 1.5, 11), np.zeros((11, 2)), np.zeros((11, 2)),
                                  np.zeros((11, 2)), {}, {}, False)
    assert ocp.trajectory_costs(zero, 1.0, 1.0) == (0.0, 0.0, 1.5, 1.5)
    back = ocp.TrajectorySolution.from_dict(sol.to_dict())
    np.testing.assert_array_equal(back.u, sol.u)
