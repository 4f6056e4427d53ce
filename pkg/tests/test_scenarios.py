from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kktddp.contact_dynamics import kkt_solve
from kktddp.costs import orientation_goal_term
from kktddp.ddp import rollout, solve, trajectory_cost
from kktddp.model import State, builtin_model, com, point_position
from kktddp.scenarios import (
    ContactPhase,
    ReachabilityError,
    ScenarioError,
    ScenarioProblem,
    build_astronaut,
    build_stride,
    diagnostics,
    gait_plan,
    ik_baseline,
    static_forces,
    total_cost,
)
from kktddp.scenarios.stride import DEFAULT_TIMING, leg_ik

WEIGHT = 65.0 * 9.81


@pytest.fixture(scope="module")
def stride():
    return build_stride(0.4, 3)


@pytest.fixture(scope="module")
def standing():
    return build_stride(0.0)


def test_stride_phases_alternate_and_sum_to_the_horizon(stride):
    kinds = [p.kind for p in stride.phases]
    assert kinds == ["double_support", "single_support"] * 3 + ["double_support"]
    assert sum(p.duration for p in stride.phases) == stride.horizon
    stance = [p.contacts for p in stride.phases if p.kind == "single_support"]
    assert stance == [("left_foot",), ("right_foot",), ("left_foot",)]
    assert stride.validate() == []


def test_stride_references_are_consistent_with_the_model(stride):
    tree, n = stride.tree, stride.tree.nv
    refs = stride.references
    for i in range(0, stride.horizon + 1, 7):
        q = refs["posture"][i, :n]
        np.testing.assert_allclose(com(tree, q), refs["com"][i], atol=1e-9)
        for foot in ("left_foot", "right_foot"):
            np.testing.assert_allclose(point_position(tree, q, tree.contacts[foot]),
                                       refs[foot][i], atol=1e-9)
    # CoM at constant height, final feet together
    assert np.ptp(refs["com"][:, 1]) < 1e-9
    assert refs["left_foot"][-1, 0] == pytest.approx(refs["right_foot"][-1, 0])


def test_stance_feet_do_not_move_in_the_references(stride):
    for j, (a, b) in enumerate(stride.phase_bounds()):
        for foot in stride.phases[j].contacts:
            ref = stride.references[foot][a:b + 1]
            assert np.ptp(ref, axis=0).max() == 0.0
            assert np.all(ref[:, 1] == 0.0)


@given(st.floats(0.1, 1.0), st.integers(1, 4))
def test_gait_plan_feet_progress_by_the_stride(length, steps):
    phases, com_x, feet, vel, swings = gait_plan(length, steps, DEFAULT_TIMING, 0.01)
    N = sum(p.duration for p in phases)
    assert len(com_x) == N + 1 and len(swings) == steps
    swing_height = max(f[:, 1].max() for f in feet.values())
    assert swing_height == pytest.approx(0.06, rel=1e-3)
    expected = 0.5 * length if steps == 1 else 0.5 * length * (steps - 1)
    assert max(f[-1, 0] for f in feet.values()) == pytest.approx(expected)
    if steps > 1:
        # the final step closes the feet together
        assert feet["left_foot"][-1, 0] == pytest.approx(feet["right_foot"][-1, 0])
    else:
        assert feet["left_foot"][-1, 0] == 0.0


@given(st.floats(-0.35, 0.35), st.floats(0.45, 0.75))
def test_leg_ik_places_the_foot(dx, depth):
    tree = builtin_model("walker")
    hip = np.array([0.0, depth])
    foot = np.array([dx, 0.0])
    if np.hypot(dx, depth) > 0.98 * 0.8:
        with pytest.raises(ReachabilityError):
            leg_ik(hip, foot)
        return
    q = np.zeros(tree.nv)
    q[:2] = hip
    q[3:5] = leg_ik(hip, foot)
    np.testing.assert_allclose(point_position(tree, q, tree.contacts["left_foot"]), foot,
                               atol=1e-12)
    assert q[4] <= 0  # knee bends backward


def test_static_forces_balance_the_weight(stride):
    tree = stride.tree
    n = tree.nv
    for i in range(0, stride.horizon, 5):
        contacts = stride.contacts(i)
        q = stride.references["posture"][i, :n]
        tau, lam = static_forces(tree, q, contacts, stride.gravity)
        np.testing.assert_allclose(lam, stride.references["force"][i], atol=1e-9)
        assert lam[1::2].sum() == pytest.approx(WEIGHT, abs=1e-6)
        # the reference postures hold statically: the KKT solve leaves no acceleration
        sol = kkt_solve(tree, State(q, np.zeros(n)), tau, contacts, 0.0, stride.gravity)
        assert sol.kkt_residual <= 1e-8
        assert np.abs(sol.vdot).max() < 1e-6


def test_build_errors():
    with pytest.raises(ReachabilityError):
        build_stride(2.0)
    with pytest.raises(ReachabilityError):
        build_stride(0.05)
    with pytest.raises(ScenarioError):
        build_stride(0.4, n_steps=0)
    with pytest.raises(ValueError):
        build_astronaut(7.0)
    with pytest.raises(ScenarioError):
        ContactPhase(("left_foot",), 0, "double_support")
    with pytest.raises(ScenarioError):
        ContactPhase(("left_foot",), 3, "flight")
    with pytest.raises(ScenarioError):
        ContactPhase((), 3, "hover")


def test_long_strides_lower_the_hip():
    assert build_stride(0.9, 1).metadata["hip_height"] < build_stride(0.4, 1).metadata[
        "hip_height"]


def test_astronaut_has_no_gravity_and_no_contacts():
    sc = build_astronaut()
    assert not sc.gravity.any()
    assert all(p.kind == "flight" and not p.contacts for p in sc.phases)
    assert sc.horizon == 500 and sc.initial_guess == "zeros"


def test_astronaut_zero_target_keeps_zero_torques():
    sc = build_astronaut(0.0)
    tr = solve(ScenarioProblem(sc), None, sc.settings)
    assert tr.converged
    assert np.abs(tr.U).max() < 1e-9
    assert all(lam.size == 0 for lam in tr.Lam)


def test_standing_ddp_and_ik_both_hold_gravity_compensation(standing):
    ik = ik_baseline(standing)
    tr = solve(ScenarioProblem(standing), ik.U, standing.settings)
    assert tr.converged
    tau_ref = standing.references["torque"]
    for U, Lam in ((tr.U, tr.Lam), (ik.U, ik.Lam)):
        assert np.abs(U - tau_ref).max() < 0.1
        np.testing.assert_allclose(np.array(Lam), np.array(standing.references["force"]),
                                   atol=0.1)
    assert tr.cost <= total_cost(standing, ik.X, ik.U, ik.Lam)
    report = diagnostics(standing, tr.X, tr.U, tr.Lam)
    assert report.max_stance_drift < 1e-4


def test_problem_adapter_is_consistent(standing):
    p = ScenarioProblem(standing)
    rng = np.random.default_rng(0)
    U = standing.references["torque"] + rng.normal(size=(standing.horizon, 4))
    r = rollout(p, U)
    assert trajectory_cost(p, r.X, r.U, r.Lam) == pytest.approx(
        total_cost(standing, r.X, r.U, r.Lam), rel=1e-12)
    assert sum(p.cost_breakdown(r.X, r.U, r.Lam).values()) == pytest.approx(r.cost, rel=1e-12)
    batch = p.derivatives_all(r.X, r.U)
    for i in (0, 17, standing.horizon - 1):
        single = p.derivatives(i, r.X[i], r.U[i])
        np.testing.assert_allclose(batch[i].f_x, single.f_x, atol=1e-9)
        np.testing.assert_allclose(batch[i].g_u, single.g_u, atol=1e-7)


def test_diagnostics_of_a_static_stand(standing, tmp_path):
    n = standing.tree.nv
    N = standing.horizon
    X = np.tile(standing.x0, (N + 1, 1))
    U = standing.references["torque"]
    Lam = standing.references["force"]
    report = diagnostics(standing, X, U, Lam)
    np.testing.assert_allclose(report.total_normal_force, WEIGHT, atol=1e-6)
    assert report.max_stance_drift == 0.0
    assert report.angular_momentum_deviation == 0.0
    report.write_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert len(lines) == N + 2
    assert lines[0].startswith("step,time,phase,kind,normal_force_left_foot")
    assert "knee_torque_shank_l" in lines[0] and "knee_torque_shank_r" in lines[0]
    assert X.shape[1] == 2 * n


def test_stride_dt_changes_the_horizon():
    a = build_stride(0.4, 1, dt=0.01)
    b = build_stride(0.4, 1, dt=0.02)
    assert a.horizon == pytest.approx(2 * b.horizon, abs=2)


def test_greedy_time_invariant_law_turns_the_base_only_by_leaving_the_joints_bent():
    # fed the goal as a running task, an instantaneous law does reach the angle, but it
    # ends displaced in joint space: the net rotation is bought with the posture, not
    # with a closed joint loop
    sc = build_astronaut()
    greedy = orientation_goal_term(sc.tree, 0, np.pi / 2, 10.0, name="orientation_running")
    ik = ik_baseline(replace(sc, running=sc.running + [greedy]))
    n = sc.tree.nv
    assert abs(ik.X[-1, 2] - np.pi / 2) < 0.05
    assert np.abs(ik.X[-1, 3:n]).max() > 0.5


def test_astronaut_with_final_posture_closes_the_joint_loop():
    # the opt-in final posture term asks for the full rest state at the new attitude,
    # which only a joint-space loop (a geometric phase) can give
    sc = build_astronaut(weights={"final_posture": 100.0})
    tr = solve(ScenarioProblem(sc), None, sc.settings)
    n = sc.tree.nv
    assert tr.iterations <= 100
    assert abs(tr.X[-1, 2] - np.pi / 2) < 0.05
    assert np.abs(tr.X[-1, 3:n]).max() < 0.05
    assert np.all(np.diff(tr.costs) <= 0)
