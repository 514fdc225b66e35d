import numpy as np
import pytest

from armpose import JointAngles, UnreachableError, forward_kinematics, tip_position
from armpose.camera import CameraIntrinsics
from armpose.control import (Action, EpisodeResult, PidState, SimState,
                             TaskSpec, check_waypoints, pid_pose_maker,
                             plan_reach, run_episode, sim_step, target_grid)
from armpose.synth import NoiseSpec
from armpose.util import substream

ZERO = JointAngles(0.0, 0.0, 0.0, 0.0)
REST = SimState(ZERO)


# -- simulator -------------------------------------------------------------------


def test_zero_action_keeps_joints(model):
    s = sim_step(model, REST, Action(np.zeros(4)))
    assert s.joints == ZERO
    assert s.step_count == 1
    assert not s.collided


def test_full_speed_step_exact_without_noise(model):
    s = sim_step(model, REST, Action(np.array([0.0, 0.0, 1.0, 0.0])))
    assert s.joints.elbow == pytest.approx(3.0)
    assert s.joints.rotation == 0.0


def test_action_clamped():
    a = Action(np.array([5.0, -7.0, 0.5, 0.0]))
    assert a.values[0] == 1.0 and a.values[1] == -1.0 and a.values[2] == 0.5


def test_limit_clamp_no_error(model):
    s = SimState(JointAngles(0.0, 0.0, 0.0, 59.0))
    s = sim_step(model, s, Action(np.array([0.0, 0.0, 0.0, 1.0])))
    assert s.joints.wrist == 60.0  # pinned at the limit
    s = sim_step(model, s, Action(np.array([0.0, 0.0, 0.0, 1.0])))
    assert s.joints.wrist == 60.0


def test_collision_latches(model):
    # shoulder horizontal, elbow folding the forearm below the table plane
    s = SimState(JointAngles(0.0, 90.0, 87.0, 0.0))
    pts = forward_kinematics(model, s.joints).coords
    assert pts[:, 2].min() >= 0
    s2 = sim_step(model, s, Action(np.array([0.0, 0.0, 1.0, 0.0])))
    assert s2.collided
    s3 = sim_step(model, s2, Action(np.array([0.0, 0.0, -1.0, 0.0])))
    assert s3.collided  # stays latched even after moving back


def test_noise_scales_step(model, rng):
    s = sim_step(model, REST, Action(np.ones(4)), rng=substream(5))
    delta = s.joints.as_array()
    assert np.all(delta > 3.0 * 0.8 - 1e-9) and np.all(delta < 3.0 * 1.2 + 1e-9)


def test_limits_never_violated_under_random_actions(model):
    rng = substream(17)
    lim = model.limits_deg
    s = REST
    for _ in range(100_000):
        a = Action(rng.uniform(-1, 1, 4))
        s = sim_step(model, s, a, rng=rng)
        j = s.joints.as_array()
        assert np.all(j >= lim[:, 0]) and np.all(j <= lim[:, 1])


# -- PID pose maker ----------------------------------------------------------------


def test_pid_zero_error_zero_action():
    a, st = pid_pose_maker(ZERO, ZERO)
    assert np.allclose(a.values, 0.0)


def test_pid_pure_p_definition():
    target = JointAngles(10.0, -4.0, 0.5, 0.0)
    a, _ = pid_pose_maker(ZERO, target, gains=(0.21, 0.0, 0.0))
    expect = np.clip(0.21 * target.as_array(), -1, 1)
    assert np.allclose(a.values, expect)


def test_pid_integral_clamped():
    st = PidState()
    target = JointAngles(100.0, 0.0, 0.0, 0.0)
    for _ in range(50):
        _, st = pid_pose_maker(ZERO, target, gains=(0.1, 0.01, 0.0), state=st)
    assert st.integral[0] == 10.0


def test_pid_rejects_bad_gains():
    with pytest.raises(ValueError):
        pid_pose_maker(ZERO, ZERO, gains=(0.0, 0.0, 0.0))


def test_pid_reaches_random_poses_within_50_steps(model):
    rng = substream(29)
    lim = model.limits_deg
    for trial in range(3):
        target = JointAngles.from_array(rng.uniform(lim[:, 0], lim[:, 1]))
        s = REST
        st = PidState()
        for _ in range(50):
            a, st = pid_pose_maker(s.joints, target, state=st)
            s = sim_step(model, s, a)  # noiseless
            if np.abs(s.joints.as_array() - target.as_array()).max() <= 2.0:
                break
        assert np.abs(s.joints.as_array() - target.as_array()).max() <= 2.0


# -- planner ---------------------------------------------------------------------


def test_plan_identity_when_already_there(model):
    tip = tip_position(model, ZERO)
    plan = plan_reach(model, REST, TaskSpec(target=tip, measure="3d"))
    assert plan == [ZERO]


def test_plan_grid_targets_and_soundness(model):
    for task in target_grid():
        plan = plan_reach(model, REST, task)
        assert 1 <= len(plan) <= 10
        assert check_waypoints(model, plan)
        tip = tip_position(model, plan[-1])
        assert task.distance(tip) <= task.success_radius / 2.0


def test_plan_unreachable_beyond_grid_oracle(model, grid_reach):
    target = (0.0, 60.0, 10.0)
    assert np.hypot(60.0, 0.0) > grid_reach  # oracle confirms it is out of reach
    with pytest.raises(UnreachableError):
        plan_reach(model, REST, TaskSpec(target=target))


def test_plan_below_table_unreachable(model):
    with pytest.raises(UnreachableError):
        plan_reach(model, REST, TaskSpec(target=(10.0, 10.0, -5.0)))


# -- episodes ---------------------------------------------------------------------


def test_gt_episode_succeeds_noiseless(model):
    task = target_grid()[4]  # 20 cm straight ahead
    ep = run_episode(model, task, "gt", seed=0, actuation_noise=0.0)
    assert ep.success
    assert ep.final_distance <= task.success_radius
    assert ep.steps_used <= task.max_steps
    assert ep.trajectory[0].joints == ZERO


def test_single_step_budget_fails(model):
    task = TaskSpec(target=(0.0, 25.0, 10.0), max_steps=1)
    ep = run_episode(model, task, "gt", seed=0, actuation_noise=0.0)
    assert not ep.success
    assert ep.final_distance > task.success_radius
    assert ep.steps_used == 1


def test_episode_result_invariant(model):
    for task in target_grid()[:3]:
        ep = run_episode(model, task, "gt", seed=1)
        assert ep.success == (ep.final_distance <= task.success_radius
                              and not ep.trajectory[-1].collided)


def test_noise_free_episode_determinism(model):
    task = target_grid()[2]
    a = run_episode(model, task, "gt", seed=3, actuation_noise=0.0)
    b = run_episode(model, task, "gt", seed=3, actuation_noise=0.0)
    assert len(a.trajectory) == len(b.trajectory)
    for sa, sb in zip(a.trajectory, b.trajectory):
        assert sa.joints == sb.joints
    assert a.final_distance == b.final_distance


def test_seeded_noise_episode_determinism(model):
    task = target_grid()[6]
    a = run_episode(model, task, "gt", seed=9)
    b = run_episode(model, task, "gt", seed=9)
    assert a.final_distance == b.final_distance
    assert all(sa.joints == sb.joints for sa, sb in zip(a.trajectory, b.trajectory))


def test_solver_in_loop_episode(model, intr):
    task = target_grid()[1]
    noise = NoiseSpec(pixel_sigma=2.0, outlier_prob=0.0, dropout_prob=0.0)
    ep = run_episode(model, task, "solver", seed=1001, intr=intr, noise=noise)
    assert ep.success
    assert ep.trajectory[-1].step_count == ep.steps_used


def test_task_validation():
    with pytest.raises(ValueError):
        TaskSpec(target=(0, 10, 10), success_radius=0.0)
    with pytest.raises(ValueError):
        TaskSpec(target=(0, 10, 10), max_steps=0)
    with pytest.raises(ValueError):
        TaskSpec(target=(0, 10, 10), measure="diagonal")
