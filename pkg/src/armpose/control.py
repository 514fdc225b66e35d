"""Kinematic arm simulator, PID pose maker, reach planner and episodes.

The simulator is kinematic: per step each joint advances by its command
times a max speed (default 3 degrees), with multiplicative actuation noise
standing in for the sensorless arm's sloppy motors. A step that drops any
keypoint below the table plane latches the collision flag.

Reaching works in two layers, mirroring the pose-command interface a learned
policy would use: an inverse-kinematics planner emits joint-angle waypoints
(damped least squares on tip-to-target distance with a collision hinge), and
the PID pose maker drives the motors toward the current waypoint using
whatever joint estimate the configured pose source provides (ground truth,
or the full solver run on synthetic heatmaps of the true state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraIntrinsics, PoseVector, look_at_pose, project
from .errors import ArmPoseError, UnreachableError
from .heatmaps import heatmap_argmax
from .kinematics import ArmModel, JointAngles, forward_kinematics, tip_reach_bound
from .solver import SolverOptions, lm_box, solve_pose
from .synth import NoiseSpec, SampleRanges, render_heatmaps
from .util import substream

SPEED_DEG_PER_STEP = 3.0
ACTUATION_NOISE = 0.2          # multiplicative, uniform +-20%
PLAN_MARGIN_CM = 0.5           # keypoints stay this far above the table in plans
WAYPOINT_TOL_DEG = 4.0
DEFAULT_GAINS = (1.0 / SPEED_DEG_PER_STEP, 0.0, 0.0)  # deadbeat P in noiseless sim
INTEGRAL_CLAMP = 10.0          # degree-steps of wind-up

_ACT_TAG = 0xAC70
_CAM_TAG = 0xCA3E
_STEP_TAG = 0x57E9
_IK_TAG = 0x1CAE


@dataclass(frozen=True)
class SimState:
    joints: JointAngles
    step_count: int = 0
    collided: bool = False


@dataclass(frozen=True)
class Action:
    """Per-joint signed speed fractions, clamped to [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.clip(np.asarray(self.values, dtype=float), -1.0, 1.0)
        if v.shape != (4,):
            raise ValueError("action must have 4 components")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class TaskSpec:
    target: tuple[float, float, float]   # cm, world frame
    success_radius: float = 3.0          # cm
    max_steps: int = 50
    measure: str = "horizontal"          # "horizontal" | "3d"

    def __post_init__(self):
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.measure not in ("horizontal", "3d"):
            raise ValueError(f"unknown distance measure {self.measure!r}")

    def distance(self, tip) -> float:
        d = np.asarray(tip, dtype=float) - np.asarray(self.target, dtype=float)
        if self.measure == "horizontal":
            return float(np.hypot(d[0], d[1]))
        return float(np.linalg.norm(d))


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    final_distance: float
    steps_used: int
    trajectory: tuple[SimState, ...]


@dataclass
class PidState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(4))
    prev_error: np.ndarray | None = None


def sim_step(model: ArmModel, state: SimState, action: Action,
             rng: np.random.Generator | None = None,
             speed_deg: float = SPEED_DEG_PER_STEP,
             noise_frac: float = ACTUATION_NOISE) -> SimState:
    """Advances one step; joints clamp to their limits (no error), and the
    collision flag latches once any keypoint dips below the table plane."""
    eps = rng.uniform(-noise_frac, noise_frac, size=4) if rng is not None else np.zeros(4)
    delta = action.values * speed_deg * (1.0 + eps)
    lim = model.limits_deg
    joints = np.clip(state.joints.as_array() + delta, lim[:, 0], lim[:, 1])
    new_joints = JointAngles.from_array(joints)
    pts = forward_kinematics(model, new_joints).coords
    collided = state.collided or bool((pts[:, 2] < 0.0).any())
    return SimState(new_joints, state.step_count + 1, collided)


def pid_pose_maker(current: JointAngles, target: JointAngles,
                   gains: tuple[float, float, float] = DEFAULT_GAINS,
                   state: PidState | None = None) -> tuple[Action, PidState]:
    """Per-joint PID on angular error with clamped integral wind-up.

    The default gains are pure P with kp = 1/max_speed, which settles each
    joint in one step at the end of travel in the noiseless simulator.
    """
    kp, ki, kd = gains
    if not (np.isfinite([kp, ki, kd]).all() and kp > 0):
        raise ValueError("gains must be finite with kp > 0")
    st = state or PidState()
    e = target.as_array() - current.as_array()
    integral = np.clip(st.integral + e, -INTEGRAL_CLAMP, INTEGRAL_CLAMP)
    deriv = np.zeros(4) if st.prev_error is None else e - st.prev_error
    out = kp * e + ki * integral + kd * deriv
    return Action(out), PidState(integral, e)


def target_grid() -> list[TaskSpec]:
    """The 9-target evaluation grid: 15/20/25 cm from the base at azimuths
    -45/0/45 degrees off the arm's front axis, 10 cm above the table."""
    tasks = []
    for dist in (15.0, 20.0, 25.0):
        for ang in (-45.0, 0.0, 45.0):
            a = math.radians(ang)
            tasks.append(TaskSpec(
                target=(dist * math.sin(a), dist * math.cos(a), 10.0)))
    return tasks


def check_waypoints(model: ArmModel, waypoints, margin: float = PLAN_MARGIN_CM
                    ) -> bool:
    """Independent plan validity check: joint limits and collision margin."""
    lim = model.limits_deg
    for wp in waypoints:
        a = wp.as_array()
        if np.any(a < lim[:, 0]) or np.any(a > lim[:, 1]):
            return False
        pts = forward_kinematics(model, wp).coords
        if pts[:, 2].min() < margin:
            return False
    return True


def _ik_solve(model: ArmModel, q0_deg: np.ndarray, target: np.ndarray,
              margin: float) -> tuple[np.ndarray, float]:
    """Damped-least-squares IK over the 4 joints: tip-to-target residuals
    plus a hinge pushing every keypoint above `margin`. Returns
    (joints deg, tip distance cm)."""
    km = model.kernel()
    tip = model.tip_index
    lim = model.limits_rad()
    w_coll = 10.0

    def residual_jac(q):
        pts, dpts = km.fk_jac(q)
        r = np.empty(4)
        J = np.zeros((4, 4))
        r[0:3] = pts[tip] - target
        J[0:3, :] = dpts[tip]
        kmin = int(np.argmin(pts[:, 2]))
        gap = margin - pts[kmin, 2]
        if gap > 0:
            r[3] = w_coll * gap
            J[3, :] = -w_coll * dpts[kmin, 2, :]
        else:
            r[3] = 0.0
        return r, J

    q, loss, _, _ = lm_box(residual_jac, np.radians(q0_deg),
                           lim[:, 0], lim[:, 1], max_iter=400, tol=1e-14)
    pts = km.fk(q)
    dist = float(np.linalg.norm(pts[tip] - target))
    return np.degrees(q), dist


def plan_reach(model: ArmModel, state: SimState, task: TaskSpec,
               seed: int = 0, restarts: int = 8,
               max_waypoints: int = 10) -> list[JointAngles]:
    """Joint-angle waypoints whose final tip lands within half the success
    radius of the target, all collision-free by `PLAN_MARGIN_CM`."""
    target = np.asarray(task.target, dtype=float)
    if np.linalg.norm(target) > tip_reach_bound(model):
        raise UnreachableError(
            f"target {task.target} beyond the reach bound "
            f"{tip_reach_bound(model):.1f} cm")
    if target[2] < PLAN_MARGIN_CM:
        raise UnreachableError("target lies below the collision margin")

    current = state.joints.as_array()
    cur_pts = forward_kinematics(model, state.joints).coords
    if task.distance(cur_pts[model.tip_index]) <= task.success_radius / 2.0:
        return [state.joints]

    # swivel that brings the bend plane through the target
    aim = math.degrees(math.atan2(-target[0], target[1]))
    lim = model.limits_deg
    candidates = [current.copy()]
    for i in range(restarts):
        rng = substream(seed, _IK_TAG, i)
        q0 = rng.uniform(lim[:, 0], lim[:, 1])
        q0[0] = np.clip(aim + rng.normal(0.0, 4.0), lim[0, 0], lim[0, 1])
        candidates.append(q0)

    solutions = []
    for idx, q0 in enumerate(candidates):
        q, dist = _ik_solve(model, q0, target, PLAN_MARGIN_CM)
        goal = JointAngles.from_array(q)
        meas = task.distance(forward_kinematics(model, goal).coords[model.tip_index])
        if meas <= task.success_radius / 2.0 and check_waypoints(model, [goal]):
            solutions.append((meas, idx, goal))
    if not solutions:
        raise UnreachableError(
            f"no collision-free IK solution reaches {task.target}")
    solutions.sort(key=lambda t: (t[0], t[1]))

    for _, _, goal in solutions:
        for n_wp in (3, max_waypoints - 1):
            fracs = np.linspace(1.0 / n_wp, 1.0, n_wp)
            wps = [JointAngles.from_array(current + f * (goal.as_array() - current))
                   for f in fracs]
            if check_waypoints(model, wps):
                return wps
    raise UnreachableError(
        f"every interpolated path to {task.target} violates the margin")


def _solver_estimator(model, intr, ranges, noise, solver_opts, seed):
    """Closed-loop joint estimation: render noisy heatmaps of the true state
    under an episode-fixed camera, then run the pose solver (warm-started)."""
    cam_rng = substream(seed, _CAM_TAG)
    az = cam_rng.uniform(*ranges.cam_az)
    el = cam_rng.uniform(*ranges.cam_el)
    roll = cam_rng.uniform(*ranges.cam_roll)
    dist = cam_rng.uniform(*ranges.cam_distance)
    cam_pose = look_at_pose(az, el, roll, dist, target=model.rest.mean(axis=0))
    state_holder = {"warm": None}

    def estimate(state: SimState, step: int) -> JointAngles:
        true_pose = PoseVector(cam_pose.cam_location, cam_pose.cam_rotation,
                               state.joints)
        z = forward_kinematics(model, state.joints)
        y = project(intr, true_pose, z).points2d
        step_noise = replace(noise, seed=noise.seed)
        h = render_heatmaps(y, step_noise, index=(seed << 8) ^ step,
                            crop_size=max(intr.width, intr.height))
        det = heatmap_argmax(h)
        try:
            res = solve_pose(det, intr, model, solver_opts,
                             warm_start=state_holder["warm"])
            state_holder["warm"] = res.pose
            return res.pose.joints
        except ArmPoseError:
            prev = state_holder["warm"]
            return prev.joints if prev is not None else state.joints

    return estimate


def run_episode(model: ArmModel, task: TaskSpec, pose_source: str = "gt",
                seed: int = 0, *,
                noise: NoiseSpec | None = None,
                intr: CameraIntrinsics | None = None,
                ranges: SampleRanges | None = None,
                solver_opts: SolverOptions | None = None,
                gains: tuple[float, float, float] = DEFAULT_GAINS,
                initial: JointAngles = JointAngles(0.0, 0.0, 0.0, 0.0),
                actuation_noise: float = ACTUATION_NOISE,
                waypoint_tol: float = WAYPOINT_TOL_DEG) -> EpisodeResult:
    """One reaching attempt under the closed loop described in the module
    docstring. Terminates on success, collision, or the step budget."""
    if pose_source not in ("gt", "solver"):
        raise ValueError(f"unknown pose source {pose_source!r}")
    if pose_source == "solver":
        if intr is None:
            raise ValueError("solver pose source requires intrinsics")
        noise = noise or NoiseSpec(seed=seed)
        ranges = ranges or SampleRanges()
        solver_opts = solver_opts or SolverOptions(restarts=6, seed=seed)
        estimate = _solver_estimator(model, intr, ranges, noise, solver_opts, seed)
    else:
        def estimate(state, step):
            return state.joints

    state = SimState(initial)
    est = estimate(state, 0)
    plan = plan_reach(model, SimState(est), task, seed=seed)
    act_rng = substream(seed, _ACT_TAG) if actuation_noise > 0 else None

    trajectory = [state]
    pid = PidState()
    wp_i = 0
    dwell = 0
    prev_wp = est.as_array()
    dist = task.distance(forward_kinematics(model, state.joints)
                         .coords[model.tip_index])
    for step in range(task.max_steps):
        est = estimate(state, step)
        # advance on proximity, or once the travel budget for this leg is
        # spent (noisy estimates may never sit within tol on all joints)
        budget = int(math.ceil(np.abs(plan[wp_i].as_array() - prev_wp).max()
                               / SPEED_DEG_PER_STEP)) + 3
        while wp_i + 1 < len(plan) and (
                np.abs(est.as_array() - plan[wp_i].as_array()).max() <= waypoint_tol
                or dwell >= budget):
            prev_wp = plan[wp_i].as_array()
            wp_i += 1
            dwell = 0
            budget = int(math.ceil(np.abs(plan[wp_i].as_array() - prev_wp).max()
                                   / SPEED_DEG_PER_STEP)) + 3
        dwell += 1
        action, pid = pid_pose_maker(est, plan[wp_i], gains, pid)
        state = sim_step(model, state, action, rng=act_rng,
                         noise_frac=actuation_noise)
        trajectory.append(state)
        dist = task.distance(forward_kinematics(model, state.joints)
                             .coords[model.tip_index])
        if state.collided or dist <= task.success_radius:
            break
    success = (dist <= task.success_radius) and not state.collided
    return EpisodeResult(success=success, final_distance=dist,
                         steps_used=state.step_count,
                         trajectory=tuple(trajectory))


def run_reach_grid(model: ArmModel, pose_source: str = "gt", n_seeds: int = 8,
                   tasks: list[TaskSpec] | None = None, **episode_kwargs) -> dict:
    """Every target in the grid times `n_seeds` episodes; returns the summary
    (success rate, mean distance error, mean steps) plus per-episode rows."""
    tasks = tasks if tasks is not None else target_grid()
    episodes = []
    for t_idx, task in enumerate(tasks):
        for s in range(n_seeds):
            ep = run_episode(model, task, pose_source,
                             seed=(t_idx * 1000 + s), **episode_kwargs)
            episodes.append({
                "target": list(task.target),
                "seed": t_idx * 1000 + s,
                "success": ep.success,
                "final_distance": ep.final_distance,
                "steps_used": ep.steps_used,
            })
    n = len(episodes)
    return {
        "pose_source": pose_source,
        "episodes": episodes,
        "n_episodes": n,
        "success_rate": sum(e["success"] for e in episodes) / n,
        "mean_distance_error": sum(e["final_distance"] for e in episodes) / n,
        "mean_steps": sum(e["steps_used"] for e in episodes) / n,
    }
