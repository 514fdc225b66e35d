"""10-DOF pose recovery from 2D keypoints.

Minimizes the squared pixel reprojection error of the kinematically
consistent keypoints over camera extrinsics and joint angles, with
multi-start damped Gauss-Newton (Levenberg-Marquardt) and box projection
onto the joint/elevation limits after every step. Keypoints below the
confidence gate contribute nothing to the loss; their refined locations
come purely from the fitted geometry.

The homogeneous scale factors of the projection equation are eliminated
analytically by perspective division, so the optimized loss is the plain
sum of squared pixel distances; for exact data both forms share minimizers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .camera import (CameraIntrinsics, Keypoints2D, PoseVector, project,
                     rotation_azelroll, weak_project)
from .errors import (BehindCameraError, InsufficientKeypointsError,
                     NoConvergenceError)
from .kinematics import ArmModel, JointAngles, Keypoints3D, forward_kinematics
from .synth import SampleRanges
from .util import substream, wrap_deg

_RESTART_TAG = 0x2357

# elevation box: strictly inside the open (-90, 90) interval
_EL_BOUND_RAD = math.radians(90.0) - 1e-6


@dataclass(frozen=True)
class SolverOptions:
    confidence_threshold: float = 0.3   # the gate xi
    max_iterations: int = 20000         # generous: ill-conditioned fits creep
    restarts: int = 16
    convergence_tol: float = 1e-8       # accepted-loss drop, px^2
    min_inliers: int = 6
    mode: str = "full"                  # "full" | "weak"
    seed: int = 0
    init_ranges: SampleRanges = field(default_factory=SampleRanges)
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in [0, 1]")
        if self.min_inliers < 6:
            raise ValueError("min_inliers must be at least 6")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")
        if self.mode not in ("full", "weak"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class SolveResult:
    pose: PoseVector
    z: Keypoints3D
    y_refined: Keypoints2D        # reprojection of the fit, all 17 points
    residual: float               # final loss, px^2 over the inlier mask
    inlier_mask: np.ndarray       # (17,) bool
    iterations_used: int
    restarts_used: int
    scale: float | None = None    # pixels/cm, weak mode only
    warnings: tuple[str, ...] = ()


def filter_keypoints(y: Keypoints2D, xi: float) -> np.ndarray:
    """Confidence gate: True where c_k >= xi (ties pass)."""
    return np.asarray(y.confidence >= xi)


def reprojection_loss(p: PoseVector, y: Keypoints2D, mask, intr: CameraIntrinsics,
                      model: ArmModel) -> float:
    """Sum of squared pixel distances between observed and model-projected
    keypoints over the masked set."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no keypoints")
    z = forward_kinematics(model, p.joints)
    uv = project(intr, p, z).points2d.points
    d = uv[mask] - y.points[mask]
    return float(np.sum(d * d))


def _model_diag(model: ArmModel) -> float:
    ext = model.rest.max(axis=0) - model.rest.min(axis=0)
    return float(np.linalg.norm(ext))


def _points_diag(pts: np.ndarray) -> float:
    ext = pts.max(axis=0) - pts.min(axis=0)
    return float(np.linalg.norm(ext))


def _bounds_full(model: ArmModel) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(10, -np.inf)
    hi = np.full(10, np.inf)
    lo[4], hi[4] = -_EL_BOUND_RAD, _EL_BOUND_RAD
    lim = model.limits_rad()
    lo[6:10], hi[6:10] = lim[:, 0], lim[:, 1]
    return lo, hi


def _bounds_weak(model: ArmModel) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(10, -np.inf)
    hi = np.full(10, np.inf)
    lo[0] = 1e-6                      # scale stays positive
    lo[2], hi[2] = -_EL_BOUND_RAD, _EL_BOUND_RAD
    lim = model.limits_rad()
    lo[6:10], hi[6:10] = lim[:, 0], lim[:, 1]
    return lo, hi


def _gated(y: Keypoints2D, opts: SolverOptions) -> np.ndarray:
    mask = filter_keypoints(y, opts.confidence_threshold)
    n = int(mask.sum())
    if n < opts.min_inliers:
        raise InsufficientKeypointsError(
            f"only {n} keypoints pass the {opts.confidence_threshold} gate "
            f"(need {opts.min_inliers})")
    return mask


def _full_inits(y, mask_idx, intr, model, opts, warm_start):
    """Initial parameter vectors: informed look-at samples plus an optional
    warm start from a previous solution."""
    ranges = opts.init_ranges
    target = model.rest.mean(axis=0)
    diag_px = _points_diag(y.points[mask_idx])
    d0 = intr.fx * _model_diag(model) / max(diag_px, 1.0)
    d0 = min(max(d0, 15.0), 400.0)
    lim = model.limits_deg
    inits = []
    if warm_start is not None:
        inits.append(warm_start.as_params())
    for i in range(opts.restarts):
        rng = substream(opts.seed, _RESTART_TAG, i)
        az = rng.uniform(*ranges.cam_az)
        el = rng.uniform(*ranges.cam_el)
        roll = rng.uniform(*ranges.cam_roll)
        dist = d0 * rng.uniform(0.7, 1.4)
        joints = rng.uniform(lim[:, 0], lim[:, 1])
        fwd = np.array([-math.sin(math.radians(az)) * math.cos(math.radians(el)),
                        math.cos(math.radians(az)) * math.cos(math.radians(el)),
                        -math.sin(math.radians(el))])
        loc = target - dist * fwd
        inits.append(np.concatenate([
            loc, np.radians([az, el, roll]), np.radians(joints)]))
    return inits


def _weak_inits(y, mask_idx, model, opts, scale_prior, warm_params):
    ranges = opts.init_ranges
    diag_px = _points_diag(y.points[mask_idx])
    s0 = scale_prior if scale_prior is not None else diag_px / max(_model_diag(model), 1.0)
    s0 = max(s0, 1e-3)
    lim = model.limits_deg
    km = model.kernel()
    centroid_px = y.points[mask_idx].mean(axis=0)
    inits = []
    if warm_params is not None:
        inits.append(np.asarray(warm_params, dtype=float))
    for i in range(opts.restarts):
        rng = substream(opts.seed, _RESTART_TAG, i)
        az = rng.uniform(*ranges.cam_az)
        el = rng.uniform(*ranges.cam_el)
        roll = rng.uniform(*ranges.cam_roll)
        s = s0 if i == 0 else s0 * rng.uniform(0.7, 1.4)
        joints = np.radians(rng.uniform(lim[:, 0], lim[:, 1]))
        R = rotation_azelroll(math.radians(az), math.radians(el), math.radians(roll))
        pts = km.fk(joints)
        proj = (pts[mask_idx] @ R.T)[:, :2].mean(axis=0)
        t = centroid_px - s * proj
        inits.append(np.concatenate([
            [s], np.radians([az, el, roll]), t, joints]))
    return inits


_PHASE1_ITERS = 400


def _run_restarts(km, mode, inits, y_pts, mask_idx, intr4, lo, hi, opts):
    """Runs every initialization at a short budget first and escalates all of
    them to the full budget only if none converged. Each restart's budget is
    a deterministic function of the whole set, so worker count never changes
    the result."""

    def run_all(budget):
        def run(args):
            idx, p0 = args
            return idx, km.lm_solve(mode, p0, y_pts, mask_idx, intr4, lo, hi,
                                    budget, opts.convergence_tol)

        jobs = list(enumerate(inits))
        if opts.workers > 1:
            with ThreadPoolExecutor(max_workers=opts.workers) as ex:
                out = list(ex.map(run, jobs))
        else:
            out = [run(j) for j in jobs]
        out.sort(key=lambda t: t[0])  # deterministic reduction order
        return [r for _, r in out]

    budget = min(_PHASE1_ITERS, opts.max_iterations)
    results = run_all(budget)
    n_conv = sum(1 for r in results if r[3] and r[4])
    if budget < opts.max_iterations and n_conv < min(3, len(inits)):
        results = run_all(opts.max_iterations)
    return results


def _select_best(results):
    """Lowest final loss among converged runs; ties go to the earlier restart."""
    valid = [(i, r) for i, r in enumerate(results) if r[4]]
    if not valid:
        raise BehindCameraError("no initialization yielded a valid projection")
    converged = [(i, r) for i, r in valid if r[3]]
    if not converged:
        raise NoConvergenceError(
            "all restarts exhausted max_iterations without meeting the tolerance")
    best_i, best = min(converged, key=lambda t: (t[1][1], t[0]))
    return best


def _solve_full_raw(y, intr, model, opts, warm_start):
    mask = _gated(y, opts)
    mask_idx = np.where(mask)[0].astype(np.int32)
    lo, hi = _bounds_full(model)
    inits = _full_inits(y, mask_idx, intr, model, opts, warm_start)
    if not inits:
        raise ValueError("no initializations: restarts=0 needs a warm start")
    intr4 = (intr.fx, intr.fy, intr.cx, intr.cy)
    km = model.kernel()
    results = _run_restarts(km, kernels.MODE_FULL, inits, y.points, mask_idx,
                            intr4, lo, hi, opts)
    return mask, inits, results


def _full_result(model, intr, mask, n_inits, params, loss, iters) -> SolveResult:
    pose = _pose_from_full_params(params)
    z = forward_kinematics(model, pose.joints)
    proj = project(intr, pose, z)
    return SolveResult(
        pose=pose, z=z, y_refined=proj.points2d, residual=loss,
        inlier_mask=mask, iterations_used=int(iters), restarts_used=n_inits)


def solve_pose(y: Keypoints2D, intr: CameraIntrinsics, model: ArmModel,
               opts: SolverOptions | None = None,
               warm_start: PoseVector | None = None) -> SolveResult:
    """Full-perspective pose recovery.

    Multi-start LM over (camera location, az/el/roll, 4 joint angles); the
    returned residual is the winning restart's final loss and never exceeds
    any tried initialization's loss.
    """
    opts = opts or SolverOptions()
    mask, inits, results = _solve_full_raw(y, intr, model, opts, warm_start)
    params, loss, iters, _, _, _ = _select_best(results)
    return _full_result(model, intr, mask, len(inits), params, loss, iters)


def solve_pose_candidates(y: Keypoints2D, intr: CameraIntrinsics,
                          model: ArmModel, opts: SolverOptions | None = None,
                          warm_start: PoseVector | None = None,
                          top_k: int = 4) -> list[SolveResult]:
    """The distinct local minima found by the multi-start, best first.

    Distinctness: parameter vectors separated by more than ~1 degree / 1 cm.
    Used by the refinement pipeline to consensus-select among basins when
    outliers make the lowest least-squares loss untrustworthy. Outliers can
    also produce valleys too ill-conditioned to converge within the budget;
    unlike solve_pose, this falls back to the unconverged endpoints then
    (they still locate basins for the post-demotion refit to finish in).
    """
    opts = opts or SolverOptions()
    mask, inits, results = _solve_full_raw(y, intr, model, opts, warm_start)
    converged = [(i, r) for i, r in enumerate(results) if r[4] and r[3]]
    if not converged:
        converged = [(i, r) for i, r in enumerate(results) if r[4]]
    if not converged:
        raise BehindCameraError("no initialization yielded a valid projection")
    converged.sort(key=lambda t: (t[1][1], t[0]))
    out = []
    kept_params = []
    for _, (params, loss, iters, _, _, _) in converged:
        scaled = np.concatenate([params[0:3], np.degrees(params[3:10])])
        if any(np.abs(scaled - k).max() < 1.0 for k in kept_params):
            continue
        kept_params.append(scaled)
        out.append(_full_result(model, intr, mask, len(inits), params, loss, iters))
        if len(out) >= top_k:
            break
    return out


def solve_pose_weak(y: Keypoints2D, scale_prior: float | None, model: ArmModel,
                    opts: SolverOptions | None = None,
                    warm_params: np.ndarray | None = None) -> SolveResult:
    """Weak-perspective pose recovery for unknown intrinsics.

    Optimizes (scale, az/el/roll, image-plane offset, 4 joints). The camera's
    distance along the optical axis is unobservable under weak perspective;
    the reported location fixes that coordinate to zero.
    """
    opts = opts or SolverOptions()
    mask = _gated(y, opts)
    mask_idx = np.where(mask)[0].astype(np.int32)
    lo, hi = _bounds_weak(model)
    inits = _weak_inits(y, mask_idx, model, opts, scale_prior, warm_params)
    km = model.kernel()
    results = _run_restarts(km, kernels.MODE_WEAK, inits, y.points, mask_idx,
                            None, lo, hi, opts)
    params, loss, iters, _, _, _ = _select_best(results)

    warnings = ()
    _, J, ok = km.residual_jacobian(kernels.MODE_WEAK, params, y.points,
                                    mask_idx, None)
    if ok:
        sv = np.linalg.svd(J, compute_uv=False)
        if sv[0] > 0 and sv[-1] / sv[0] < 1e-10:
            warnings = ("rank_deficient",)

    s = float(params[0])
    az, el, roll = (wrap_deg(math.degrees(a)) for a in params[1:4])
    joints_deg = np.degrees(params[6:10])
    R = rotation_azelroll(params[1], params[2], params[3])
    T = np.array([params[4] / s, params[5] / s, 0.0])
    loc = -R.T @ T
    pose = PoseVector(tuple(float(v) for v in loc), (az, el, roll),
                      JointAngles.from_array(joints_deg))
    z = forward_kinematics(model, pose.joints)
    y_ref = weak_project(s, pose, z)
    return SolveResult(
        pose=pose, z=z, y_refined=y_ref, residual=loss, inlier_mask=mask,
        iterations_used=int(iters), restarts_used=len(inits), scale=s,
        warnings=warnings)


def _pose_from_full_params(params: np.ndarray) -> PoseVector:
    az, el, roll = (math.degrees(a) for a in params[3:6])
    return PoseVector(
        cam_location=(float(params[0]), float(params[1]), float(params[2])),
        cam_rotation=(wrap_deg(az), el, wrap_deg(roll)),
        joints=JointAngles.from_array(np.degrees(params[6:10])),
    )


def lm_box(residual_jac, p0, lo, hi, max_iter=500, tol=1e-12):
    """Box-constrained Levenberg-Marquardt for small generic problems.

    Same machinery as the pose kernels (multiplicative damping x10/x0.1,
    projection onto the box after every step, active-set freeze of pinned
    coordinates); used for inverse kinematics, where the problem is tiny and
    a compiled path buys nothing. `residual_jac(p) -> (r, J)`.

    Returns (p, loss, iterations, converged).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    p = np.clip(np.asarray(p0, dtype=float), lo, hi)
    r, J = residual_jac(p)
    loss = float(r @ r)
    lam = 1e-3
    iters = 0
    converged = False
    while iters < max_iter:
        iters += 1
        g = J.T @ r
        H = J.T @ J
        act = ((p <= lo) & (g > 0)) | ((p >= hi) & (g < 0))
        if act.any():
            H = H.copy()
            g = g.copy()
            H[act, :] = 0.0
            H[:, act] = 0.0
            H[act, act] = 1.0
            g[act] = 0.0
        d = np.diag(H).copy()
        d[d < 1e-12] = 1e-12
        try:
            delta = np.linalg.solve(H + lam * np.diag(d), -g)
        except np.linalg.LinAlgError:
            lam = min(lam * 10.0, 1e12)
            continue
        pn = np.clip(p + delta, lo, hi)
        rn, Jn = residual_jac(pn)
        ln = float(rn @ rn)
        if ln < loss:
            drop = loss - ln
            p, r, J, loss = pn, rn, Jn, ln
            lam = max(lam * 0.1, 1e-12)
            if drop <= tol:
                converged = True
                break
        else:
            lam = lam * 10.0
            if lam > 1e12:
                converged = True
                break
    return p, loss, iters, converged
