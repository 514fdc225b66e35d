import numpy as np
import pytest

from armpose import EmptyEvalError, JointAngles, Keypoints2D, MissingPairError, PoseVector
from armpose.annotations import save_annotation
from armpose.camera import pose_to_extrinsics, rotation_azelroll
from armpose.kinematics import forward_kinematics
from armpose.metrics import (evaluate_dataset, format_report, pck, pose_error,
                             report_json, rotation_geodesic_deg)
from armpose.synth import NoiseSpec, SampleRanges, generate_dataset, sample_scene

from oracles import rotation_from_axis_angle

ZERO = JointAngles(0.0, 0.0, 0.0, 0.0)


def kp(points, visible=None):
    pts = np.asarray(points, dtype=float)
    vis = np.ones(17, dtype=bool) if visible is None else np.asarray(visible)
    return Keypoints2D(pts, np.ones(17), vis)


def spread_points(rng, scale=100.0):
    return rng.uniform(0, scale, size=(17, 2))


# -- pck ---------------------------------------------------------------------------


def test_pck_identity(rng):
    gt = kp(spread_points(rng))
    assert pck(gt, gt) == 1.0


def test_pck_one_displaced(rng):
    pts = spread_points(rng)
    gt = kp(pts)
    norm = (pts.max(0) - pts.min(0)).max()
    moved = pts.copy()
    moved[3] += (0.3 * norm, 0.0)  # beyond the 0.2 threshold
    assert pck(kp(moved), gt) == pytest.approx(16 / 17)


def test_pck_monotone_in_alpha(rng):
    gt = kp(spread_points(rng))
    pred = kp(gt.points + rng.normal(0, 5, (17, 2)))
    vals = [pck(pred, gt, alpha=a) for a in (0.5, 0.2, 0.1, 0.05, 0.01)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_pck_permutation_invariant(rng):
    gt_pts = spread_points(rng)
    pred_pts = gt_pts + rng.normal(0, 8, (17, 2))
    perm = rng.permutation(17)
    a = pck(kp(pred_pts), kp(gt_pts))
    b = pck(kp(pred_pts[perm]), kp(gt_pts[perm]))
    assert a == b


def test_pck_visible_only(rng):
    pts = spread_points(rng)
    norm = (pts.max(0) - pts.min(0)).max()
    pred = pts.copy()
    pred[0] += (norm, 0.0)  # far off, and invisible in gt
    vis = np.ones(17, dtype=bool)
    vis[0] = False
    assert pck(kp(pred), kp(pts, vis), visible_only=True) == 1.0
    assert pck(kp(pred), kp(pts, vis), visible_only=False) < 1.0


def test_pck_empty_eval(rng):
    pts = spread_points(rng)
    with pytest.raises(EmptyEvalError):
        pck(kp(pts), kp(pts, np.zeros(17, dtype=bool)), visible_only=True)
    degenerate = kp(np.zeros((17, 2)))
    with pytest.raises(EmptyEvalError):
        pck(degenerate, degenerate)


# -- pose error ----------------------------------------------------------------------


def pose_at(az=10.0, el=40.0, roll=0.0, loc=(0.0, -60.0, 40.0), joints=ZERO):
    return PoseVector(loc, (az, el, roll), joints)


def test_pose_error_zero():
    p = pose_at()
    dj, drot, dloc = pose_error(p, p)
    assert np.allclose(dj, 0) and drot == 0 and dloc == 0


def test_pose_error_joint_arithmetic():
    gt = pose_at(joints=JointAngles(10.0, 20.0, 30.0, 40.0))
    pred = pose_at(joints=JointAngles(11.0, 22.0, 33.0, 44.0))
    dj, _, _ = pose_error(pred, gt)
    assert np.allclose(dj, [1.0, 2.0, 3.0, 4.0])
    assert dj.mean() == pytest.approx(2.5)


def test_rotation_error_axis_angle_oracle(rng):
    # rotate one camera by exactly 5 degrees about random axes
    from oracles import euler_from_rotation

    for _ in range(20):
        az, el, roll = rng.uniform(-40, 40), rng.uniform(-60, 60), rng.uniform(-90, 90)
        R1 = rotation_azelroll(np.radians(az), np.radians(el), np.radians(roll))
        axis = rng.normal(size=3)
        R2 = rotation_from_axis_angle(axis, np.radians(5.0)) @ R1
        az2, el2, roll2 = euler_from_rotation(R2)
        p1 = pose_at(az, el, roll)
        p2 = pose_at(az2, el2, roll2)
        _, drot, _ = pose_error(p2, p1)
        assert abs(drot - 5.0) < 1e-9


def test_pose_error_location():
    a = pose_at(loc=(0.0, 0.0, 10.0))
    b = pose_at(loc=(3.0, 4.0, 10.0))
    _, _, dloc = pose_error(a, b)
    assert dloc == pytest.approx(5.0)


def test_rotation_triangle_inequality(rng):
    for _ in range(50):
        Rs = [rotation_from_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi))
              for _ in range(3)]
        ab = rotation_geodesic_deg(Rs[0], Rs[1])
        bc = rotation_geodesic_deg(Rs[1], Rs[2])
        ac = rotation_geodesic_deg(Rs[0], Rs[2])
        assert ac <= ab + bc + 1e-9


# -- dataset evaluation -----------------------------------------------------------------


@pytest.fixture()
def small_dataset(model, intr, tmp_path):
    out = tmp_path / "gt"
    generate_dataset(5, 77, SampleRanges(), NoiseSpec.quiet(), out, model, intr)
    return out


def test_eval_gt_vs_itself(model, small_dataset):
    report = evaluate_dataset(small_dataset, small_dataset, model)
    assert report.pck == 1.0
    assert report.pck_visible_only == 1.0
    assert report.joint_error_avg == 0.0
    assert report.cam_rotation_error == 0.0
    assert report.cam_location_error == 0.0
    assert report.n_samples == 5
    assert all(v == 1.0 for v in report.pck_per_keypoint)


def test_eval_missing_pair(model, small_dataset, tmp_path):
    import shutil

    pred = tmp_path / "pred"
    pred.mkdir()
    names = sorted(p.name for p in small_dataset.glob("ann_*.json"))
    for name in names[:-1]:  # drop the last annotation
        shutil.copy(small_dataset / name, pred / name)
    with pytest.raises(MissingPairError) as ei:
        evaluate_dataset(pred, small_dataset, model)
    assert "000004" in str(ei.value)


def test_eval_empty(model, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    with pytest.raises(EmptyEvalError):
        evaluate_dataset(a, b, model)


def test_report_deterministic_and_formatted(model, small_dataset):
    r1 = evaluate_dataset(small_dataset, small_dataset, model)
    r2 = evaluate_dataset(small_dataset, small_dataset, model)
    assert report_json(r1) == report_json(r2)
    text = format_report(r1)
    assert "PCK@0.2" in text and "average" in text
