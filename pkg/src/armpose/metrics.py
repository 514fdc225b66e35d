"""Scoring: PCK for 2D detections, angular/location errors for 3D poses.

PCK normalizer: the longer side of the ground-truth keypoint bounding box
(the usual convention for objects without a torso landmark). Camera rotation
error is the geodesic angle between the two rotation matrices.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import annotations
from .camera import Keypoints2D, PoseVector, pose_to_extrinsics
from .errors import EmptyEvalError, MissingPairError
from .kinematics import ArmModel, JOINT_NAMES
from .util import dump_json


@dataclass(frozen=True)
class EvalReport:
    pck: float
    pck_per_keypoint: tuple[float, ...]
    pck_visible_only: float
    joint_errors: dict               # per joint name, mean abs degrees
    joint_error_avg: float
    cam_rotation_error: float        # degrees, geodesic
    cam_location_error: float        # cm, euclidean
    n_samples: int
    alpha: float

    def to_dict(self) -> dict:
        return {
            "pck": self.pck,
            "pck_per_keypoint": list(self.pck_per_keypoint),
            "pck_visible_only": self.pck_visible_only,
            "joint_errors": dict(self.joint_errors),
            "joint_error_avg": self.joint_error_avg,
            "cam_rotation_error": self.cam_rotation_error,
            "cam_location_error": self.cam_location_error,
            "n_samples": self.n_samples,
            "alpha": self.alpha,
        }


def _pck_normalizer(gt: Keypoints2D) -> float:
    ext = gt.points.max(axis=0) - gt.points.min(axis=0)
    return float(ext.max())


def pck_flags(pred: Keypoints2D, gt: Keypoints2D, alpha: float = 0.2
              ) -> np.ndarray:
    """Per-keypoint correctness flags at threshold alpha * bbox long side."""
    norm = _pck_normalizer(gt)
    if norm <= 0:
        raise EmptyEvalError("degenerate ground truth: zero-size keypoint bbox")
    d = np.linalg.norm(pred.points - gt.points, axis=1)
    return d <= alpha * norm


def pck(pred: Keypoints2D, gt: Keypoints2D, alpha: float = 0.2,
        visible_only: bool = False) -> float:
    """Fraction of (optionally: ground-truth-visible) keypoints within
    alpha times the ground-truth bounding-box long side."""
    flags = pck_flags(pred, gt, alpha)
    if visible_only:
        if not gt.visible.any():
            raise EmptyEvalError("no visible ground-truth keypoints")
        flags = flags[gt.visible]
    return float(flags.mean())


def rotation_geodesic_deg(R1: np.ndarray, R2: np.ndarray) -> float:
    # 2*arcsin(|R1-R2|_F / 2sqrt(2)) == geodesic angle; exact at identity,
    # unlike the arccos-of-trace form which loses half the digits there
    s = np.linalg.norm(R1 - R2) / (2.0 * np.sqrt(2.0))
    return float(np.degrees(2.0 * np.arcsin(np.clip(s, 0.0, 1.0))))


def pose_error(pred: PoseVector, gt: PoseVector
               ) -> tuple[np.ndarray, float, float]:
    """(per-joint abs degrees, camera rotation degrees, camera location cm)."""
    dj = np.abs(pred.joints.as_array() - gt.joints.as_array())
    R1, _ = pose_to_extrinsics(pred)
    R2, _ = pose_to_extrinsics(gt)
    drot = rotation_geodesic_deg(R1, R2)
    dloc = float(np.linalg.norm(np.asarray(pred.cam_location)
                                - np.asarray(gt.cam_location)))
    return dj, drot, dloc


def _load_dir(path, model: ArmModel) -> dict:
    out = {}
    for name in sorted(os.listdir(path)):
        if not (name.startswith("ann_") and name.endswith(".json")):
            continue
        rec = annotations.load_annotation(os.path.join(path, name), model)
        out[rec["image_id"]] = rec
    return out


def evaluate_dataset(pred_dir, gt_dir, model: ArmModel, alpha: float = 0.2,
                     visible_only: bool = False) -> EvalReport:
    """Pairs prediction and ground-truth annotation files by image_id and
    aggregates PCK and pose errors."""
    preds = _load_dir(pred_dir, model)
    gts = _load_dir(gt_dir, model)
    unmatched = sorted(set(preds) ^ set(gts))
    if unmatched:
        raise MissingPairError(f"unpaired image ids: {', '.join(unmatched[:5])}"
                               + ("..." if len(unmatched) > 5 else ""))
    if not preds:
        raise EmptyEvalError("no annotation pairs found")

    K = len(model.keypoint_ids)
    correct = np.zeros(K)
    correct_vis, total_vis = 0, 0
    joint_sum = np.zeros(4)
    rot_sum = 0.0
    loc_sum = 0.0
    n = 0
    for image_id in sorted(preds):
        p, g = preds[image_id], gts[image_id]
        flags = pck_flags(p["keypoints2d"], g["keypoints2d"], alpha)
        correct += flags
        vis = g["keypoints2d"].visible
        correct_vis += int(flags[vis].sum())
        total_vis += int(vis.sum())
        dj, drot, dloc = pose_error(p["pose"], g["pose"])
        joint_sum += dj
        rot_sum += drot
        loc_sum += dloc
        n += 1

    per_kp = correct / n
    joint_means = joint_sum / n
    return EvalReport(
        pck=float(per_kp.mean()),
        pck_per_keypoint=tuple(float(v) for v in per_kp),
        pck_visible_only=(correct_vis / total_vis) if total_vis else float("nan"),
        joint_errors={name: float(v) for name, v in zip(JOINT_NAMES, joint_means)},
        joint_error_avg=float(joint_means.mean()),
        cam_rotation_error=rot_sum / n,
        cam_location_error=loc_sum / n,
        n_samples=n,
        alpha=alpha,
    )


def format_report(report: EvalReport) -> str:
    """Human-readable table mirroring the JSON report."""
    lines = [
        f"samples: {report.n_samples}",
        f"PCK@{report.alpha:g}: {report.pck * 100:.2f}%"
        f" (visible only: {report.pck_visible_only * 100:.2f}%)",
        "joint errors (deg):",
    ]
    for name in JOINT_NAMES:
        lines.append(f"  {name:<9} {report.joint_errors[name]:7.2f}")
    lines.append(f"  {'average':<9} {report.joint_error_avg:7.2f}")
    lines.append(f"camera rotation error (deg): {report.cam_rotation_error:.2f}")
    lines.append(f"camera location error (cm):  {report.cam_location_error:.2f}")
    return "\n".join(lines)


def report_json(report: EvalReport) -> str:
    return dump_json(report.to_dict())
