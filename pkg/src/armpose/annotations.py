"""Scene annotation JSON: the on-disk record shared by the dataset
generator, the refinement exporter and the evaluator.

Schema (one file per image):

    {
      "image_id": "000042",
      "intrinsics": {"fx", "fy", "cx", "cy", "width", "height"},
      "pose": {"cam_location": [x,y,z], "cam_rotation": [az,el,roll],
               "joints": {"rotation", "base", "elbow", "wrist"}},
      "keypoints2d": [{"id", "u", "v", "visible", "confidence"}, ...],
      "keypoints3d": [{"id", "x", "y", "z"}, ...]
    }

Keypoint entries follow the model file order. All numbers are plain JSON
floats (cm / degrees / pixels as elsewhere).
"""

from __future__ import annotations

import json

import numpy as np

from .camera import CameraIntrinsics, Keypoints2D, PoseVector
from .errors import ParseError
from .kinematics import ArmModel, JointAngles, Keypoints3D
from .util import dump_json


def pose_to_dict(p: PoseVector) -> dict:
    return {
        "cam_location": [float(v) for v in p.cam_location],
        "cam_rotation": [float(v) for v in p.cam_rotation],
        "joints": {"rotation": p.joints.rotation, "base": p.joints.base,
                   "elbow": p.joints.elbow, "wrist": p.joints.wrist},
    }


def pose_from_dict(d: dict) -> PoseVector:
    j = d["joints"]
    return PoseVector(
        cam_location=tuple(float(v) for v in d["cam_location"]),
        cam_rotation=tuple(float(v) for v in d["cam_rotation"]),
        joints=JointAngles(float(j["rotation"]), float(j["base"]),
                           float(j["elbow"]), float(j["wrist"])),
    )


def intrinsics_to_dict(intr: CameraIntrinsics) -> dict:
    return {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height}


def intrinsics_from_dict(d: dict) -> CameraIntrinsics:
    return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]),
                            float(d["cy"]), int(d["width"]), int(d["height"]))


def keypoints2d_to_list(model: ArmModel, y: Keypoints2D) -> list:
    return [
        {"id": model.keypoint_ids[k], "u": float(y.points[k, 0]),
         "v": float(y.points[k, 1]), "visible": bool(y.visible[k]),
         "confidence": float(y.confidence[k])}
        for k in range(len(model.keypoint_ids))
    ]


def keypoints2d_from_list(model: ArmModel, items: list) -> Keypoints2D:
    by_id = {e["id"]: e for e in items}
    pts, conf, vis = [], [], []
    for kid in model.keypoint_ids:
        e = by_id[kid]
        pts.append((float(e["u"]), float(e["v"])))
        conf.append(float(e.get("confidence", 1.0)))
        vis.append(bool(e.get("visible", True)))
    return Keypoints2D(np.array(pts), np.array(conf), np.array(vis))


def keypoints3d_to_list(model: ArmModel, z: Keypoints3D) -> list:
    return [
        {"id": model.keypoint_ids[k], "x": float(z.coords[k, 0]),
         "y": float(z.coords[k, 1]), "z": float(z.coords[k, 2])}
        for k in range(len(model.keypoint_ids))
    ]


def keypoints3d_from_list(model: ArmModel, items: list) -> Keypoints3D:
    by_id = {e["id"]: e for e in items}
    return Keypoints3D(np.array(
        [[by_id[k]["x"], by_id[k]["y"], by_id[k]["z"]] for k in model.keypoint_ids]))


def save_annotation(path, model: ArmModel, image_id: str, intr: CameraIntrinsics,
                    pose: PoseVector, y: Keypoints2D, z: Keypoints3D) -> None:
    record = {
        "image_id": image_id,
        "intrinsics": intrinsics_to_dict(intr),
        "pose": pose_to_dict(pose),
        "keypoints2d": keypoints2d_to_list(model, y),
        "keypoints3d": keypoints3d_to_list(model, z),
    }
    with open(path, "w", encoding="utf-8") as fh:
        dump_json(record, fh)


def load_annotation(path, model: ArmModel) -> dict:
    """Returns {image_id, intrinsics, pose, keypoints2d, keypoints3d} with
    package types; raises ParseError on malformed files."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return {
            "image_id": str(raw["image_id"]),
            "intrinsics": intrinsics_from_dict(raw["intrinsics"]),
            "pose": pose_from_dict(raw["pose"]),
            "keypoints2d": keypoints2d_from_list(model, raw["keypoints2d"]),
            "keypoints3d": keypoints3d_from_list(model, raw["keypoints3d"]),
        }
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"cannot read annotation {path!r}: {exc}") from exc
