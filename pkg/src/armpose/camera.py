"""Pinhole and weak-perspective projection, and the camera parameterization.

Conventions (fixed for the whole package):

* World frame: origin at the arm base, z up, cm.
* Camera frame: x right, y down, z forward (optical axis). A world point z
  maps to the camera frame as ``R @ z + T``.
* ``cam_rotation = (az, el, roll)`` degrees. At az=el=roll=0 the camera looks
  along world +y with world +x to its right and world +z up. Azimuth rotates
  the camera about world up, elevation pitches it downward (a camera above
  the table looking down at the arm has el > 0), roll spins it about the
  optical axis. Equivalent to an intrinsic Z-Y-X Euler composition.
* Image coordinates: origin at the top-left corner, u right, v down, pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, ParseError
from .kinematics import JointAngles, Keypoints3D, NUM_KEYPOINTS

MIN_DEPTH_CM = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


def load_intrinsics(path) -> CameraIntrinsics:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return CameraIntrinsics(float(raw["fx"]), float(raw["fy"]),
                                float(raw["cx"]), float(raw["cy"]),
                                int(raw["width"]), int(raw["height"]))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"cannot read intrinsics {path!r}: {exc}") from exc


@dataclass(frozen=True)
class PoseVector:
    """The 10 scalars determining the scene: camera placement + joint angles."""

    cam_location: tuple[float, float, float]   # cm, world frame
    cam_rotation: tuple[float, float, float]   # az, el, roll, degrees
    joints: JointAngles

    def __post_init__(self):
        el = self.cam_rotation[1]
        if not -90.0 < el < 90.0:
            raise ValueError(f"elevation {el}° must lie strictly inside (-90°, 90°)")

    def as_params(self) -> np.ndarray:
        """Internal 10-vector: location (cm) then az/el/roll and joints in radians."""
        return np.concatenate([
            np.asarray(self.cam_location, dtype=float),
            np.radians(np.asarray(self.cam_rotation, dtype=float)),
            np.radians(self.joints.as_array()),
        ])

    @staticmethod
    def from_params(params) -> "PoseVector":
        p = np.asarray(params, dtype=float)
        rot = np.degrees(p[3:6])
        return PoseVector(
            cam_location=(float(p[0]), float(p[1]), float(p[2])),
            cam_rotation=(float(rot[0]), float(rot[1]), float(rot[2])),
            joints=JointAngles.from_array(np.degrees(p[6:10])),
        )


@dataclass(frozen=True)
class Keypoints2D:
    """Pixel keypoints with per-point confidence and an in-image flag."""

    points: np.ndarray      # (17, 2) float, pixels
    confidence: np.ndarray  # (17,) float in [0, 1]
    visible: np.ndarray     # (17,) bool

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, order="C")
        conf = np.array(self.confidence, dtype=float, order="C")
        vis = np.array(self.visible, dtype=bool, order="C")
        if pts.shape != (NUM_KEYPOINTS, 2):
            raise ValueError(f"expected ({NUM_KEYPOINTS}, 2) points, got {pts.shape}")
        if conf.shape != (NUM_KEYPOINTS,) or vis.shape != (NUM_KEYPOINTS,):
            raise ValueError("confidence/visible must have length 17")
        if np.any(conf < 0.0) or np.any(conf > 1.0):
            raise ValueError("confidences must lie in [0, 1]")
        for name, arr in (("points", pts), ("confidence", conf), ("visible", vis)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class ProjectionResult:
    points2d: Keypoints2D
    scales: np.ndarray  # (17,) per-point homogeneous scale = camera-frame depth, cm


def rotation_azelroll(az_rad: float, el_rad: float, roll_rad: float) -> np.ndarray:
    """World-to-camera rotation for the az/el/roll convention above."""
    ca, sa = math.cos(az_rad), math.sin(az_rad)
    ce, se = math.cos(el_rad), math.sin(el_rad)
    cr, sr = math.cos(roll_rad), math.sin(roll_rad)
    right = np.array([ca, sa, 0.0])
    fwd = np.array([-sa * ce, ca * ce, -se])
    down = np.array([se * sa, -se * ca, -ce])  # fwd x right
    return np.stack([cr * right + sr * down, cr * down - sr * right, fwd])


def pose_to_extrinsics(p: PoseVector) -> tuple[np.ndarray, np.ndarray]:
    """Rotation R and translation T with x_cam = R @ z_world + T."""
    az, el, roll = np.radians(np.asarray(p.cam_rotation, dtype=float))
    R = rotation_azelroll(az, el, roll)
    T = -R @ np.asarray(p.cam_location, dtype=float)
    return R, T


def camera_location_from_extrinsics(R: np.ndarray, T: np.ndarray) -> np.ndarray:
    return -R.T @ T


def look_at_pose(az_deg, el_deg, roll_deg, distance_cm, target=(0.0, 0.0, 0.0),
                 joints: JointAngles | None = None) -> PoseVector:
    """Camera placed on the sphere of radius `distance_cm` around `target`,
    oriented so the optical axis passes through `target`."""
    az, el = math.radians(az_deg), math.radians(el_deg)
    fwd = np.array([-math.sin(az) * math.cos(el),
                    math.cos(az) * math.cos(el),
                    -math.sin(el)])
    loc = np.asarray(target, dtype=float) - distance_cm * fwd
    return PoseVector(
        cam_location=tuple(float(x) for x in loc),
        cam_rotation=(float(az_deg), float(el_deg), float(roll_deg)),
        joints=joints if joints is not None else JointAngles(0.0, 0.0, 0.0, 0.0),
    )


def project_points(intr: CameraIntrinsics, R: np.ndarray, T: np.ndarray,
                   pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw pinhole projection of world points; returns (uv, depths).

    Raises BehindCameraError if any depth <= MIN_DEPTH_CM.
    """
    cam = pts @ R.T + T
    depths = cam[:, 2]
    if np.any(depths <= MIN_DEPTH_CM):
        bad = int(np.argmin(depths))
        raise BehindCameraError(
            f"keypoint {bad} at depth {depths[bad]:.6g} cm is behind the camera")
    uv = np.empty((len(pts), 2))
    uv[:, 0] = intr.fx * cam[:, 0] / depths + intr.cx
    uv[:, 1] = intr.fy * cam[:, 1] / depths + intr.cy
    return uv, depths.copy()


def project(intr: CameraIntrinsics, p: PoseVector, z: Keypoints3D) -> ProjectionResult:
    """Full-perspective projection of the 17 keypoints under pose `p`.

    Satisfies S_k * (u_k, v_k, 1)^T = K @ (R @ z_k + T) exactly. Points
    projecting outside the image stay in the result with visible=False.
    """
    R, T = pose_to_extrinsics(p)
    uv, depths = project_points(intr, R, T, z.coords)
    visible = ((uv[:, 0] >= 0) & (uv[:, 0] < intr.width)
               & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height))
    pts2d = Keypoints2D(uv, np.ones(NUM_KEYPOINTS), visible)
    return ProjectionResult(pts2d, depths)


def weak_project(scale: float, p: PoseVector, z: Keypoints3D) -> Keypoints2D:
    """Weak-perspective projection: orthographic onto the image plane with a
    uniform pixels-per-cm scale; used when intrinsics are unknown."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    R, T = pose_to_extrinsics(p)
    cam = z.coords @ R.T + T
    uv = scale * cam[:, :2]
    return Keypoints2D(uv, np.ones(NUM_KEYPOINTS), np.ones(NUM_KEYPOINTS, dtype=bool))
