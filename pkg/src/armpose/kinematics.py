"""Forward kinematics of the 4-joint arm.

The arm is a rooted tree of rigid parts. Each actuated joint rotates one part
(and everything attached below it) about a fixed axis through a fixed pivot,
both expressed in the rest-pose world frame. The world transform of a part is
the composition of its ancestor joints' rotations, root-most applied last, so
a keypoint's world coordinate is its rest coordinate pushed through the chain.

Units: centimeters and degrees in all public interfaces, radians internally.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import JointLimitError, ModelInvariantError, ParseError

JOINT_NAMES = ("rotation", "base", "elbow", "wrist")
JOINT_SPANS_DEG = (270.0, 180.0, 300.0, 120.0)
NUM_KEYPOINTS = 17

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def bundled_model_path() -> str:
    return os.path.join(_DATA_DIR, "owi535.json")


@dataclass(frozen=True)
class JointAngles:
    """Angles of the four motors, degrees."""

    rotation: float
    base: float
    elbow: float
    wrist: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rotation, self.base, self.elbow, self.wrist], dtype=float)

    @staticmethod
    def from_array(a) -> "JointAngles":
        a = np.asarray(a, dtype=float)
        return JointAngles(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class Keypoints3D:
    """World-frame keypoint coordinates, cm; row order follows the model."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float, order="C")
        if c.shape != (NUM_KEYPOINTS, 3):
            raise ValueError(f"expected ({NUM_KEYPOINTS}, 3) coords, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite keypoint coordinates")
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)


@dataclass(frozen=True)
class RigidTransform:
    """x -> R @ x + t, lengths in cm."""

    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Returns self after other: x -> self(other(x))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)


class ArmModel:
    """Immutable arm geometry: parts, joints, limits and rest keypoints.

    Construction validates every structural invariant; instances are safe to
    share across threads. The packed array attributes (rest coordinates,
    per-keypoint joint chains, axes, pivots) are what the numeric kernels
    consume.
    """

    def __init__(self, name, parts, joints, keypoints, tip_keypoint):
        self.name = name
        self.parts = tuple(parts)        # (name, parent_name|None, axis|None, pivot|None)
        self.joints = tuple(joints)      # canonical order: (name, part_name, (lo, hi))
        self.keypoints = tuple(keypoints)  # (id, part_name, rest xyz)
        self.tip_keypoint = tip_keypoint
        self._validate()
        self._pack()
        self._kernels = {}

    # -- structure ----------------------------------------------------------

    def _validate(self):
        part_names = [p[0] for p in self.parts]
        if len(set(part_names)) != len(part_names):
            raise ModelInvariantError("duplicate part names")
        parent_of = {p[0]: p[1] for p in self.parts}
        roots = [n for n, par in parent_of.items() if par is None]
        if len(roots) != 1:
            raise ModelInvariantError(f"expected exactly one root part, got {roots}")
        for name, parent in parent_of.items():
            if parent is not None and parent not in parent_of:
                raise ModelInvariantError(f"part {name!r} has unknown parent {parent!r}")
        # cycle check: walk each part to the root
        for name in part_names:
            seen = set()
            cur = name
            while cur is not None:
                if cur in seen:
                    raise ModelInvariantError(f"part graph has a cycle through {cur!r}")
                seen.add(cur)
                cur = parent_of[cur]

        if len(self.joints) != 4:
            raise ModelInvariantError(f"expected 4 joints, got {len(self.joints)}")
        by_name = {j[0]: j for j in self.joints}
        if tuple(sorted(by_name)) != tuple(sorted(JOINT_NAMES)):
            raise ModelInvariantError(f"joints must be named {JOINT_NAMES}")
        # canonical order
        self.joints = tuple(by_name[n] for n in JOINT_NAMES)
        for (jname, part, (lo, hi)), span in zip(self.joints, JOINT_SPANS_DEG):
            if part not in parent_of:
                raise ModelInvariantError(f"joint {jname!r} actuates unknown part {part!r}")
            if parent_of[part] is None:
                raise ModelInvariantError(f"joint {jname!r} cannot actuate the root part")
            if not (hi > lo):
                raise ModelInvariantError(f"joint {jname!r} limits not ordered: [{lo}, {hi}]")
            if abs((hi - lo) - span) > 1e-9:
                raise ModelInvariantError(
                    f"joint {jname!r} span {hi - lo}° differs from required {span}°")
        jointed_parts = [j[1] for j in self.joints]
        if len(set(jointed_parts)) != 4:
            raise ModelInvariantError("two joints actuate the same part")
        axis_pivot = {p[0]: (p[2], p[3]) for p in self.parts}
        for jname, part, _ in self.joints:
            axis, pivot = axis_pivot[part]
            if axis is None or pivot is None:
                raise ModelInvariantError(f"part {part!r} of joint {jname!r} lacks axis/pivot")
            axis = np.asarray(axis, dtype=float)
            if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
                raise ModelInvariantError(f"joint {jname!r} axis is not unit length")

        if len(self.keypoints) != NUM_KEYPOINTS:
            raise ModelInvariantError(
                f"expected {NUM_KEYPOINTS} keypoints, got {len(self.keypoints)}")
        ids = [k[0] for k in self.keypoints]
        if len(set(ids)) != len(ids):
            raise ModelInvariantError("duplicate keypoint ids")
        for kid, part, rest in self.keypoints:
            if part not in parent_of:
                raise ModelInvariantError(f"keypoint {kid!r} owned by unknown part {part!r}")
            if not np.all(np.isfinite(np.asarray(rest, dtype=float))):
                raise ModelInvariantError(f"keypoint {kid!r} rest coordinate not finite")
        if self.tip_keypoint not in ids:
            raise ModelInvariantError(f"tip keypoint {self.tip_keypoint!r} not among keypoints")

    def _pack(self):
        parent_of = {p[0]: p[1] for p in self.parts}
        axis_pivot = {p[0]: (p[2], p[3]) for p in self.parts}
        joint_of_part = {j[1]: i for i, j in enumerate(self.joints)}

        def chain(part):
            # actuated joint indices from root to `part`
            out = []
            cur = part
            while cur is not None:
                if cur in joint_of_part:
                    out.append(joint_of_part[cur])
                cur = parent_of[cur]
            return out[::-1]

        K = len(self.keypoints)
        self.keypoint_ids = tuple(k[0] for k in self.keypoints)
        self.rest = np.array([k[2] for k in self.keypoints], dtype=float)
        self.kp_chain = np.full((K, 4), -1, dtype=np.int32)
        self.kp_njoints = np.zeros(K, dtype=np.int32)
        for i, (_, part, _) in enumerate(self.keypoints):
            ch = chain(part)
            self.kp_njoints[i] = len(ch)
            self.kp_chain[i, : len(ch)] = ch

        self.joint_axes = np.array(
            [axis_pivot[j[1]][0] for j in self.joints], dtype=float)
        self.joint_pivots = np.array(
            [axis_pivot[j[1]][1] for j in self.joints], dtype=float)
        self.limits_deg = np.array([j[2] for j in self.joints], dtype=float)
        self.joint_parent = np.full(4, -1, dtype=np.int32)
        for i, (_, part, _) in enumerate(self.joints):
            ch = chain(part)
            if len(ch) >= 2:
                self.joint_parent[i] = ch[-2]
        # topological order: parents before children
        order, placed = [], set()
        while len(order) < 4:
            for i in range(4):
                if i in placed:
                    continue
                par = int(self.joint_parent[i])
                if par == -1 or par in placed:
                    order.append(i)
                    placed.add(i)
        self.joint_topo = np.array(order, dtype=np.int32)
        self.tip_index = self.keypoint_ids.index(self.tip_keypoint)
        for a in (self.rest, self.kp_chain, self.kp_njoints, self.joint_axes,
                  self.joint_pivots, self.limits_deg, self.joint_parent, self.joint_topo):
            a.flags.writeable = False

    # -- kernels ------------------------------------------------------------

    def kernel(self):
        """Backend kernel model (compiled if available), cached per backend."""
        from . import kernels

        key = kernels.backend_name()
        km = self._kernels.get(key)
        if km is None:
            km = kernels.make_kernel_model(self)
            self._kernels[key] = km
        return km

    # -- angle handling ------------------------------------------------------

    def check_angles(self, angles: JointAngles) -> np.ndarray:
        """Validates against limits and returns the angles as a degree array."""
        a = angles.as_array()
        for i, name in enumerate(JOINT_NAMES):
            lo, hi = self.limits_deg[i]
            if not (lo <= a[i] <= hi):
                raise JointLimitError(
                    f"{name} angle {a[i]}° outside limits [{lo}°, {hi}°]")
        return a

    def limits_rad(self) -> np.ndarray:
        return np.radians(self.limits_deg)


def _rodrigues(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    cross = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(a, a)


def load_arm_model(path) -> ArmModel:
    """Loads and validates an arm model JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read arm model {path!r}: {exc}") from exc
    try:
        parts = [(p["name"], p["parent"], p["axis"], p["pivot"]) for p in raw["parts"]]
        joints = [(j["name"], j["part"], (float(j["limit_deg"][0]), float(j["limit_deg"][1])))
                  for j in raw["joints"]]
        keypoints = [(k["id"], k["part"], tuple(float(x) for x in k["rest"]))
                     for k in raw["keypoints"]]
        name = raw.get("name", os.path.basename(str(path)))
        tip = raw["tip_keypoint"]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"arm model {path!r} does not match the schema: {exc}") from exc
    return ArmModel(name, parts, joints, keypoints, tip)


def load_bundled_model() -> ArmModel:
    return load_arm_model(bundled_model_path())


def motor_transform(model: ArmModel, joint_index: int, angle_deg: float) -> RigidTransform:
    """Local rigid transform of one joint: rotation by `angle_deg` about its
    axis through its pivot (not composed with upstream joints)."""
    if not 0 <= joint_index < 4:
        raise ValueError(f"joint_index must be 0..3, got {joint_index}")
    lo, hi = model.limits_deg[joint_index]
    if not (lo <= angle_deg <= hi):
        raise JointLimitError(
            f"{JOINT_NAMES[joint_index]} angle {angle_deg}° outside limits [{lo}°, {hi}°]")
    R = _rodrigues(model.joint_axes[joint_index], math.radians(angle_deg))
    pivot = model.joint_pivots[joint_index]
    return RigidTransform(R, pivot - R @ pivot)


def forward_kinematics(model: ArmModel, angles: JointAngles) -> Keypoints3D:
    """World coordinates of all keypoints at the given joint angles."""
    a = model.check_angles(angles)
    pts = model.kernel().fk(np.radians(a))
    return Keypoints3D(pts)


def tip_position(model: ArmModel, angles: JointAngles) -> tuple[float, float, float]:
    """World coordinate of the designated tip keypoint."""
    coords = forward_kinematics(model, angles).coords
    x, y, z = coords[model.tip_index]
    return (float(x), float(y), float(z))


def tip_reach_bound(model: ArmModel) -> float:
    """Upper bound on the tip's distance from the world origin over all
    configurations: the pivot-to-pivot chain length plus end segments.

    Used as a cheap necessary condition for reachability; the true maximum
    (limits, interference) is below this bound.
    """
    chain = [int(j) for j in model.kp_chain[model.tip_index] if j >= 0]
    if not chain:
        return float(np.linalg.norm(model.rest[model.tip_index]))
    pts = [model.joint_pivots[j] for j in chain] + [model.rest[model.tip_index]]
    total = float(np.linalg.norm(pts[0]))
    for a, b in zip(pts, pts[1:]):
        total += float(np.linalg.norm(b - a))
    return total
