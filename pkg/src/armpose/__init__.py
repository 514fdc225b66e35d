"""Vision-based pose recovery and control for a cheap 4-joint robotic arm.

Submodules:

* ``kinematics`` — arm geometry and forward kinematics
* ``camera`` — pinhole / weak-perspective projection
* ``solver`` — 10-DOF pose recovery from 2D keypoints
* ``heatmaps`` — keypoint score maps: binary format and peak extraction
* ``refine`` — pseudo-label refinement pipeline and export
* ``synth`` — ground-truth scene and dataset generation
* ``metrics`` — PCK and pose-error scoring
* ``control`` — arm simulator, PID pose maker, reach planner and episodes
* ``cli`` — the ``armpose`` command
"""

__version__ = "0.1.0"

from .errors import (ArmPoseError, BehindCameraError, EmptyEvalError,
                     InsufficientKeypointsError, JointLimitError,
                     MissingPairError, ModelInvariantError, NoConvergenceError,
                     ParseError, SamplingExhaustedError, UnreachableError)
from .kinematics import (ArmModel, JointAngles, Keypoints3D, RigidTransform,
                         bundled_model_path, forward_kinematics,
                         load_arm_model, load_bundled_model, motor_transform,
                         tip_position, tip_reach_bound)
from .camera import (CameraIntrinsics, Keypoints2D, PoseVector,
                     ProjectionResult, load_intrinsics, look_at_pose,
                     pose_to_extrinsics, project, weak_project)

__all__ = [
    "ArmPoseError", "BehindCameraError", "EmptyEvalError",
    "InsufficientKeypointsError", "JointLimitError", "MissingPairError",
    "ModelInvariantError", "NoConvergenceError", "ParseError",
    "SamplingExhaustedError", "UnreachableError",
    "ArmModel", "JointAngles", "Keypoints3D", "RigidTransform",
    "bundled_model_path", "forward_kinematics", "load_arm_model",
    "load_bundled_model", "motor_transform", "tip_position", "tip_reach_bound",
    "CameraIntrinsics", "Keypoints2D", "PoseVector", "ProjectionResult",
    "load_intrinsics", "look_at_pose", "pose_to_extrinsics", "project",
    "weak_project",
    "__version__",
]
