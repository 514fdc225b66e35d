"""Domain exceptions shared across the package.

Each error carries a short machine-readable ``code`` so the CLI can emit
structured JSON on stderr.
"""


class ArmPoseError(Exception):
    code = "error"


class ParseError(ArmPoseError):
    """Input file is malformed or does not match its documented schema."""

    code = "parse_error"


class ModelInvariantError(ArmPoseError):
    """Arm model violates a structural invariant (keypoint count, limits...)."""

    code = "model_invariant"


class JointLimitError(ArmPoseError):
    """A joint angle lies outside its configured limit interval."""

    code = "joint_limit"


class BehindCameraError(ArmPoseError):
    """A 3D point has non-positive depth in the camera frame."""

    code = "behind_camera"


class InsufficientKeypointsError(ArmPoseError):
    """Fewer confident keypoints than the solver's minimum."""

    code = "insufficient_keypoints"


class NoConvergenceError(ArmPoseError):
    """Every restart ran out of iterations without meeting the tolerance."""

    code = "no_convergence"


class SamplingExhaustedError(ArmPoseError):
    """Scene rejection sampling exceeded its attempt budget."""

    code = "sampling_exhausted"


class EmptyEvalError(ArmPoseError):
    """No eligible keypoints/samples to score."""

    code = "empty_eval"


class MissingPairError(ArmPoseError):
    """Prediction/ground-truth directories do not pair one-to-one."""

    code = "missing_pair"


class UnreachableError(ArmPoseError):
    """Reach target lies outside the arm's attainable workspace."""

    code = "unreachable"
