"""JSON Schemas for the CLI's machine-readable outputs.

Published so downstream tooling can validate; the test suite checks every
subcommand's stdout against these.
"""

_POSE = {
    "type": "object",
    "required": ["cam_location", "cam_rotation", "joints"],
    "properties": {
        "cam_location": {"type": "array", "items": {"type": "number"},
                         "minItems": 3, "maxItems": 3},
        "cam_rotation": {"type": "array", "items": {"type": "number"},
                         "minItems": 3, "maxItems": 3},
        "joints": {
            "type": "object",
            "required": ["rotation", "base", "elbow", "wrist"],
            "properties": {k: {"type": "number"}
                           for k in ("rotation", "base", "elbow", "wrist")},
        },
    },
}

_KEYPOINTS2D = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["id", "u", "v", "visible", "confidence"],
        "properties": {
            "id": {"type": "string"},
            "u": {"type": "number"},
            "v": {"type": "number"},
            "visible": {"type": "boolean"},
            "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        },
    },
}

SOLVE_SCHEMA = {
    "type": "object",
    "required": ["pose", "residual", "inlier_mask", "iterations_used",
                 "restarts_used", "y_refined"],
    "properties": {
        "pose": _POSE,
        "residual": {"type": "number", "minimum": 0},
        "inlier_mask": {"type": "array", "items": {"type": "boolean"}},
        "iterations_used": {"type": "integer", "minimum": 0},
        "restarts_used": {"type": "integer", "minimum": 1},
        "scale": {"type": ["number", "null"]},
        "warnings": {"type": "array", "items": {"type": "string"}},
        "y_refined": _KEYPOINTS2D,
    },
}

SYNTH_SCHEMA = {
    "type": "object",
    "required": ["n", "seed", "split", "ranges", "noise"],
    "properties": {
        "n": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer"},
        "split": {
            "type": "object",
            "required": ["train", "val"],
            "properties": {
                "train": {"type": "array", "items": {"type": "string"}},
                "val": {"type": "array", "items": {"type": "string"}},
            },
        },
    },
}

REFINE_SCHEMA = {
    "type": "object",
    "required": ["written", "skipped", "suggested_synth_real_ratio"],
    "properties": {
        "written": {"type": "integer", "minimum": 0},
        "skipped": {"type": "array"},
        "suggested_synth_real_ratio": {
            "type": "array", "items": {"type": "integer"},
            "minItems": 2, "maxItems": 2,
        },
    },
}

EVAL_SCHEMA = {
    "type": "object",
    "required": ["pck", "pck_per_keypoint", "pck_visible_only", "joint_errors",
                 "joint_error_avg", "cam_rotation_error", "cam_location_error",
                 "n_samples", "alpha"],
    "properties": {
        "pck": {"type": "number", "minimum": 0, "maximum": 1},
        "pck_per_keypoint": {"type": "array",
                             "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "joint_error_avg": {"type": "number", "minimum": 0},
        "cam_rotation_error": {"type": "number", "minimum": 0},
        "cam_location_error": {"type": "number", "minimum": 0},
        "n_samples": {"type": "integer", "minimum": 1},
    },
}

REACH_SCHEMA = {
    "type": "object",
    "required": ["pose_source", "episodes", "n_episodes", "success_rate",
                 "mean_distance_error", "mean_steps"],
    "properties": {
        "pose_source": {"enum": ["gt", "solver"]},
        "n_episodes": {"type": "integer", "minimum": 1},
        "success_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "mean_distance_error": {"type": "number", "minimum": 0},
        "mean_steps": {"type": "number", "minimum": 0},
        "episodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["target", "seed", "success", "final_distance",
                             "steps_used"],
            },
        },
    },
}

DEMO_SCHEMA = {
    "type": "object",
    "required": ["synth", "refine", "eval", "reach_gt", "reach_solver"],
    "properties": {
        "synth": SYNTH_SCHEMA,
        "refine": REFINE_SCHEMA,
        "eval": EVAL_SCHEMA,
        "reach_gt": REACH_SCHEMA,
        "reach_solver": REACH_SCHEMA,
    },
}

ERROR_SCHEMA = {
    "type": "object",
    "required": ["error", "message"],
    "properties": {
        "error": {"type": "string"},
        "message": {"type": "string"},
    },
}

SCHEMAS = {
    "solve": SOLVE_SCHEMA,
    "synth": SYNTH_SCHEMA,
    "refine": REFINE_SCHEMA,
    "eval": EVAL_SCHEMA,
    "reach": REACH_SCHEMA,
    "demo": DEMO_SCHEMA,
    "error": ERROR_SCHEMA,
}
