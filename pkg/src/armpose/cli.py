"""The ``armpose`` command: dataset generation, solving, refinement,
evaluation and reaching experiments.

Exit codes: 0 success, 1 domain error (structured JSON on stderr), 2 usage.
A config file of ``key = value`` lines (JSON-literal values, ``#`` comments)
supplies defaults for the chosen subcommand; explicit flags win. The
``ARMPOSE_LOG`` environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import annotations
from .camera import Keypoints2D, load_intrinsics
from .control import run_reach_grid, target_grid, TaskSpec
from .errors import ArmPoseError, ParseError
from .kinematics import bundled_model_path, forward_kinematics, load_arm_model
from .metrics import evaluate_dataset, format_report
from .refine import export_pseudo_dataset, refine_batch
from .solver import SolveResult, SolverOptions, solve_pose, solve_pose_weak
from .synth import NoiseSpec, SampleRanges, generate_dataset
from .util import dump_json

_DEFAULT_INTRINSICS = os.path.join(os.path.dirname(__file__), "data",
                                   "intrinsics_256.json")


def _parse_config(path):
    """``key = value`` lines; values are JSON literals with a bare-string
    fallback; ``#`` starts a comment; keys use flag names (dashes ok)."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ParseError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = line.partition("=")
                key = key.strip().replace("-", "_")
                value = value.strip()
                try:
                    out[key] = json.loads(value)
                except json.JSONDecodeError:
                    out[key] = value
    except OSError as exc:
        raise ParseError(f"cannot read config {path!r}: {exc}") from exc
    return out


def _parse_noise(text) -> NoiseSpec:
    """Inline JSON object or a path to a JSON file."""
    if text is None:
        return NoiseSpec()
    try:
        if text.lstrip().startswith("{"):
            raw = json.loads(text)
        else:
            with open(text, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        return NoiseSpec(**raw)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ParseError(f"bad noise spec {text!r}: {exc}") from exc


def _load_keypoints(path, model) -> Keypoints2D:
    """Accepts a full annotation file or a bare keypoints object with
    ``points`` (17x2), optional ``confidence`` and ``visible`` arrays."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read keypoints {path!r}: {exc}") from exc
    if "keypoints2d" in raw:
        return annotations.keypoints2d_from_list(model, raw["keypoints2d"])
    try:
        pts = np.asarray(raw["points"], dtype=float)
        conf = np.asarray(raw.get("confidence", np.ones(len(pts))), dtype=float)
        vis = np.asarray(raw.get("visible", np.ones(len(pts), dtype=bool)))
        return Keypoints2D(pts, conf, vis)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"keypoints file {path!r} does not match the schema: "
                         f"{exc}") from exc


def _solver_options(args) -> SolverOptions:
    return SolverOptions(confidence_threshold=args.xi, restarts=args.restarts,
                         seed=args.seed, workers=args.workers)


def _result_json(res: SolveResult, model) -> dict:
    return {
        "pose": annotations.pose_to_dict(res.pose),
        "residual": res.residual,
        "inlier_mask": [bool(v) for v in res.inlier_mask],
        "iterations_used": res.iterations_used,
        "restarts_used": res.restarts_used,
        "scale": res.scale,
        "warnings": list(res.warnings),
        "y_refined": annotations.keypoints2d_to_list(model, res.y_refined),
        "keypoints3d": annotations.keypoints3d_to_list(model, res.z),
    }


def _emit(payload, out=None):
    text = dump_json(payload)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)


# -- subcommands ----------------------------------------------------------------


def _cmd_synth(args):
    model = load_arm_model(args.model)
    intr = load_intrinsics(args.intrinsics)
    manifest = generate_dataset(args.n, args.seed, SampleRanges(),
                                _parse_noise(args.noise), args.out, model, intr,
                                train_frac=args.train_frac)
    _emit(manifest)
    return 0


def _cmd_solve(args):
    model = load_arm_model(args.model)
    y = _load_keypoints(args.keypoints, model)
    opts = _solver_options(args)
    if args.weak:
        res = solve_pose_weak(y, args.scale_prior, model, opts)
    else:
        intr = load_intrinsics(args.intrinsics)
        res = solve_pose(y, intr, model, opts)
    _emit(_result_json(res, model), args.out)
    return 0


def _cmd_refine(args):
    model = load_arm_model(args.model)
    intr = load_intrinsics(args.intrinsics)
    records, skipped = refine_batch(args.heatmaps, intr, model,
                                    _solver_options(args))
    export_pseudo_dataset(records, args.out, model, intr, skipped=skipped)
    _emit({"written": len(records), "skipped": skipped,
           "suggested_synth_real_ratio": [6, 4]})
    return 0


def _cmd_eval(args):
    model = load_arm_model(args.model)
    report = evaluate_dataset(args.pred, args.gt, model, alpha=args.alpha,
                              visible_only=args.visible_only)
    if args.table:
        sys.stdout.write(format_report(report) + "\n")
    else:
        _emit(report.to_dict(), args.out)
    return 0


def _cmd_reach(args):
    model = load_arm_model(args.model)
    if args.targets == "grid":
        tasks = None
    else:
        try:
            with open(args.targets, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
            tasks = [TaskSpec(target=tuple(t["target"]),
                              success_radius=t.get("success_radius", 3.0),
                              max_steps=t.get("max_steps", 50),
                              measure=t.get("measure", "horizontal"))
                     for t in raw]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"bad targets file {args.targets!r}: {exc}") from exc
    kwargs = {}
    if args.pose_source == "solver":
        kwargs["intr"] = load_intrinsics(args.intrinsics)
        kwargs["noise"] = _parse_noise(args.noise)
    summary = run_reach_grid(model, args.pose_source, n_seeds=args.seeds,
                             tasks=tasks, **kwargs)
    _emit(summary, args.out)
    return 0


def _cmd_demo(args):
    """End-to-end loop: synth -> refine -> eval -> reach, one summary JSON."""
    model = load_arm_model(args.model)
    intr = load_intrinsics(args.intrinsics)
    data_dir = os.path.join(args.out, "synth")
    refined_dir = os.path.join(args.out, "refined")
    noise = _parse_noise(args.noise)
    manifest = generate_dataset(args.n, args.seed, SampleRanges(), noise,
                                data_dir, model, intr)
    records, skipped = refine_batch(data_dir, intr, model,
                                    SolverOptions(seed=args.seed))
    export_pseudo_dataset(records, refined_dir, model, intr, skipped=skipped)
    report = evaluate_dataset(refined_dir, data_dir, model)
    reach_gt = run_reach_grid(model, "gt", n_seeds=2)
    reach_solver = run_reach_grid(model, "solver", n_seeds=2, intr=intr,
                                  noise=noise)
    _emit({
        "synth": manifest,
        "refine": {"written": len(records), "skipped": skipped,
                   "suggested_synth_real_ratio": [6, 4]},
        "eval": report.to_dict(),
        "reach_gt": reach_gt,
        "reach_solver": reach_solver,
    })
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="armpose",
        description="Pose recovery and control for a low-cost 4-joint arm.")
    parser.add_argument("--version", action="version", version="%(prog)s 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, intrinsics=True, out_dir=False):
        p.add_argument("--model", default=bundled_model_path(),
                       help="arm model JSON (default: bundled owi535)")
        if intrinsics:
            p.add_argument("--intrinsics", default=_DEFAULT_INTRINSICS,
                           help="camera intrinsics JSON")
        p.add_argument("--config", help="key = value defaults file")
        p.add_argument("--workers", type=int, default=1,
                       help="solver restart threads (results are identical)")
        if out_dir:
            p.add_argument("--out", required=True, help="output directory")
        else:
            p.add_argument("--out", help="also write the JSON output here")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p, out_dir=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--noise", help="noise spec JSON (inline or path)")
    p.add_argument("--train-frac", type=float, default=0.9)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("solve", help="recover the pose from 2D keypoints")
    common(p)
    p.add_argument("--keypoints", required=True)
    p.add_argument("--xi", type=float, default=0.3,
                   help="confidence gate (default 0.3)")
    p.add_argument("--restarts", type=int, default=16)
    p.add_argument("--weak", action="store_true",
                   help="weak-perspective mode (unknown intrinsics)")
    p.add_argument("--scale-prior", type=float,
                   help="pixels-per-cm prior for weak mode")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("refine", help="heatmaps -> refined pseudo-labels")
    common(p, out_dir=True)
    p.add_argument("--heatmaps", required=True, help="directory of hm_*.hmap")
    p.add_argument("--xi", type=float, default=0.3)
    p.add_argument("--restarts", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p, intrinsics=False)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--visible-only", action="store_true")
    p.add_argument("--table", action="store_true",
                   help="human-readable table instead of JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("reach", help="run reaching episodes")
    common(p)
    p.add_argument("--targets", default="grid",
                   help="'grid' (9 paper targets) or a JSON file")
    p.add_argument("--pose-source", choices=("gt", "solver"), default="gt")
    p.add_argument("--seeds", type=int, default=8, help="episodes per target")
    p.add_argument("--noise", help="noise spec for the solver source")
    p.set_defaults(func=_cmd_reach)

    p = sub.add_parser("demo", help="end-to-end: synth, refine, eval, reach")
    common(p, out_dir=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--noise", help="noise spec JSON (inline or path)")
    p.set_defaults(func=_cmd_demo)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ARMPOSE_LOG", "WARNING").upper())
    parser = build_parser()
    args, _ = parser.parse_known_args(argv)
    try:
        if getattr(args, "config", None):
            # apply config values as subcommand defaults; explicit flags win
            cfg = _parse_config(args.config)
            sub_map = parser._subparsers._group_actions[0]._name_parser_map
            sp = sub_map[args.command]
            known = {a.dest for a in sp._actions}
            unknown = sorted(set(cfg) - known)
            if unknown:
                parser.error(f"config keys not understood by {args.command}: "
                             f"{', '.join(unknown)}")
            sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
        return args.func(args)
    except ArmPoseError as exc:
        sys.stderr.write(dump_json({"error": exc.code, "message": str(exc)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
