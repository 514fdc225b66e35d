"""Pseudo-label refinement: heatmaps in, geometry-consistent labels out.

One record per image: peak extraction, confidence gating, geometric fit,
then a single robust demote-and-refit pass. A gated or demoted keypoint's
refined location is the reprojection of the fitted pose, so every exported
label satisfies the projection equation exactly. Fine-tuning the upstream
detector happens outside this package; the exported annotation files are
its training set.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from . import annotations
from .camera import CameraIntrinsics, Keypoints2D, PoseVector
from .errors import ArmPoseError, NoConvergenceError
from .heatmaps import HeatmapSet, heatmap_argmax, read_heatmaps
from .kinematics import ArmModel, forward_kinematics
from .solver import (SolveResult, SolverOptions, solve_pose,
                     solve_pose_candidates)
from .util import dump_json

log = logging.getLogger(__name__)

DEMOTE_FACTOR = 3.0    # residual cutoff: 3x the median inlier residual ...
DEMOTE_FLOOR_PX = 3.0  # ... but never below this (median can sit at the
                       # sub-pixel quantization level, and a bare 3x rule
                       # then demotes healthy points; losing, say, the grip
                       # tips makes the wrist unobservable)
CONSENSUS_PX = 3.0     # a detection agreeing with a fit to within this is a vote
CANDIDATE_BASINS = 4   # demote-refit chains started from distinct minima

# the external trainer's suggested synthetic:real mixing ratio, advisory only
SUGGESTED_MIX_RATIO = (6, 4)


@dataclass(frozen=True)
class PseudoLabelRecord:
    image_id: str
    y_refined: Keypoints2D      # all 17 keypoints, geometry-consistent
    pose: PoseVector
    residual: float             # px^2 over the final inlier mask
    inlier_mask: np.ndarray     # (17,) bool, after robust demotion
    meta: dict                  # argmax keypoints, demoted ids, solver stats


def _demote_refit(y, res, intr, model, opts, max_rounds=6):
    """Robust trimming: repeatedly demote the worst confident point whose
    residual exceeds the cutoff (3x median inlier residual, floored) and
    refit in-basin.

    One point per round, because a single outlier can drag the fit enough to
    push healthy points past the cutoff too; after the true outlier goes,
    the refit pulls them back inside.
    """
    mask = res.inlier_mask.copy()
    demoted = np.zeros(len(mask), dtype=bool)
    refit_opts = replace(opts, restarts=0)
    for _ in range(max_rounds):
        if int(mask.sum()) <= opts.min_inliers:
            break
        d = np.linalg.norm(y.points - res.y_refined.points, axis=1)
        med = float(np.median(d[mask]))
        cutoff = max(DEMOTE_FACTOR * med, DEMOTE_FLOOR_PX)
        over = mask & (d > cutoff)
        if not over.any():
            break
        worst = int(np.argmax(np.where(over, d, -np.inf)))
        keep = mask.copy()
        keep[worst] = False
        y_kept = Keypoints2D(y.points, np.where(keep, y.confidence, 0.0),
                             y.visible)
        try:
            res = solve_pose(y_kept, intr, model, refit_opts,
                             warm_start=res.pose)
        except NoConvergenceError:
            # wrong basins can be too ill-conditioned to refit; consensus
            # will discard this chain anyway
            break
        mask = keep
        demoted[worst] = True
    return res, mask, demoted


def _consensus(y, res, mask_conf) -> int:
    d = np.linalg.norm(y.points - res.y_refined.points, axis=1)
    return int(((d <= CONSENSUS_PX) & mask_conf).sum())


def refine_labels(h: HeatmapSet, intr: CameraIntrinsics, model: ArmModel,
                  opts: SolverOptions | None = None,
                  image_id: str = "") -> PseudoLabelRecord:
    """Full per-image pipeline: argmax -> gate -> fit -> demote -> refit.

    Outliers can make the lowest least-squares loss belong to a wrong pose,
    so the demote-refit pass runs from every distinct multi-start minimum
    and the winner is the chain most detections agree with (largest count of
    confident points within CONSENSUS_PX of the reprojection; residual and
    basin order break ties).
    """
    opts = opts or SolverOptions()
    y = heatmap_argmax(h)
    candidates = solve_pose_candidates(y, intr, model, opts,
                                       top_k=CANDIDATE_BASINS)
    conf_mask = candidates[0].inlier_mask
    chains = []
    for c_idx, cand in enumerate(candidates):
        final, mask, demoted = _demote_refit(y, cand, intr, model, opts)
        votes = _consensus(y, final, conf_mask)
        chains.append((-votes, final.residual, c_idx, final, mask, demoted))
    chains.sort(key=lambda t: t[:3])
    _, _, c_idx, final, mask, demoted = chains[0]
    return PseudoLabelRecord(
        image_id=image_id,
        y_refined=final.y_refined,
        pose=final.pose,
        residual=final.residual,
        inlier_mask=mask,
        meta={
            "argmax_points": y.points.tolist(),
            "argmax_confidence": y.confidence.tolist(),
            "demoted": [model.keypoint_ids[k] for k in np.where(demoted)[0]]
            if demoted.any() else [],
            "basin": c_idx,
            "consensus": -chains[0][0],
            "iterations_used": final.iterations_used,
            "restarts_used": final.restarts_used,
        },
    )


def refine_batch(heatmap_dir, intr: CameraIntrinsics, model: ArmModel,
                 opts: SolverOptions | None = None
                 ) -> tuple[list[PseudoLabelRecord], list[dict]]:
    """Refines every ``hm_*.hmap`` file in a directory.

    Records that fail (too few confident peaks, no convergence) are skipped
    and logged; the skip list is returned alongside the good records.
    """
    opts = opts or SolverOptions()
    names = sorted(f for f in os.listdir(heatmap_dir)
                   if f.startswith("hm_") and f.endswith(".hmap"))
    records, skipped = [], []
    for name in names:
        image_id = name[3:-5]
        try:
            h = read_heatmaps(os.path.join(heatmap_dir, name))
            records.append(refine_labels(h, intr, model, opts, image_id=image_id))
        except ArmPoseError as exc:
            log.warning("skipping %s: %s", image_id, exc)
            skipped.append({"image_id": image_id, "reason": exc.code,
                            "message": str(exc)})
    return records, skipped


def export_pseudo_dataset(records, out_dir, model: ArmModel,
                          intr: CameraIntrinsics, skipped=()) -> int:
    """Writes one annotation JSON per record plus a manifest; returns the
    number of annotation files written."""
    os.makedirs(out_dir, exist_ok=True)
    for rec in records:
        z = forward_kinematics(model, rec.pose.joints)
        annotations.save_annotation(
            os.path.join(out_dir, f"ann_{rec.image_id}.json"),
            model, rec.image_id, intr, rec.pose, rec.y_refined, z)
    manifest = {
        "written": len(records),
        "skipped": list(skipped),
        "suggested_synth_real_ratio": list(SUGGESTED_MIX_RATIO),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        dump_json(manifest, fh)
    return len(records)
