"""Ground-truth scene sampling and synthetic heatmap rendering.

Stands in for the image pipeline: scenes are (pose, 3D keypoints, 2D
keypoints) triples with the camera placed on a look-at sphere around the
arm, and heatmaps are Gaussian blobs with configurable jitter, outlier and
dropout noise emulating what a 2D detector would emit.

All randomness flows through counter-based substreams keyed by
(seed, purpose, index), so generation is reproducible bit-for-bit and safe
to parallelize over scene indices.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import annotations
from .camera import (CameraIntrinsics, Keypoints2D, PoseVector, look_at_pose,
                     project)
from .errors import BehindCameraError, SamplingExhaustedError
from .heatmaps import HeatmapSet, write_heatmaps
from .kinematics import ArmModel, JointAngles, Keypoints3D, forward_kinematics
from .util import dump_json, substream

_SCENE_TAG = 0x5C31
_NOISE_TAG = 0x401E

DEFAULT_GRID = 64
DEFAULT_CROP = 256


@dataclass(frozen=True)
class SampleRanges:
    """Scene randomization intervals (degrees / cm)."""

    cam_az: tuple[float, float] = (0.0, 45.0)
    cam_el: tuple[float, float] = (30.0, 60.0)
    cam_roll: tuple[float, float] = (-30.0, 30.0)
    cam_distance: tuple[float, float] = (40.0, 90.0)
    joints: tuple[tuple[float, float], ...] | None = None  # None: model limits

    def __post_init__(self):
        pairs = [self.cam_az, self.cam_el, self.cam_roll, self.cam_distance]
        if self.joints is not None:
            pairs.extend(self.joints)
        for lo, hi in pairs:
            if not hi >= lo:
                raise ValueError(f"interval [{lo}, {hi}] is not ordered")

    def joint_limits(self, model: ArmModel) -> np.ndarray:
        if self.joints is None:
            return model.limits_deg
        return np.asarray(self.joints, dtype=float)


@dataclass(frozen=True)
class NoiseSpec:
    """Detector-noise stand-in applied when rendering heatmaps."""

    pixel_sigma: float = 2.0        # Gaussian jitter of blob centers, image px
    blob_sigma: float = 1.5         # blob width, heatmap grid cells
    outlier_prob: float = 0.05      # per keypoint: displace blob far away
    outlier_shift_min: float = 20.0  # minimum outlier displacement, image px
    dropout_prob: float = 0.05      # per keypoint: zero the whole map
    seed: int = 0

    def __post_init__(self):
        for p in (self.outlier_prob, self.dropout_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.pixel_sigma < 0 or self.blob_sigma < 0:
            raise ValueError("sigmas must be non-negative")

    @staticmethod
    def quiet() -> "NoiseSpec":
        return NoiseSpec(pixel_sigma=0.0, outlier_prob=0.0, dropout_prob=0.0)


def sample_scene(seed: int, ranges: SampleRanges, model: ArmModel,
                 intr: CameraIntrinsics, *, index: int = 0,
                 min_in_image: int = 12, max_attempts: int = 1000,
                 ) -> tuple[PoseVector, Keypoints3D, Keypoints2D]:
    """Uniform scene draw, rejected until every keypoint is in front of the
    camera and at least `min_in_image` project inside the image."""
    rng = substream(seed, _SCENE_TAG, index)
    limits = ranges.joint_limits(model)
    target = model.rest.mean(axis=0)
    for _ in range(max_attempts):
        az = rng.uniform(*ranges.cam_az)
        el = rng.uniform(*ranges.cam_el)
        roll = rng.uniform(*ranges.cam_roll)
        dist = rng.uniform(*ranges.cam_distance)
        joints = JointAngles.from_array(rng.uniform(limits[:, 0], limits[:, 1]))
        pose = look_at_pose(az, el, roll, dist, target=target, joints=joints)
        z = forward_kinematics(model, joints)
        try:
            res = project(intr, pose, z)
        except BehindCameraError:
            continue
        if int(res.points2d.visible.sum()) < min_in_image:
            continue
        return pose, z, res.points2d
    raise SamplingExhaustedError(
        f"no acceptable scene in {max_attempts} draws (seed={seed}, index={index})")


def render_heatmaps(y: Keypoints2D, noise: NoiseSpec, *, index: int = 0,
                    grid: int = DEFAULT_GRID, crop_size: int = DEFAULT_CROP,
                    crop_offset: tuple[int, int] = (0, 0)) -> HeatmapSet:
    """One normalized Gaussian blob per keypoint at the (noised) location.

    Per keypoint the stream yields, in order: dropout draw, 2 jitter draws,
    outlier draw, outlier direction, outlier magnitude — drawn unconditionally
    so configurations with different probabilities stay aligned.
    """
    rng = substream(noise.seed, _NOISE_TAG, index)
    K = len(y.points)
    maps = np.zeros((K, grid, grid), dtype=np.float32)
    scale = grid / crop_size
    sig = noise.blob_sigma
    win = max(2, int(math.ceil(4.0 * max(sig, 0.5))))
    for k in range(K):
        drop_u = rng.uniform()
        jitter = rng.normal(0.0, 1.0, size=2)
        out_u = rng.uniform()
        out_ang = rng.uniform(0.0, 2.0 * math.pi)
        out_mag = rng.uniform(1.0, 2.0)
        if drop_u < noise.dropout_prob:
            continue
        center = y.points[k] + noise.pixel_sigma * jitter
        if out_u < noise.outlier_prob:
            center = center + noise.outlier_shift_min * out_mag * np.array(
                [math.cos(out_ang), math.sin(out_ang)])
        gx = (center[0] - crop_offset[0]) * scale
        gy = (center[1] - crop_offset[1]) * scale
        x0 = max(0, int(math.floor(gx)) - win)
        x1 = min(grid - 1, int(math.ceil(gx)) + win)
        y0 = max(0, int(math.floor(gy)) - win)
        y1 = min(grid - 1, int(math.ceil(gy)) + win)
        if x1 < 0 or y1 < 0 or x0 > grid - 1 or y0 > grid - 1 or x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1)
        ys = np.arange(y0, y1 + 1)
        d2 = (xs[None, :] - gx) ** 2 + (ys[:, None] - gy) ** 2
        maps[k, y0:y1 + 1, x0:x1 + 1] = np.exp(-d2 / (2.0 * sig * sig))
    return HeatmapSet(maps, crop_size, crop_offset)


def split_indices(n: int, train_frac: float = 0.9) -> tuple[list[int], list[int]]:
    """Deterministic index split: the first round(n * frac) scenes train."""
    n_train = int(round(n * train_frac))
    n_train = min(max(n_train, 0), n)
    return list(range(n_train)), list(range(n_train, n))


def generate_dataset(n: int, seed: int, ranges: SampleRanges, noise: NoiseSpec,
                     out_dir, model: ArmModel, intr: CameraIntrinsics,
                     train_frac: float = 0.9) -> dict:
    """Writes n scenes (annotation JSON + heatmap file each) and a manifest;
    returns the manifest dict."""
    os.makedirs(out_dir, exist_ok=True)
    ids = []
    for i in range(n):
        pose, z, y = sample_scene(seed, ranges, model, intr, index=i)
        image_id = f"{i:06d}"
        annotations.save_annotation(
            os.path.join(out_dir, f"ann_{image_id}.json"),
            model, image_id, intr, pose, y, z)
        hm = render_heatmaps(y, noise, index=i,
                             crop_size=max(intr.width, intr.height))
        write_heatmaps(os.path.join(out_dir, f"hm_{image_id}.hmap"), hm)
        ids.append(image_id)
    train_idx, val_idx = split_indices(n, train_frac)
    manifest = {
        "n": n,
        "seed": seed,
        "train_frac": train_frac,
        "ranges": asdict(ranges),
        "noise": asdict(noise),
        "split": {"train": [ids[i] for i in train_idx],
                  "val": [ids[i] for i in val_idx]},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        dump_json(manifest, fh)
    return manifest


def noise_with_index_seed(noise: NoiseSpec, seed: int) -> NoiseSpec:
    return replace(noise, seed=seed)
