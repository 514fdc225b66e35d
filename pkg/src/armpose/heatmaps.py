"""Per-keypoint score maps: the ingestion boundary for detector output.

Binary ``.hmap`` format (all little-endian):

    magic   4 bytes  b"HMAP"
    version u16      1
    K       u16      number of maps (17)
    H, W    u16 u16  grid size (default 64 x 64)
    crop    u16      source crop edge in pixels (default 256)
    offx    i32      crop offset x in the original image
    offy    i32      crop offset y
    data    K*H*W    float32, row-major per map, maps concatenated

Grid <-> pixel mapping: pixel = grid * (crop / W) + offset, i.e. grid cell g
covers original-image pixel g * s with s = crop / W (no half-cell shift).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .camera import Keypoints2D
from .errors import ParseError
from .kinematics import NUM_KEYPOINTS

MAGIC = b"HMAP"
VERSION = 1
_HEADER = struct.Struct("<4sHHHHHii")


@dataclass(frozen=True)
class HeatmapSet:
    maps: np.ndarray            # (17, H, W) float32 scores
    crop_size: int = 256        # source crop edge, pixels
    crop_offset: tuple[int, int] = (0, 0)

    def __post_init__(self):
        m = np.array(self.maps, dtype=np.float32, order="C")
        if m.ndim != 3 or m.shape[0] != NUM_KEYPOINTS:
            raise ValueError(f"expected ({NUM_KEYPOINTS}, H, W) maps, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("non-finite heatmap scores")
        m.flags.writeable = False
        object.__setattr__(self, "maps", m)
        object.__setattr__(self, "crop_offset",
                           (int(self.crop_offset[0]), int(self.crop_offset[1])))


def write_heatmaps(path, h: HeatmapSet) -> None:
    K, H, W = h.maps.shape
    header = _HEADER.pack(MAGIC, VERSION, K, H, W, h.crop_size,
                          h.crop_offset[0], h.crop_offset[1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(h.maps, dtype="<f4").tobytes())


def read_heatmaps(path) -> HeatmapSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ParseError(f"{path!r}: truncated heatmap file")
    magic, version, K, H, W, crop, offx, offy = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ParseError(f"{path!r}: bad magic {magic!r}")
    if version != VERSION:
        raise ParseError(f"{path!r}: unsupported version {version}")
    expected = _HEADER.size + 4 * K * H * W
    if len(blob) != expected:
        raise ParseError(f"{path!r}: expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    maps = data.reshape(K, H, W).astype(np.float32)
    return HeatmapSet(maps, crop, (offx, offy))


def heatmap_argmax(h: HeatmapSet) -> Keypoints2D:
    """Peak location and confidence of every map, in original-image pixels.

    The integer peak gets a quarter-cell shift toward the larger of its two
    axis neighbors (per axis; no shift on ties or at a missing neighbor pair).
    A flat map yields the grid center; confidence is the peak value clamped
    to [0, 1], so an all-zero map gates out at any positive threshold.
    """
    K, H, W = h.maps.shape
    sx = h.crop_size / W
    sy = h.crop_size / H
    pts = np.empty((K, 2))
    conf = np.empty(K)
    for k in range(K):
        m = h.maps[k]
        peak = float(m.max())
        if peak == float(m.min()):  # flat map: no information
            gx, gy = (W - 1) / 2.0, (H - 1) / 2.0
        else:
            gy, gx = np.unravel_index(int(np.argmax(m)), (H, W))
            right = m[gy, gx + 1] if gx + 1 < W else -np.inf
            left = m[gy, gx - 1] if gx - 1 >= 0 else -np.inf
            below = m[gy + 1, gx] if gy + 1 < H else -np.inf
            above = m[gy - 1, gx] if gy - 1 >= 0 else -np.inf
            gx = gx + 0.25 * (1 if right > left else -1 if left > right else 0)
            gy = gy + 0.25 * (1 if below > above else -1 if above > below else 0)
        pts[k, 0] = gx * sx + h.crop_offset[0]
        pts[k, 1] = gy * sy + h.crop_offset[1]
        conf[k] = min(max(peak, 0.0), 1.0)
    return Keypoints2D(pts, conf, np.ones(K, dtype=bool))
