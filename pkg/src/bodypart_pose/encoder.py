"""Ground-truth heatmap rendering for keypoints and body parts.

Keypoint channels hold truncated, unnormalised Gaussians around every labelled
keypoint. Body-part channels hold the same profile as a function of the
distance to the limb segment (a capsule), so the response stays at 1 along the
whole limb axis and decays away from it. Overlapping persons combine by
per-pixel maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimMismatch, IndivisibleDims
from .skeleton import Pose, SkeletonSpec, map_to_image, validate_skeleton

NUM_SCALES = 5


@dataclass(frozen=True)
class EncoderConfig:
    sigma_kp: float = 9.0
    sigma_part: float = 7.0
    thre: float = 0.01
    stride: float = 4.0
    scale_count: int = NUM_SCALES
    width: int = 96
    height: int = 96

    def __post_init__(self):
        if not (self.sigma_kp > 0 and self.sigma_part > 0):
            raise ConfigError("sigma_kp and sigma_part must be positive")
        if not (0 < self.thre < 1):
            raise ConfigError(f"thre must lie in (0, 1), got {self.thre}")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.scale_count < 1 or self.width < 1 or self.height < 1:
            raise ConfigError("scale_count and grid dims must be positive")

    @property
    def kp_radius(self) -> float:
        return truncation_radius(self.sigma_kp, self.thre)

    @property
    def part_radius(self) -> float:
        return truncation_radius(self.sigma_part, self.thre)


@dataclass(frozen=True)
class HeatmapStack:
    """(C, H, W) float64 score grid; keypoint channels first, then body parts."""

    data: np.ndarray
    stride: float

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise DimMismatch(f"heatmap data must be 3-D (C, H, W), got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


def truncation_radius(sigma: float, thre: float) -> float:
    """Distance at which ``exp(-r^2 / 2 sigma^2)`` falls to ``thre``."""
    if not (0 < thre < 1):
        raise ConfigError(f"thre must lie in (0, 1), got {thre}")
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    return sigma * math.sqrt(-2.0 * math.log(thre))


def _cell_centres(width: int, height: int, stride: float):
    xs, ys = map_to_image(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64), stride)
    return xs[None, :], ys[:, None]


def _truncate(channel: np.ndarray, thre: float) -> np.ndarray:
    channel[channel < thre] = 0.0
    return channel


def _point_sq_dist(xs, ys, px, py):
    dx = xs - px
    dy = ys - py
    return dx * dx + dy * dy


def _segment_sq_dist(xs, ys, ax, ay, bx, by):
    abx = bx - ax
    aby = by - ay
    len2 = abx * abx + aby * aby
    if len2 == 0.0:
        return _point_sq_dist(xs, ys, ax, ay)
    t = ((xs - ax) * abx + (ys - ay) * aby) / len2
    t = np.clip(t, 0.0, 1.0)
    dx = xs - (ax + t * abx)
    dy = ys - (ay + t * aby)
    return dx * dx + dy * dy


def encode_keypoint_channel(poses: Sequence[Pose], kp_index: int, cfg: EncoderConfig,
                            width: int, height: int, stride: float | None = None) -> np.ndarray:
    stride = cfg.stride if stride is None else stride
    xs, ys = _cell_centres(width, height, stride)
    out = np.zeros((height, width))
    denom = 2.0 * cfg.sigma_kp * cfg.sigma_kp
    for pose in poses:
        x, y, v = pose.keypoints[kp_index]
        if v <= 0:
            continue
        g = np.exp(-_point_sq_dist(xs, ys, x, y) / denom)
        np.maximum(out, g, out=out)
    return _truncate(out, cfg.thre)


def encode_part_channel(poses: Sequence[Pose], edge, cfg: EncoderConfig,
                        width: int, height: int, stride: float | None = None) -> np.ndarray:
    """Capsule Gaussian for one limb; ``edge`` is an :class:`Edge` or an (a, b) pair."""
    a, b = (edge.a, edge.b) if hasattr(edge, "a") else edge
    stride = cfg.stride if stride is None else stride
    xs, ys = _cell_centres(width, height, stride)
    out = np.zeros((height, width))
    denom = 2.0 * cfg.sigma_part * cfg.sigma_part
    for pose in poses:
        ax, ay, va = pose.keypoints[a]
        bx, by, vb = pose.keypoints[b]
        if va <= 0 or vb <= 0:
            continue
        g = np.exp(-_segment_sq_dist(xs, ys, ax, ay, bx, by) / denom)
        np.maximum(out, g, out=out)
    return _truncate(out, cfg.thre)


def encode_stack(poses: Sequence[Pose], spec: SkeletonSpec, cfg: EncoderConfig,
                 width: int | None = None, height: int | None = None) -> HeatmapStack:
    validate_skeleton(spec)
    width = cfg.width if width is None else width
    height = cfg.height if height is None else height
    k = spec.num_keypoints
    for p in poses:
        if p.num_keypoints != k:
            raise DimMismatch(f"pose has {p.num_keypoints} keypoints, skeleton has {k}")
    data = np.zeros((spec.num_channels, height, width))
    for j in range(k):
        data[j] = encode_keypoint_channel(poses, j, cfg, width, height)
    for i, edge in enumerate(spec.edges):
        data[k + i] = encode_part_channel(poses, edge, cfg, width, height)
    return HeatmapStack(data, cfg.stride)


def downsample_stack(stack: HeatmapStack, factor: int) -> HeatmapStack:
    """Average-pool non-overlapping ``factor`` x ``factor`` blocks."""
    if factor < 1:
        raise IndivisibleDims("factor must be >= 1")
    c, h, w = stack.shape
    if h % factor or w % factor:
        raise IndivisibleDims(f"grid {h}x{w} is not divisible by {factor}")
    if factor == 1:
        return HeatmapStack(stack.data.copy(), stack.stride)
    blocks = stack.data.reshape(c, h // factor, factor, w // factor, factor)
    return HeatmapStack(blocks.mean(axis=(2, 4)), stack.stride * factor)


def build_pyramid(stack: HeatmapStack, scale_count: int = NUM_SCALES) -> list[HeatmapStack]:
    """Supervision targets at strides R, 2R, ..., 2^(n-1) R, finest first."""
    return [downsample_stack(stack, 2 ** i) for i in range(scale_count)]


def build_mask(regions: Sequence[Sequence[int]], width: int, height: int) -> np.ndarray:
    """Binary (H, W) mask, 0 inside each half-open cell rectangle (x0, y0, x1, y1)."""
    mask = np.ones((height, width), dtype=np.float64)
    for x0, y0, x1, y1 in regions:
        x0, x1 = max(int(x0), 0), min(int(x1), width)
        y0, y1 = max(int(y0), 0), min(int(y1), height)
        if x1 > x0 and y1 > y0:
            mask[y0:y1, x0:x1] = 0.0
    return mask


def unannotated_regions(poses: Sequence[Pose], missing: Sequence[bool], stride: float,
                        margin: float = 0.0) -> list[tuple[int, int, int, int]]:
    """Cell rectangles covering the keypoint boxes of persons flagged as unannotated."""
    regions = []
    for pose, flag in zip(poses, missing):
        if not flag or not pose.labelled.any():
            continue
        xy = pose.xy[pose.labelled]
        lo = xy.min(axis=0) - margin
        hi = xy.max(axis=0) + margin
        x0, y0 = np.floor((lo + 0.5) / stride).astype(int)
        x1, y1 = np.floor((hi + 0.5) / stride).astype(int) + 1
        regions.append((int(x0), int(y0), int(x1), int(y1)))
    return regions


def mask_pyramid(mask: np.ndarray, scale_count: int = NUM_SCALES) -> list[np.ndarray]:
    """Coarse masks by block minimum: a coarse cell is ignored if any fine cell is."""
    h, w = mask.shape
    out = []
    for i in range(scale_count):
        f = 2 ** i
        if h % f or w % f:
            raise IndivisibleDims(f"mask {h}x{w} is not divisible by {f}")
        out.append(mask.reshape(h // f, f, w // f, f).min(axis=(1, 3)))
    return out
