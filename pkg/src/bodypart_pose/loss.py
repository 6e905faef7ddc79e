"""Focal L2 loss over heatmap stacks, its analytic gradient, and the
multi-scale, multi-stage total.

The per-pixel term is ``w * (s - g)^2 * (1 - Sd)^2`` where the modulation
``Sd`` is ``s - alpha`` on foreground pixels (``g > thre``) and
``1 - s - beta`` elsewhere, and ``w = (eta * [keypoint channel] + 1) * mask``.
Predictions are deliberately not clamped, so values slightly outside [0, 1]
keep a useful gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimMismatch

DEFAULT_SCALE_WEIGHTS = (1.0, 2.0, 4.0, 16.0, 64.0)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1
    beta: float = 0.02
    thre: float = 0.01
    eta: float = 2.0
    scale_weights: tuple = field(default=DEFAULT_SCALE_WEIGHTS)
    stages: int = 1

    def __post_init__(self):
        if not (self.alpha > self.beta > 0):
            raise ConfigError(f"need alpha > beta > 0, got alpha={self.alpha}, beta={self.beta}")
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")
        if not (0 < self.thre < 1):
            raise ConfigError("thre must lie in (0, 1)")
        weights = tuple(float(x) for x in self.scale_weights)
        if not weights or any(x <= 0 for x in weights):
            raise ConfigError("scale weights must all be positive")
        object.__setattr__(self, "scale_weights", weights)
        if self.stages < 1:
            raise ConfigError("stages must be >= 1")


def modulation(pred, gt, cfg: LossConfig):
    """Sd, chosen by the ground-truth branch; elementwise on arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    out = np.where(gt > cfg.thre, pred - cfg.alpha, 1.0 - pred - cfg.beta)
    return out if out.ndim else float(out)


def _arrays(pred, gt, mask):
    s = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if s.shape != g.shape or s.ndim != 3:
        raise DimMismatch(f"prediction {s.shape} and ground truth {g.shape} must be equal (C, H, W)")
    if mask is None:
        w = np.ones(s.shape[1:])
    else:
        w = np.asarray(mask, dtype=np.float64)
    if w.shape not in (s.shape, s.shape[1:]):
        raise DimMismatch(f"mask shape {w.shape} does not fit heatmaps {s.shape}")
    return s, g, w


def _weights(s, w, num_keypoints, cfg):
    if not 0 <= num_keypoints <= s.shape[0]:
        raise DimMismatch(f"num_keypoints={num_keypoints} out of range for {s.shape[0]} channels")
    chan = np.ones(s.shape[0])
    chan[:num_keypoints] += cfg.eta
    return chan[:, None, None] * w


def focal_l2_map(pred, gt, mask, cfg: LossConfig, num_keypoints: int) -> np.ndarray:
    """Per-pixel focal L2 terms, shape (C, H, W)."""
    s, g, w = _arrays(pred, gt, mask)
    scale = 1.0 - modulation(s, g, cfg)
    diff = s - g
    return _weights(s, w, num_keypoints, cfg) * diff * diff * scale * scale


def focal_l2(pred, gt, mask, cfg: LossConfig, num_keypoints: int) -> float:
    return float(focal_l2_map(pred, gt, mask, cfg, num_keypoints).sum())


def plain_l2_map(pred, gt, mask, cfg: LossConfig, num_keypoints: int) -> np.ndarray:
    """Same channel weighting and mask, without the focal scaling factor."""
    s, g, w = _arrays(pred, gt, mask)
    diff = s - g
    return _weights(s, w, num_keypoints, cfg) * diff * diff


def focal_l2_grad(pred, gt, mask, cfg: LossConfig, num_keypoints: int) -> np.ndarray:
    """d(focal_l2)/d(pred), with the ground truth (and so the branch) held fixed."""
    s, g, w = _arrays(pred, gt, mask)
    fg = g > cfg.thre
    # 1 - Sd and its derivative with respect to s
    scale = np.where(fg, 1.0 - s + cfg.alpha, s + cfg.beta)
    dscale = np.where(fg, -1.0, 1.0)
    diff = s - g
    return _weights(s, w, num_keypoints, cfg) * (
        2.0 * diff * scale * scale + 2.0 * diff * diff * scale * dscale
    )


def total_loss(preds: Sequence[Sequence], gts: Sequence, masks: Sequence | None,
               cfg: LossConfig, num_keypoints: int) -> float:
    """Weighted multi-scale loss summed over stages.

    ``preds[t][i]`` is the stage-t prediction at scale i (finest first),
    ``gts[i]`` and ``masks[i]`` the matching targets and masks.
    """
    lam = cfg.scale_weights
    if len(gts) != len(lam):
        raise DimMismatch(f"{len(gts)} ground-truth scales, {len(lam)} scale weights")
    if masks is not None and len(masks) != len(gts):
        raise DimMismatch("one mask per scale is required")
    norm = sum(lam)
    total = 0.0
    for stage in preds:
        if len(stage) != len(gts):
            raise DimMismatch(f"stage has {len(stage)} scales, expected {len(gts)}")
        terms = [
            lam[i] * focal_l2(stage[i], gts[i], None if masks is None else masks[i], cfg, num_keypoints)
            for i in range(len(gts))
        ]
        total += sum(terms) / norm
    return total


def total_from_scale_losses(fl: np.ndarray, weights: Sequence[float] = DEFAULT_SCALE_WEIGHTS) -> float:
    """Combine precomputed per-(stage, scale) losses ``fl[t, i]``."""
    fl = np.atleast_2d(np.asarray(fl, dtype=np.float64))
    lam = np.asarray(weights, dtype=np.float64)
    if fl.shape[1] != lam.size:
        raise DimMismatch(f"{fl.shape[1]} scale losses per stage, {lam.size} weights")
    return float(sum((fl[t] * lam).sum() / lam.sum() for t in range(fl.shape[0])))


def relative_error(analytic, numeric, floor: float = 1e-4):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients meaningful."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(pred, gt, mask, cfg: LossConfig, num_keypoints: int, step: float = 1e-5,
                   pixels=None) -> dict:
    """Compare :func:`focal_l2_grad` with central differences of :func:`focal_l2`.

    ``pixels`` is an optional iterable of (c, y, x) indices; all pixels by default.
    """
    s = np.array(getattr(pred, "data", pred), dtype=np.float64)
    grad = focal_l2_grad(s, gt, mask, cfg, num_keypoints)
    idx = list(np.ndindex(s.shape)) if pixels is None else [tuple(p) for p in pixels]
    worst = 0.0
    for p in idx:
        orig = s[p]
        s[p] = orig + step
        up = focal_l2(s, gt, mask, cfg, num_keypoints)
        s[p] = orig - step
        down = focal_l2(s, gt, mask, cfg, num_keypoints)
        s[p] = orig
        worst = max(worst, float(relative_error(grad[p], (up - down) / (2 * step))))
    return {
        "loss": focal_l2(s, gt, mask, cfg, num_keypoints),
        "max_grad_rel_err": worst,
        "pixels_checked": len(idx),
    }
