"""Object keypoint similarity and OKS-based AP / AR."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, NoLabeledKeypoints
from .skeleton import Pose

# Per-keypoint sigmas of the COCO benchmark; the falloff constant is 2 * sigma.
COCO_SIGMAS = (
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
)
COCO_FALLOFF = tuple(2 * s for s in COCO_SIGMAS)
DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class OksConfig:
    falloff: tuple = COCO_FALLOFF
    thresholds: tuple = DEFAULT_THRESHOLDS
    max_detections: int = 20

    def __post_init__(self):
        k = tuple(float(x) for x in self.falloff)
        th = tuple(float(x) for x in self.thresholds)
        if any(x <= 0 for x in k):
            raise ConfigError("falloff constants must be positive")
        if not th or any(not (0 < x <= 1) for x in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise ConfigError("thresholds must be strictly increasing within (0, 1]")
        if self.max_detections < 1:
            raise ConfigError("max_detections must be >= 1")
        object.__setattr__(self, "falloff", k)
        object.__setattr__(self, "thresholds", th)


def keypoint_box_area(gt: Pose) -> float:
    xy = gt.xy[gt.labelled]
    if len(xy) == 0:
        raise NoLabeledKeypoints("ground truth has no labelled keypoints")
    span = xy.max(axis=0) - xy.min(axis=0)
    return float(span[0] * span[1])


def oks(pred: Pose, gt: Pose, area: float | None = None, cfg: OksConfig | None = None) -> float:
    cfg = cfg or OksConfig()
    lab = gt.labelled
    if not lab.any():
        raise NoLabeledKeypoints("ground truth has no labelled keypoints")
    if area is None:
        area = keypoint_box_area(gt)
    # degenerate boxes (collinear keypoints) still need a positive scale
    area = max(area, np.finfo(float).eps)
    k = np.asarray(cfg.falloff[: gt.num_keypoints])
    d2 = ((pred.xy - gt.xy) ** 2).sum(axis=1)
    # keypoints the detector did not report count as infinitely far away
    d2 = np.where(pred.labelled, d2, np.inf)
    e = np.exp(-d2[lab] / (2.0 * area * k[lab] ** 2))
    return float(e.sum() / lab.sum())


def average_precision(tp: np.ndarray, num_gt: int) -> float:
    """Area under the monotone precision envelope of a ranked TP/FP sequence."""
    if num_gt == 0 or len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    recall = ctp / num_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    r = np.concatenate(([0.0], recall, [recall[-1]]))
    p = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    steps = np.nonzero(r[1:] != r[:-1])[0]
    return float(((r[steps + 1] - r[steps]) * p[steps + 1]).sum())


@dataclass
class MatchResult:
    gt_match: list  # per scene: detection index (or -1) per ground truth
    gt_oks: list
    det_matched: list  # per scene: bool per detection


@dataclass
class EvalReport:
    ap: float
    ar: float
    per_threshold: list = field(default_factory=list)
    num_gt: int = 0
    num_det: int = 0
    vacuous: bool = False

    def to_dict(self) -> dict:
        return {
            "AP": self.ap,
            "AR": self.ar,
            "per_threshold": self.per_threshold,
            "num_gt": self.num_gt,
            "num_det": self.num_det,
            "vacuous": self.vacuous,
        }


def _ranked(detections: Sequence[Sequence[Pose]], max_det: int):
    """(score, scene, index) for the top detections of every scene, best first."""
    ranked = []
    for s, dets in enumerate(detections):
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))[:max_det]
        ranked.extend((dets[i].score, s, i) for i in order)
    ranked.sort(key=lambda r: (-r[0], r[1], r[2]))
    return ranked


def match(detections: Sequence[Sequence[Pose]], ground_truths: Sequence[Sequence[Pose]],
          threshold: float, cfg: OksConfig | None = None, ious=None) -> tuple[list, MatchResult]:
    """Greedy one-to-one matching at one OKS threshold.

    Returns the ranked TP flags and the match bookkeeping.
    """
    cfg = cfg or OksConfig()
    if ious is None:
        ious = oks_tables(detections, ground_truths, cfg)
    gt_match = [[-1] * len(g) for g in ground_truths]
    gt_oks = [[0.0] * len(g) for g in ground_truths]
    det_matched = [[False] * len(d) for d in detections]
    tp = []
    for _, s, i in _ranked(detections, cfg.max_detections):
        table = ious[s]
        best, best_j = -1.0, -1
        for j in range(len(ground_truths[s])):
            if gt_match[s][j] >= 0:
                continue
            o = table[i, j]
            if o >= threshold and o > best:
                best, best_j = o, j
        if best_j >= 0:
            gt_match[s][best_j] = i
            gt_oks[s][best_j] = best
            det_matched[s][i] = True
        tp.append(best_j >= 0)
    return tp, MatchResult(gt_match, gt_oks, det_matched)


def oks_tables(detections, ground_truths, cfg: OksConfig):
    tables = []
    for dets, gts in zip(detections, ground_truths):
        t = np.zeros((len(dets), len(gts)))
        for j, g in enumerate(gts):
            area = keypoint_box_area(g)
            for i, d in enumerate(dets):
                t[i, j] = oks(d, g, area, cfg)
        tables.append(t)
    return tables


def evaluate(detections: Sequence[Sequence[Pose]], ground_truths: Sequence[Sequence[Pose]],
             cfg: OksConfig | None = None) -> EvalReport:
    """AP and AR averaged over the OKS threshold grid.

    Both arguments hold one list of poses per scene. Only the top
    ``max_detections`` poses of each scene take part.
    """
    cfg = cfg or OksConfig()
    if len(detections) != len(ground_truths):
        raise ValueError("detections and ground truths must cover the same scenes")
    # ground truths without any labelled keypoint cannot be matched and are ignored
    ground_truths = [[g for g in gts if g.labelled.any()] for gts in ground_truths]
    num_gt = sum(len(g) for g in ground_truths)
    num_det = sum(min(len(d), cfg.max_detections) for d in detections)
    tables = oks_tables(detections, ground_truths, cfg)
    rows = []
    for th in cfg.thresholds:
        tp, _ = match(detections, ground_truths, th, cfg, tables)
        ap = average_precision(np.asarray(tp), num_gt)
        ar = float(sum(tp) / num_gt) if num_gt else 0.0
        rows.append({"threshold": th, "AP": ap, "AR": ar})
    return EvalReport(
        ap=float(np.mean([r["AP"] for r in rows])),
        ar=float(np.mean([r["AR"] for r in rows])),
        per_threshold=rows,
        num_gt=num_gt,
        num_det=num_det,
        vacuous=num_gt == 0,
    )
