"""Heatmaps to poses: 3x3 NMS, body-part scoring, greedy assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import HeatmapStack
from .errors import ChannelMismatch, ConfigError
from .skeleton import Pose, SkeletonSpec, Visibility, map_to_image, validate_skeleton


@dataclass(frozen=True)
class DecodeConfig:
    min_peak_score: float = 0.1
    n_samples: int = 10
    part_weight: float = 0.5
    keypoint_weight: float = 0.5
    # parts whose mean sampled response is below this are not considered at all
    min_part_score: float = 0.1
    max_limb_length: float = math.inf  # grid cells
    refine: bool = True
    top: int = 20

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.part_weight <= 0 or self.keypoint_weight <= 0:
            raise ConfigError("score weights must be positive")
        total = self.part_weight + self.keypoint_weight
        object.__setattr__(self, "part_weight", self.part_weight / total)
        object.__setattr__(self, "keypoint_weight", self.keypoint_weight / total)


@dataclass(frozen=True)
class KeypointCandidate:
    id: int
    type: int
    gx: int
    gy: int
    score: float
    x: float = 0.0  # image coordinates after refinement
    y: float = 0.0

    def row_major(self, width: int) -> int:
        return self.gy * width + self.gx


@dataclass(frozen=True)
class PartCandidate:
    type: int
    a: int  # candidate ids
    b: int
    part_score: float
    weighted_score: float


@dataclass
class AssembledPose:
    slots: list  # keypoint type -> candidate id or None
    parts: list = field(default_factory=list)
    score: float = 0.0

    def candidate_ids(self) -> list[int]:
        return [c for c in self.slots if c is not None]


def nms_peaks(channel: np.ndarray, min_peak_score: float, kp_type: int = 0,
              first_id: int = 0) -> list[KeypointCandidate]:
    """Local maxima of a 2-D grid under a 3x3 window, in row-major order.

    A cell is a maximum when it is >= every existing neighbour. Of two
    adjacent maxima with equal value only the earlier (row-major) one is kept.
    """
    v = np.asarray(channel, dtype=np.float64)
    h, w = v.shape
    pad = np.pad(v, 1, constant_values=-np.inf)
    shifts = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]

    def neighbour(arr, dy, dx):
        return arr[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    is_max = np.ones_like(v, dtype=bool)
    for dy, dx in shifts:
        is_max &= v >= neighbour(pad, dy, dx)
    is_max &= v >= min_peak_score

    keep = is_max.copy()
    pad_max = np.pad(is_max, 1, constant_values=False)
    for dy, dx in shifts[:4]:  # neighbours that precede the cell in row-major order
        keep &= ~(neighbour(pad_max, dy, dx) & (neighbour(pad, dy, dx) == v))

    ys, xs = np.nonzero(keep)
    return [
        KeypointCandidate(first_id + n, kp_type, int(x), int(y), float(v[y, x]))
        for n, (y, x) in enumerate(zip(ys, xs))
    ]


def refine_location(channel: np.ndarray, gx: int, gy: int) -> tuple[float, float]:
    """Shift a peak a quarter cell toward its larger 4-neighbour on each axis."""
    h, w = channel.shape

    def step(lo, hi):
        if hi > lo:
            return 0.25
        if lo > hi:
            return -0.25
        return 0.0

    left = channel[gy, gx - 1] if gx > 0 else -np.inf
    right = channel[gy, gx + 1] if gx < w - 1 else -np.inf
    up = channel[gy - 1, gx] if gy > 0 else -np.inf
    down = channel[gy + 1, gx] if gy < h - 1 else -np.inf
    return gx + step(left, right), gy + step(up, down)


def bilinear(channel: np.ndarray, x, y) -> np.ndarray:
    """Bilinear interpolation at grid coordinates, clamped to the grid."""
    h, w = channel.shape
    x = np.clip(np.asarray(x, dtype=np.float64), 0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(int), w - 1)
    y0 = np.minimum(np.floor(y).astype(int), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = channel[y0, x0] * (1 - fx) + channel[y0, x1] * fx
    bottom = channel[y1, x0] * (1 - fx) + channel[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def score_parts(ax, ay, bx, by, channel: np.ndarray, n_samples: int) -> np.ndarray:
    """Vectorised :func:`score_part` over arrays of segment endpoints (grid coords)."""
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    ax, ay, bx, by = (np.asarray(v, dtype=np.float64).reshape(-1, 1) for v in (ax, ay, bx, by))
    t = np.linspace(0.0, 1.0, n_samples) if n_samples > 1 else np.zeros(1)
    xs = ax + t * (bx - ax)
    ys = ay + t * (by - ay)
    means = bilinear(channel, xs, ys).mean(axis=1)
    single = bilinear(channel, ax[:, 0], ay[:, 0])
    same = (ax[:, 0] == bx[:, 0]) & (ay[:, 0] == by[:, 0])
    return np.where(same, single, means)


def score_part(a: KeypointCandidate, b: KeypointCandidate, channel: np.ndarray, n_samples: int) -> float:
    """Mean body-part response at ``n_samples`` evenly spaced points from a to b.

    Coincident endpoints collapse to a single sample.
    """
    return float(score_parts(a.gx, a.gy, b.gx, b.gy, channel, n_samples)[0])


def weighted_part_score(part_score: float, score_a: float, score_b: float,
                        weights: tuple[float, float] = (0.5, 0.5)) -> float:
    w_part, w_kp = weights
    return w_part * part_score + w_kp * (score_a + score_b) / 2


def pose_score(part_scores: Sequence[float], keypoint_scores: Sequence[float]) -> float:
    """Mean over accepted part scores and assigned keypoint scores."""
    if len(part_scores) == 0:
        raise ValueError("pose has no accepted body part")
    n = len(part_scores) + len(keypoint_scores)
    return (sum(part_scores) + sum(keypoint_scores)) / n


def find_part_candidates(cands_by_type: Sequence[Sequence[KeypointCandidate]], stack: np.ndarray,
                         spec: SkeletonSpec, cfg: DecodeConfig) -> list[list[PartCandidate]]:
    """Score every pair of candidates joined by a skeleton edge."""
    k = spec.num_keypoints
    w_part, w_kp = cfg.part_weight, cfg.keypoint_weight
    table = [
        np.array([(c.id, c.gx, c.gy, c.score) for c in cands], dtype=np.float64).reshape(-1, 4)
        for cands in cands_by_type
    ]
    parts = []
    for i, edge in enumerate(spec.edges):
        ta, tb = table[edge.a], table[edge.b]
        ia, ib = np.meshgrid(np.arange(len(ta)), np.arange(len(tb)), indexing="ij")
        ia, ib = ia.ravel(), ib.ravel()
        a, b = ta[ia], tb[ib]
        near = np.hypot(a[:, 1] - b[:, 1], a[:, 2] - b[:, 2]) <= cfg.max_limb_length
        a, b = a[near], b[near]
        scores = score_parts(a[:, 1], a[:, 2], b[:, 1], b[:, 2], stack[k + i], cfg.n_samples)
        found = []
        for n in np.nonzero(scores >= cfg.min_part_score)[0]:
            ps = float(scores[n])
            sa, sb = float(a[n, 3]), float(b[n, 3])
            found.append(PartCandidate(i, int(a[n, 0]), int(b[n, 0]), ps,
                                       weighted_part_score(ps, sa, sb, (w_part, w_kp))))
        parts.append(found)
    return parts


def assemble(candidates: Sequence[KeypointCandidate], parts: Sequence[Sequence[PartCandidate]],
             spec: SkeletonSpec, order: Sequence[int] | None = None) -> list[AssembledPose]:
    """Greedy grouping of scored body parts into poses.

    Edge types are visited tree-first (see ``SkeletonSpec.edge_order``); within
    a type, parts go in descending weighted score. A part is accepted when
    neither endpoint already serves an accepted part of that type and the
    grouping it implies keeps one candidate per keypoint slot. Accepting it
    starts a pose, extends one, or merges two.
    """
    k = spec.num_keypoints
    order = spec.edge_order() if order is None else order
    owner: dict[int, AssembledPose] = {}
    poses: list[AssembledPose] = []

    for t in order:
        ranked = sorted(parts[t], key=lambda p: (-p.weighted_score, p.a, p.b))
        used: set[int] = set()
        for part in ranked:
            if part.a in used or part.b in used:
                continue
            ca, cb = candidates[part.a], candidates[part.b]
            pa, pb = owner.get(part.a), owner.get(part.b)
            if pa is None and pb is None:
                pose = AssembledPose([None] * k)
                pose.slots[ca.type] = ca.id
                pose.slots[cb.type] = cb.id
                poses.append(pose)
            elif pb is None:
                if pa.slots[cb.type] is not None:
                    continue
                pose = pa
                pose.slots[cb.type] = cb.id
            elif pa is None:
                if pb.slots[ca.type] is not None:
                    continue
                pose = pb
                pose.slots[ca.type] = ca.id
            elif pa is pb:
                pose = pa
            else:
                if any(x is not None and y is not None for x, y in zip(pa.slots, pb.slots)):
                    continue
                pose = pa
                for j, c in enumerate(pb.slots):
                    if c is not None:
                        pose.slots[j] = c
                        owner[c] = pose
                pose.parts.extend(pb.parts)
                poses.remove(pb)
            owner[part.a] = owner[part.b] = pose
            pose.parts.append(part)
            used.update((part.a, part.b))

    for pose in poses:
        pose.score = pose_score([p.weighted_score for p in pose.parts],
                                [candidates[c].score for c in pose.candidate_ids()])
    return poses


def check_invariants(poses: Sequence[AssembledPose], candidates: Sequence[KeypointCandidate]) -> list[str]:
    """Return a description of every exclusivity or slot violation (empty when clean)."""
    problems = []
    owner = {}
    per_type: dict[int, set] = {}
    for n, pose in enumerate(poses):
        for slot, cid in enumerate(pose.slots):
            if cid is None:
                continue
            if candidates[cid].type != slot:
                problems.append(f"pose {n}: candidate {cid} sits in slot {slot}")
            if cid in owner:
                problems.append(f"candidate {cid} in poses {owner[cid]} and {n}")
            owner[cid] = n
        for part in pose.parts:
            seen = per_type.setdefault(part.type, set())
            for cid in (part.a, part.b):
                if cid in seen:
                    problems.append(f"candidate {cid} used twice by part type {part.type}")
                seen.add(cid)
                if pose.slots[candidates[cid].type] != cid:
                    problems.append(f"pose {n}: part endpoint {cid} not in its slot")
        if not pose.parts:
            problems.append(f"pose {n} has no parts")
    return problems


@dataclass
class DecodeResult:
    poses: list[Pose]
    assembled: list[AssembledPose]
    candidates: list[KeypointCandidate]
    parts: list[list[PartCandidate]]


def decode_detailed(stack: HeatmapStack, spec: SkeletonSpec, cfg: DecodeConfig | None = None) -> DecodeResult:
    cfg = cfg or DecodeConfig()
    validate_skeleton(spec)
    k = spec.num_keypoints
    if stack.channels != spec.num_channels:
        raise ChannelMismatch(f"stack has {stack.channels} channels, skeleton needs {spec.num_channels}")
    data = stack.data
    width = stack.width

    candidates: list[KeypointCandidate] = []
    by_type = []
    for j in range(k):
        found = nms_peaks(data[j], cfg.min_peak_score, kp_type=j, first_id=len(candidates))
        refined = []
        for c in found:
            gx, gy = refine_location(data[j], c.gx, c.gy) if cfg.refine else (c.gx, c.gy)
            x, y = map_to_image(gx, gy, stack.stride)
            refined.append(KeypointCandidate(c.id, j, c.gx, c.gy, c.score, float(x), float(y)))
        candidates.extend(refined)
        by_type.append(refined)

    parts = find_part_candidates(by_type, data, spec, cfg)
    assembled = assemble(candidates, parts, spec)

    def sort_key(item):
        _, pose = item
        first = min(candidates[c].row_major(width) for c in pose.candidate_ids())
        return (-pose.score, first)

    assembled = [p for _, p in sorted(enumerate(assembled), key=sort_key)]
    out = []
    for pose in assembled:
        kp = np.zeros((k, 3))
        for j, cid in enumerate(pose.slots):
            if cid is not None:
                c = candidates[cid]
                kp[j] = (c.x, c.y, int(Visibility.VISIBLE))
        out.append(Pose(kp, pose.score))
    return DecodeResult(out, assembled, candidates, parts)


def decode(stack: HeatmapStack, spec: SkeletonSpec, cfg: DecodeConfig | None = None,
           top: int | None = None) -> list[Pose]:
    """Poses sorted by descending score, optionally cut to the ``top`` best."""
    poses = decode_detailed(stack, spec, cfg).poses
    return poses if top is None else poses[:top]
