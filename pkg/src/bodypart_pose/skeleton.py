"""Skeleton topology, pose records and grid/image coordinate mapping."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DanglingEndpoint, DuplicateEdge, NotATree, SkeletonError

COCO_KEYPOINTS = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

# Spanning tree over the 17 COCO keypoints, listed torso-outward.
COCO_TREE_EDGES = (
    (0, 5), (0, 6),
    (5, 11), (6, 12),
    (5, 7), (6, 8),
    (7, 9), (8, 10),
    (11, 13), (12, 14),
    (13, 15), (14, 16),
    (0, 1), (0, 2),
    (1, 3), (2, 4),
)

# ear-shoulder on both sides, hip-hip
COCO_REDUNDANT_EDGES = ((3, 5), (4, 6), (11, 12))


class Visibility(enum.IntEnum):
    ABSENT = 0
    OCCLUDED = 1
    VISIBLE = 2


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    redundant: bool = False


@dataclass(frozen=True)
class SkeletonSpec:
    keypoint_names: tuple[str, ...]
    edges: tuple[Edge, ...]

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoint_names)

    @property
    def num_parts(self) -> int:
        return len(self.edges)

    @property
    def num_channels(self) -> int:
        return self.num_keypoints + self.num_parts

    @property
    def mst_edge_count(self) -> int:
        return sum(1 for e in self.edges if not e.redundant)

    def edge_order(self) -> list[int]:
        """Edge indices in assembly order: tree edges as listed, then redundant ones."""
        tree = [i for i, e in enumerate(self.edges) if not e.redundant]
        extra = [i for i, e in enumerate(self.edges) if e.redundant]
        return tree + extra

    def to_dict(self) -> dict:
        return {
            "keypoints": list(self.keypoint_names),
            "edges": [{"a": e.a, "b": e.b, "redundant": e.redundant} for e in self.edges],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SkeletonSpec":
        try:
            names = tuple(str(n) for n in doc["keypoints"])
            edges = tuple(
                Edge(int(e["a"]), int(e["b"]), bool(e.get("redundant", False)))
                for e in doc["edges"]
            )
        except (KeyError, TypeError) as exc:
            raise SkeletonError(f"malformed skeleton document: {exc}") from exc
        return cls(names, edges)


def default_skeleton(redundant: Iterable[tuple[int, int]] = COCO_REDUNDANT_EDGES) -> SkeletonSpec:
    edges = [Edge(a, b) for a, b in COCO_TREE_EDGES]
    edges += [Edge(a, b, redundant=True) for a, b in redundant]
    return SkeletonSpec(COCO_KEYPOINTS, tuple(edges))


def load_skeleton(path) -> SkeletonSpec:
    with open(path) as fh:
        spec = SkeletonSpec.from_dict(json.load(fh))
    validate_skeleton(spec)
    return spec


def validate_skeleton(spec: SkeletonSpec) -> list[int]:
    """Check the skeleton invariants and return the indices of the tree edges.

    The non-redundant edges must form a tree over the keypoints they touch;
    keypoints touched by no tree edge are allowed.
    """
    k = spec.num_keypoints
    seen = set()
    for i, e in enumerate(spec.edges):
        if not (0 <= e.a < k and 0 <= e.b < k):
            raise DanglingEndpoint(f"edge {i} ({e.a},{e.b}) has an endpoint outside [0,{k})")
        if e.a == e.b:
            raise DanglingEndpoint(f"edge {i} is a self-loop on keypoint {e.a}")
        key = frozenset((e.a, e.b))
        if key in seen:
            raise DuplicateEdge(f"edge {i} ({e.a},{e.b}) duplicates an earlier edge")
        seen.add(key)

    parent = list(range(k))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree = []
    touched = set()
    for i, e in enumerate(spec.edges):
        if e.redundant:
            continue
        ra, rb = find(e.a), find(e.b)
        if ra == rb:
            raise NotATree(f"tree edge {i} ({e.a},{e.b}) closes a cycle")
        parent[ra] = rb
        touched.update((e.a, e.b))
        tree.append(i)
    if len({find(v) for v in touched}) > 1:
        raise NotATree("tree edges do not connect all the keypoints they touch")
    return tree


@dataclass(frozen=True)
class GridPoint:
    x: int
    y: int
    stride: float


def map_to_image(x, y, stride):
    """Image location of a heatmap cell centre: ``x * R + R / 2 - 0.5``.

    Works elementwise on arrays as well as on scalars.
    """
    return x * stride + stride / 2 - 0.5, y * stride + stride / 2 - 0.5


def grid_index(x_img, y_img, stride):
    """Inverse of :func:`map_to_image` for cell centres (floors to the cell)."""
    gx = np.floor((np.asarray(x_img) - stride / 2 + 0.5) / stride).astype(int)
    gy = np.floor((np.asarray(y_img) - stride / 2 + 0.5) / stride).astype(int)
    if gx.ndim == 0:
        return int(gx), int(gy)
    return gx, gy


@dataclass(frozen=True)
class Pose:
    """One person: ``keypoints`` is a read-only (K, 3) array of x, y, visibility."""

    keypoints: np.ndarray
    score: float = 0.0
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=np.float64).reshape(-1, 3)
        labelled = kp[:, 2] > 0
        if not np.all(np.isfinite(kp[labelled, :2])):
            raise SkeletonError("labelled keypoints must have finite coordinates")
        if not np.all(np.isin(kp[:, 2], (0, 1, 2))):
            raise SkeletonError("visibility must be 0, 1 or 2")
        if not (self.score >= 0 and math.isfinite(self.score)):
            raise SkeletonError(f"pose score must be finite and >= 0, got {self.score}")
        kp.setflags(write=False)
        object.__setattr__(self, "keypoints", kp)

    @property
    def num_keypoints(self) -> int:
        return self.keypoints.shape[0]

    @property
    def xy(self) -> np.ndarray:
        return self.keypoints[:, :2]

    @property
    def visibility(self) -> np.ndarray:
        return self.keypoints[:, 2].astype(int)

    @property
    def labelled(self) -> np.ndarray:
        return self.keypoints[:, 2] > 0

    def to_dict(self) -> dict:
        kps = []
        for x, y, v in self.keypoints:
            kps.append([float(x), float(y), int(v)])
        return {"keypoints": kps, "score": float(self.score)}

    @classmethod
    def from_dict(cls, doc: dict) -> "Pose":
        return cls(np.asarray(doc["keypoints"], dtype=np.float64), float(doc.get("score", 0.0)))


def poses_to_json(poses: Sequence[Pose]) -> list:
    return [p.to_dict() for p in poses]


def poses_from_json(doc) -> list[Pose]:
    return [Pose.from_dict(d) for d in doc]
