"""Seeded synthetic scenes, heatmap noise, and encode/decode round trips."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .decoder import DecodeConfig, check_invariants, decode_detailed, nms_peaks
from .encoder import EncoderConfig, HeatmapStack, encode_stack
from .errors import ConfigError, InfeasibleConstraints
from .oks import OksConfig, evaluate, match, oks_tables
from .skeleton import Pose, SkeletonSpec, Visibility, default_skeleton, grid_index, map_to_image

# Upright frontal person, unit height, x centred on the body axis.
TEMPLATE = np.array([
    [0.00, 0.09],   # nose
    [0.07, 0.04], [-0.07, 0.04],    # eyes
    [0.15, 0.08], [-0.15, 0.08],    # ears
    [0.18, 0.21], [-0.18, 0.21],    # shoulders
    [0.25, 0.38], [-0.25, 0.38],    # elbows
    [0.28, 0.54], [-0.28, 0.54],    # wrists
    [0.11, 0.56], [-0.11, 0.56],    # hips
    [0.12, 0.77], [-0.12, 0.77],    # knees
    [0.13, 0.98], [-0.13, 0.98],    # ankles
])


@dataclass(frozen=True)
class NoiseSpec:
    jitter: float = 0.0  # std of additive value noise
    false_peak_rate: float = 0.0  # chance of one spurious peak per keypoint channel
    dropout: float = 0.0  # chance of erasing each keypoint peak

    def __post_init__(self):
        if self.jitter < 0:
            raise ConfigError("jitter must be >= 0")
        for name in ("false_peak_rate", "dropout"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")

    @property
    def is_clean(self) -> bool:
        return self.jitter == 0 and self.false_peak_rate == 0 and self.dropout == 0


@dataclass(frozen=True)
class SceneConstraints:
    min_separation: float = 21.0  # px between persons' keypoint boxes
    min_limb_cells: float = 2.0  # every limb strictly longer than this many cells
    height_range: tuple = (100.0, 160.0)
    margin: float = 4.0
    snap: bool = False
    joint_jitter: float = 0.01  # fraction of person height
    max_tilt_deg: float = 10.0
    max_attempts: int = 400


@dataclass
class Scene:
    width: int
    height: int
    poses: list
    seed: int
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def to_dict(self) -> dict:
        return {
            "canvas": [self.width, self.height],
            "seed": self.seed,
            "noise": asdict(self.noise),
            "poses": [p.to_dict() for p in self.poses],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scene":
        w, h = doc["canvas"]
        return cls(int(w), int(h), [Pose.from_dict(p) for p in doc["poses"]], int(doc.get("seed", 0)),
                   NoiseSpec(**doc.get("noise", {})))


def box_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean gap between the bounding boxes of two point sets (0 if they overlap)."""
    gap = np.maximum(0.0, np.maximum(a.min(axis=0) - b.max(axis=0), b.min(axis=0) - a.max(axis=0)))
    return float(np.hypot(*gap))


def _limbs_ok(xy, spec, min_len) -> bool:
    return all(math.dist(xy[e.a], xy[e.b]) > min_len for e in spec.edges)


def _sample_person(rng, spec, stride, con: SceneConstraints):
    for _ in range(con.max_attempts):
        h = rng.uniform(*con.height_range)
        tilt = math.radians(rng.uniform(-con.max_tilt_deg, con.max_tilt_deg))
        rot = np.array([[math.cos(tilt), -math.sin(tilt)], [math.sin(tilt), math.cos(tilt)]])
        jitter = np.clip(rng.normal(0.0, con.joint_jitter, TEMPLATE.shape), -2 * con.joint_jitter,
                         2 * con.joint_jitter)
        xy = ((TEMPLATE + jitter) @ rot.T) * h
        if _limbs_ok(xy, spec, con.min_limb_cells * stride):
            return xy - xy.min(axis=0)
    raise InfeasibleConstraints("could not sample a person satisfying the limb-length constraint")


def _snap(xy, stride):
    # nearest cell centre rather than the floor
    gx, gy = grid_index(xy[:, 0] + stride / 2, xy[:, 1] + stride / 2, stride)
    x, y = map_to_image(gx, gy, stride)
    return np.stack([x, y], axis=1).astype(np.float64)


def gen_scene(n_persons: int, width: int = 384, height: int = 384, seed: int = 0,
              constraints: SceneConstraints | None = None, spec: SkeletonSpec | None = None,
              stride: float = 4.0, noise: NoiseSpec | None = None) -> Scene:
    """Place ``n_persons`` articulated persons on the canvas, fully determined by ``seed``."""
    if n_persons < 0:
        raise ConfigError("n_persons must be >= 0")
    con = constraints or SceneConstraints()
    spec = spec or default_skeleton()
    if spec.num_keypoints != len(TEMPLATE):
        raise ConfigError("scene generation needs the 17-keypoint template skeleton")
    rng = np.random.default_rng(seed)
    placed: list[np.ndarray] = []
    restarts = 0
    while len(placed) < n_persons:
        xy = _sample_person(rng, spec, stride, con)
        size = xy.max(axis=0)
        room = np.array([width, height]) - 2 * con.margin - size
        if np.any(room < 0):
            raise InfeasibleConstraints("person does not fit on the canvas")
        for _ in range(con.max_attempts):
            cand = xy + con.margin + rng.uniform(0, 1, 2) * room
            if con.snap:
                cand = _snap(cand, stride)
                if not _limbs_ok(cand, spec, con.min_limb_cells * stride):
                    continue
            if all(box_distance(cand, other) >= con.min_separation for other in placed):
                placed.append(cand)
                break
        else:
            # start over with fresh persons; dense scenes need a different layout
            restarts += 1
            if restarts > 50:
                raise InfeasibleConstraints(
                    f"cannot place {n_persons} persons at separation {con.min_separation} px"
                )
            placed = []
    poses = []
    for xy in placed:
        kp = np.column_stack([xy, np.full(len(xy), float(Visibility.VISIBLE))])
        poses.append(Pose(kp))
    return Scene(width, height, poses, seed, noise or NoiseSpec())


def perturb_stack(stack: HeatmapStack, noise: NoiseSpec, seed: int, num_keypoints: int,
                  enc: EncoderConfig | None = None, min_peak_score: float = 0.1) -> HeatmapStack:
    """Corrupt a heatmap stack: erase keypoint peaks, add spurious peaks, add value noise.

    Output is clamped to [0, 1.2]. A clean noise spec returns an identical copy.
    """
    if noise.is_clean:
        return HeatmapStack(stack.data.copy(), stack.stride)
    enc = enc or EncoderConfig()
    rng = np.random.default_rng(seed)
    data = stack.data.copy()
    _, h, w = data.shape
    ys, xs = np.mgrid[0:h, 0:w]
    sigma = enc.sigma_kp / stack.stride
    radius = enc.kp_radius / stack.stride

    for j in range(num_keypoints):
        if noise.dropout > 0:
            for c in nms_peaks(data[j], min_peak_score):
                if rng.random() < noise.dropout:
                    data[j][(xs - c.gx) ** 2 + (ys - c.gy) ** 2 <= radius ** 2] = 0.0
        if noise.false_peak_rate > 0 and rng.random() < noise.false_peak_rate:
            cx, cy = rng.uniform(0, w), rng.uniform(0, h)
            amp = rng.uniform(0.3, 0.9)
            bump = amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))
            np.maximum(data[j], bump, out=data[j])
    if noise.jitter > 0:
        data += rng.normal(0.0, noise.jitter, data.shape)
    np.clip(data, 0.0, 1.2, out=data)
    return HeatmapStack(data, stack.stride)


@dataclass
class SceneResult:
    index: int
    seed: int
    num_gt: int
    num_det: int
    matched: int
    visible: int
    hits: int
    violations: int
    detections: list
    ground_truth: list
    timing: dict = field(default_factory=dict)


def _scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def roundtrip(scene: Scene, spec: SkeletonSpec | None = None, enc: EncoderConfig | None = None,
              dec: DecodeConfig | None = None, ocfg: OksConfig | None = None,
              index: int = 0) -> SceneResult:
    """Encode the scene, optionally perturb, decode, and score against its poses."""
    spec = spec or default_skeleton()
    enc = enc or EncoderConfig()
    dec = dec or DecodeConfig()
    ocfg = ocfg or OksConfig()
    gw, gh = int(scene.width // enc.stride), int(scene.height // enc.stride)
    timing = {}

    t0 = time.perf_counter()
    stack = encode_stack(scene.poses, spec, enc, gw, gh)
    t1 = time.perf_counter()
    stack = perturb_stack(stack, scene.noise, scene.seed + 1, spec.num_keypoints, enc, dec.min_peak_score)
    t2 = time.perf_counter()
    result = decode_detailed(stack, spec, dec)
    t3 = time.perf_counter()
    timing.update(encode=t1 - t0, perturb=t2 - t1, decode=t3 - t2)

    dets = result.poses[: dec.top]
    violations = len(check_invariants(result.assembled, result.candidates))
    gts = scene.poses
    hits = visible = matched = 0
    if gts:
        _, m = match([dets], [gts], ocfg.thresholds[0], ocfg, oks_tables([dets], [gts], ocfg))
        for j, g in enumerate(gts):
            vis = g.labelled
            visible += int(vis.sum())
            i = m.gt_match[0][j]
            if i < 0:
                continue
            matched += 1
            d = dets[i]
            dist = np.hypot(*(d.xy - g.xy).T)
            hits += int(np.sum(vis & d.labelled & (dist <= enc.stride)))
    return SceneResult(index, scene.seed, len(gts), len(dets), matched, visible, hits, violations,
                       dets, list(gts), timing)


@dataclass
class RunReport:
    scenes: int
    persons: int
    detections: int
    person_recall: float
    count_exact_rate: float
    keypoint_recall: float
    ap: float
    ar: float
    per_threshold: list
    violations: int
    vacuous: bool
    timing: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        doc = {
            "scenes": self.scenes,
            "persons": self.persons,
            "detections": self.detections,
            "person_recall": self.person_recall,
            "count_exact_rate": self.count_exact_rate,
            "keypoint_recall": self.keypoint_recall,
            "AP": self.ap,
            "AR": self.ar,
            "per_threshold": self.per_threshold,
            "invariant_violations": self.violations,
            "vacuous": self.vacuous,
        }
        if include_timing:
            doc["timing"] = self.timing
        return doc


def summarize(results: Sequence[SceneResult], ocfg: OksConfig | None = None) -> RunReport:
    ocfg = ocfg or OksConfig()
    results = sorted(results, key=lambda r: r.index)
    metrics = evaluate([r.detections for r in results], [r.ground_truth for r in results], ocfg)
    persons = sum(r.num_gt for r in results)
    visible = sum(r.visible for r in results)
    timing = {}
    for r in results:
        for k, v in r.timing.items():
            timing[k] = timing.get(k, 0.0) + v
    return RunReport(
        scenes=len(results),
        persons=persons,
        detections=sum(r.num_det for r in results),
        person_recall=sum(r.matched for r in results) / persons if persons else 0.0,
        count_exact_rate=(sum(r.num_det == r.num_gt for r in results) / len(results)) if results else 0.0,
        keypoint_recall=sum(r.hits for r in results) / visible if visible else 0.0,
        ap=metrics.ap,
        ar=metrics.ar,
        per_threshold=metrics.per_threshold,
        violations=sum(r.violations for r in results),
        vacuous=metrics.vacuous,
        timing=timing,
    )


def make_batch(n_scenes: int, seed: int, persons: tuple[int, int] = (1, 4), width: int = 384,
               height: int = 384, constraints: SceneConstraints | None = None,
               noise: NoiseSpec | None = None, stride: float = 4.0,
               spec: SkeletonSpec | None = None) -> list[Scene]:
    rng = np.random.default_rng(seed)
    counts = rng.integers(persons[0], persons[1] + 1, size=n_scenes)
    return [
        gen_scene(int(n), width, height, _scene_seed(seed, i), constraints, spec, stride, noise)
        for i, n in enumerate(counts)
    ]


def run_batch(scenes: Sequence[Scene], spec: SkeletonSpec | None = None,
              enc: EncoderConfig | None = None, dec: DecodeConfig | None = None,
              ocfg: OksConfig | None = None, workers: int = 1) -> tuple[RunReport, list[SceneResult]]:
    """Round-trip every scene; results are reduced in scene order whatever the pool size."""

    def job(item):
        i, scene = item
        return roundtrip(scene, spec, enc, dec, ocfg, index=i)

    items = list(enumerate(scenes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, items))
    else:
        results = [job(it) for it in items]
    return summarize(results, ocfg), results
