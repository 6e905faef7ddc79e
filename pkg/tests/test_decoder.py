import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bodypart_pose.decoder import (
    AssembledPose,
    DecodeConfig,
    KeypointCandidate,
    PartCandidate,
    assemble,
    check_invariants,
    decode,
    decode_detailed,
    nms_peaks,
    pose_score,
    refine_location,
    score_part,
    score_parts,
    weighted_part_score,
)
from bodypart_pose.encoder import EncoderConfig, HeatmapStack, encode_stack
from bodypart_pose.errors import ChannelMismatch
from bodypart_pose.skeleton import Edge, Pose, SkeletonSpec, grid_index
from bodypart_pose.synth import SceneConstraints, gen_scene
from oracles import nms_bruteforce

ENC = EncoderConfig()


def cand(i, t, gx=0, gy=0, score=1.0):
    return KeypointCandidate(i, t, gx, gy, score)


def test_nms_single_peak():
    g = np.zeros((9, 9))
    ys, xs = np.mgrid[0:9, 0:9]
    g[:] = np.exp(-((xs - 3) ** 2 + (ys - 5) ** 2) / 4.0)
    peaks = nms_peaks(g, 0.1)
    assert [(p.gx, p.gy) for p in peaks] == [(3, 5)]
    assert peaks[0].score == 1.0


def test_nms_below_threshold_is_empty():
    assert nms_peaks(np.full((4, 4), 0.05), 0.1) == []


def test_nms_plateau_keeps_first_row_major():
    g = np.zeros((5, 5))
    g[2, 2] = g[2, 3] = g[3, 2] = 0.7
    assert [(p.gy, p.gx) for p in nms_peaks(g, 0.1)] == [(2, 2)]


def test_nms_equal_but_separated_maxima_both_kept():
    g = np.zeros((5, 5))
    g[1, 1] = g[1, 3] = 0.7
    assert len(nms_peaks(g, 0.1)) == 2


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 12), st.integers(2, 6))
def test_nms_matches_bruteforce(seed, h, w, levels):
    rng = np.random.default_rng(seed)
    # few distinct levels so plateaus are common
    g = rng.integers(0, levels, (h, w)) / (levels - 1)
    got = {(p.gy, p.gx) for p in nms_peaks(g, 0.1)}
    assert got == nms_bruteforce(g, 0.1)


def test_refine_moves_toward_larger_neighbour():
    g = np.zeros((3, 3))
    g[1, 1], g[1, 2], g[0, 1] = 1.0, 0.5, 0.2
    assert refine_location(g, 1, 1) == (1.25, 0.75)
    assert refine_location(np.ones((1, 1)), 0, 0) == (0.0, 0.0)


def test_score_part_zero_channel():
    assert score_part(cand(0, 0, 1, 1), cand(1, 1, 5, 4), np.zeros((8, 8)), 10) == 0.0


def test_score_part_coincident_endpoints():
    ch = np.zeros((6, 6))
    ch[2, 3] = 0.42
    assert score_part(cand(0, 0, 3, 2), cand(1, 1, 3, 2), ch, 10) == 0.42


def test_score_part_interpolates_linearly():
    ch = np.tile(np.arange(6, dtype=float), (3, 1))  # value equals x
    # samples along x = 0..5, mean 2.5
    assert score_part(cand(0, 0, 0, 1), cand(1, 1, 5, 1), ch, 6) == pytest.approx(2.5)
    assert score_part(cand(0, 0, 0, 1), cand(1, 1, 5, 1), ch, 1) == 0.0


def test_score_part_on_ground_truth_channel(spec):
    scene = gen_scene(1, 384, 384, seed=4, spec=spec)
    stack = encode_stack(scene.poses, spec, ENC)
    kp = scene.poses[0].xy
    k = spec.num_keypoints
    for i, e in enumerate(spec.edges):
        # endpoints at the true keypoints, in grid coordinates
        ga = (kp[e.a] + 0.5) / ENC.stride - 0.5
        gb = (kp[e.b] + 0.5) / ENC.stride - 0.5
        s = score_parts(ga[0], ga[1], gb[0], gb[1], stack.data[k + i], 10)[0]
        assert s >= 0.95, (i, s)


def test_weighted_part_score_examples():
    assert weighted_part_score(0.8, 0.9, 0.7) == pytest.approx(0.8)
    assert weighted_part_score(1.0, 1.0, 1.0, (0.3, 0.7)) == pytest.approx(1.0)
    assert weighted_part_score(0.0, 0.9, 0.9, (1.0, 0.0)) == 0.0


def test_pose_score_examples():
    assert pose_score([0.8, 0.6], [1, 1, 0.6]) == pytest.approx(0.8)
    assert pose_score([1.0], [1.0, 1.0]) == 1.0
    with pytest.raises(ValueError):
        pose_score([], [1.0])


def two_point_spec():
    return SkeletonSpec(("a", "b"), (Edge(0, 1),))


def test_assemble_exclusivity_prefers_higher_score():
    cands = [cand(0, 0), cand(1, 1), cand(2, 1)]
    parts = [[PartCandidate(0, 0, 2, 0.6, 0.6), PartCandidate(0, 0, 1, 0.9, 0.9)]]
    poses = assemble(cands, parts, two_point_spec())
    assert len(poses) == 1
    assert poses[0].slots == [0, 1]
    assert [p.weighted_score for p in poses[0].parts] == [0.9]


def test_assemble_merges_and_respects_slots():
    spec = SkeletonSpec(("a", "b", "c"), (Edge(0, 1), Edge(1, 2)))
    cands = [cand(0, 0), cand(1, 1), cand(2, 2), cand(3, 0)]
    parts = [[PartCandidate(0, 0, 1, 0.9, 0.9), PartCandidate(0, 3, 1, 0.8, 0.8)],
             [PartCandidate(1, 1, 2, 0.7, 0.7)]]
    poses = assemble(cands, parts, spec)
    assert len(poses) == 1
    assert poses[0].slots == [0, 1, 2]
    assert check_invariants(poses, cands) == []


def test_assemble_rejects_slot_conflict_on_merge():
    # two poses that both hold a type-0 candidate cannot be joined
    spec = SkeletonSpec(("a", "b", "c", "d"), (Edge(0, 1), Edge(2, 3), Edge(1, 2, redundant=True)))
    cands = [cand(0, 0), cand(1, 1), cand(2, 2), cand(3, 3), cand(4, 0), cand(5, 1), cand(6, 2)]
    parts = [
        [PartCandidate(0, 0, 1, 0.9, 0.9), PartCandidate(0, 4, 5, 0.9, 0.9)],
        [PartCandidate(1, 2, 3, 0.9, 0.9)],
        [PartCandidate(2, 1, 2, 0.8, 0.8)],
    ]
    poses = assemble(cands, parts, spec)
    assert check_invariants(poses, cands) == []
    assert sorted(p.slots for p in poses) == sorted([[0, 1, 2, 3], [4, 5, None, None]])


def test_check_invariants_reports_violations():
    cands = [cand(0, 0), cand(1, 1)]
    p = PartCandidate(0, 0, 1, 1.0, 1.0)
    a = AssembledPose([0, 1], [p])
    b = AssembledPose([0, None], [p])
    assert check_invariants([a, b], cands)


def stack_for(poses, spec, w=96, h=96):
    return encode_stack(poses, spec, ENC, w, h)


def test_decode_zero_stack(spec):
    assert decode(HeatmapStack(np.zeros((spec.num_channels, 16, 16)), 4.0), spec) == []


def test_decode_channel_mismatch(spec):
    with pytest.raises(ChannelMismatch):
        decode(HeatmapStack(np.zeros((3, 8, 8)), 4.0), spec)


def within_one_cell(det, gt, stride=4.0):
    gd = np.stack(grid_index(det.xy[:, 0], det.xy[:, 1], stride), axis=1)
    gg = np.stack(grid_index(gt.xy[:, 0], gt.xy[:, 1], stride), axis=1)
    return np.abs(gd - gg).max(axis=1) <= 1


def test_one_person_roundtrip(spec):
    scene = gen_scene(1, 384, 384, seed=11, spec=spec)
    res = decode_detailed(stack_for(scene.poses, spec), spec)
    assert len(res.poses) == 1
    assert res.poses[0].labelled.all()
    assert within_one_cell(res.poses[0], scene.poses[0]).all()
    assert check_invariants(res.assembled, res.candidates) == []


def test_two_and_three_person_roundtrip(spec):
    con = SceneConstraints(min_separation=3 * ENC.sigma_part)
    for n, seed in ((2, 1), (3, 2)):
        scene = gen_scene(n, 384, 384, seed=seed, constraints=con, spec=spec)
        res = decode_detailed(stack_for(scene.poses, spec), spec)
        assert len(res.poses) == n
        assert check_invariants(res.assembled, res.candidates) == []
        hits = 0
        for gt in scene.poses:
            # the detection agreeing on the most cells is the same person
            best = max(res.poses, key=lambda d: within_one_cell(d, gt).sum())
            hits += within_one_cell(best, gt).sum()
        assert hits >= 0.99 * n * spec.num_keypoints


def test_dropped_keypoint_leaves_slot_empty(spec):
    scene = gen_scene(1, 384, 384, seed=5, spec=spec)
    kp = scene.poses[0].keypoints.copy()
    kp[3, 2] = 0  # left ear not labelled, so never rendered
    poses = decode(stack_for([Pose(kp)], spec), spec)
    assert len(poses) == 1
    lab = poses[0].labelled
    assert not lab[3]
    assert lab[np.arange(17) != 3].all()


def test_decode_is_deterministic_and_sorted(spec):
    scene = gen_scene(4, 384, 384, seed=8, spec=spec)
    stack = stack_for(scene.poses, spec)
    first = decode(stack, spec)
    second = decode(HeatmapStack(stack.data.copy(), stack.stride), spec)
    assert [p.to_dict() for p in first] == [p.to_dict() for p in second]
    scores = [p.score for p in first]
    assert scores == sorted(scores, reverse=True)


def test_decode_top_limits_output(spec):
    scene = gen_scene(3, 384, 384, seed=9, spec=spec)
    assert len(decode(stack_for(scene.poses, spec), spec, top=2)) == 2


def test_max_limb_length_prunes_pairs(spec):
    scene = gen_scene(1, 384, 384, seed=11, spec=spec)
    res = decode_detailed(stack_for(scene.poses, spec), spec, DecodeConfig(max_limb_length=0.5))
    assert res.poses == []
