import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bodypart_pose.encoder import (
    EncoderConfig,
    HeatmapStack,
    build_mask,
    build_pyramid,
    downsample_stack,
    encode_keypoint_channel,
    encode_part_channel,
    encode_stack,
    mask_pyramid,
    truncation_radius,
    unannotated_regions,
)
from bodypart_pose.errors import ConfigError, IndivisibleDims
from bodypart_pose.skeleton import Pose, default_skeleton, map_to_image
from bodypart_pose.synth import SceneConstraints, gen_scene
from oracles import encode_channel_bruteforce, encode_stack_bruteforce


def bisect_radius(sigma, thre):
    lo, hi = 0.0, 100 * sigma
    for _ in range(200):
        mid = (lo + hi) / 2
        if math.exp(-mid * mid / (2 * sigma * sigma)) > thre:
            lo = mid
        else:
            hi = mid
    return lo


@pytest.mark.parametrize("sigma, thre, expected", [(9, 0.01, 27.314), (7, 0.01, 21.244)])
def test_truncation_radius_matches_root_finding(sigma, thre, expected):
    r = truncation_radius(sigma, thre)
    assert r == pytest.approx(bisect_radius(sigma, thre), abs=1e-9)
    assert r == pytest.approx(expected, abs=1e-3)


def test_truncation_radius_near_one_vanishes():
    assert truncation_radius(9, 1 - 1e-12) < 1e-4


@pytest.mark.parametrize("thre", [0.0, 1.0, -0.5, 2.0])
def test_truncation_radius_domain(thre):
    with pytest.raises(ConfigError):
        truncation_radius(9, thre)


def single(x, y, k=1, v=2):
    kp = np.zeros((k, 3))
    kp[0] = (x, y, v)
    return Pose(kp)


def test_keypoint_on_cell_centre_is_one():
    cfg = EncoderConfig()
    x, y = map_to_image(5, 7, cfg.stride)
    ch = encode_keypoint_channel([single(x, y)], 0, cfg, 16, 16)
    assert ch[7, 5] == 1.0
    assert ch.max() == 1.0


def test_far_pixels_are_zero():
    cfg = EncoderConfig()
    ch = encode_keypoint_channel([single(1.5, 1.5)], 0, cfg, 32, 32)
    xs, ys = map_to_image(np.arange(32)[None, :], np.arange(32)[:, None], cfg.stride)
    far = np.hypot(xs - 1.5, ys - 1.5) > cfg.kp_radius
    assert far.any()
    assert np.all(ch[far] == 0.0)
    assert np.all(ch[~far] > 0.0)


def test_absent_keypoint_contributes_nothing():
    cfg = EncoderConfig()
    ch = encode_keypoint_channel([single(10, 10, v=0)], 0, cfg, 8, 8)
    assert not ch.any()


def test_two_persons_take_pixelwise_max():
    cfg = EncoderConfig()
    poses = [single(20.0, 20.0), single(26.0, 20.0)]
    ch = encode_keypoint_channel(poses, 0, cfg, 12, 12)
    expected = encode_channel_bruteforce([(20.0, 20.0, None, None), (26.0, 20.0, None, None)],
                                         cfg.sigma_kp, cfg.thre, 12, 12, cfg.stride)
    assert np.array_equal(ch, expected)
    # cell between the two keypoints: centre (21.5, 21.5), nearer to the first one
    d2 = min((21.5 - 20) ** 2, (21.5 - 26) ** 2) + 1.5 ** 2
    assert ch[5, 5] == pytest.approx(math.exp(-d2 / (2 * 81)), rel=1e-15)


def limb(a, b):
    return Pose([[*a, 2], [*b, 2]])


def test_part_on_segment_is_one():
    cfg = EncoderConfig(stride=1)
    ch = encode_part_channel([limb((0, 10), (20, 10))], (0, 1), cfg, 24, 24)
    assert np.all(ch[10, 0:21] == 1.0)


def test_part_perpendicular_offset_sigma():
    cfg = EncoderConfig(stride=1)
    ch = encode_part_channel([limb((0, 10), (20, 10))], (0, 1), cfg, 24, 24)
    assert ch[17, 10] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert ch[17, 10] == pytest.approx(0.6065, abs=1e-4)


def test_part_beyond_end_uses_endpoint_distance():
    cfg = EncoderConfig(stride=1)
    ch = encode_part_channel([limb((0, 10), (10, 10))], (0, 1), cfg, 24, 24)
    d2 = 3 ** 2 + 4 ** 2  # pixel (13, 14) against endpoint (10, 10)
    assert ch[14, 13] == pytest.approx(math.exp(-d2 / 98), rel=1e-15)


def test_degenerate_part_equals_keypoint_gaussian():
    cfg = EncoderConfig()
    part = encode_part_channel([limb((17.3, 22.9), (17.3, 22.9))], (0, 1), cfg, 16, 16)
    kp_cfg = EncoderConfig(sigma_kp=cfg.sigma_part)
    kp = encode_keypoint_channel([single(17.3, 22.9, k=2)], 0, kp_cfg, 16, 16)
    assert np.array_equal(part, kp)


def test_part_needs_both_endpoints():
    cfg = EncoderConfig()
    p = Pose([[5, 5, 2], [30, 30, 0]])
    assert not encode_part_channel([p], (0, 1), cfg, 12, 12).any()


def test_encode_stack_empty_and_channel_count(spec):
    stack = encode_stack([], spec, EncoderConfig(), 16, 16)
    assert stack.shape == (36, 16, 16)
    assert not stack.data.any()


def test_encode_stack_full_pose_has_unit_peaks(spec):
    scene = gen_scene(1, 384, 384, seed=4, spec=spec, constraints=SceneConstraints(snap=True))
    stack = encode_stack(scene.poses, spec, EncoderConfig())
    assert np.all(stack.data.reshape(36, -1).max(axis=1) == 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_encode_stack_matches_bruteforce_small(seed):
    spec = default_skeleton()
    rng = np.random.default_rng(seed)
    w, h = rng.integers(4, 13, size=2)
    cfg = EncoderConfig(stride=float(rng.choice([1, 2, 4])))
    poses = []
    for _ in range(rng.integers(0, 3)):
        kp = np.column_stack([rng.uniform(-5, w * cfg.stride + 5, 17), rng.uniform(-5, h * cfg.stride + 5, 17),
                              rng.choice([0, 1, 2], 17)])
        poses.append(Pose(kp))
    stack = encode_stack(poses, spec, cfg, int(w), int(h))
    expected = encode_stack_bruteforce(poses, spec, cfg.sigma_kp, cfg.sigma_part, cfg.thre,
                                       int(w), int(h), cfg.stride)
    assert np.array_equal(stack.data, expected)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 60), st.floats(0, 60), st.integers(0, 7))
def test_keypoint_value_monotone_along_rays(kx, ky, direction):
    cfg = EncoderConfig(stride=1)
    ch = encode_keypoint_channel([single(kx, ky)], 0, cfg, 64, 64)
    dx, dy = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)][direction]
    x, y = int(round(kx)), int(round(ky))
    x, y = min(x, 63), min(y, 63)
    prev_d, prev_v = math.hypot(x - kx, y - ky), ch[y, x]
    while 0 <= x + dx < 64 and 0 <= y + dy < 64:
        x, y = x + dx, y + dy
        d, v = math.hypot(x - kx, y - ky), ch[y, x]
        if d >= prev_d:
            assert v <= prev_v
        prev_d, prev_v = d, v


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 40), st.floats(0, 40), st.floats(0, 40), st.floats(0, 40),
       st.integers(0, 47), st.integers(0, 47), st.integers(0, 47), st.integers(0, 47))
def test_part_value_monotone_in_segment_distance(ax, ay, bx, by, x1, y1, x2, y2):
    cfg = EncoderConfig(stride=1)
    ch = encode_part_channel([limb((ax, ay), (bx, by))], (0, 1), cfg, 48, 48)

    def seg_dist(px, py):
        ex, ey = bx - ax, by - ay
        l2 = ex * ex + ey * ey
        t = 0.0 if l2 == 0 else min(max(((px - ax) * ex + (py - ay) * ey) / l2, 0.0), 1.0)
        return math.hypot(px - ax - t * ex, py - ay - t * ey)

    d1, d2 = seg_dist(x1, y1), seg_dist(x2, y2)
    if d1 + 1e-9 < d2:
        assert ch[y2, x2] <= ch[y1, x1]


def test_gt_nonzero_values_at_least_thre(spec):
    scene = gen_scene(3, 384, 384, seed=11, spec=spec)
    stack = encode_stack(scene.poses, spec, EncoderConfig())
    nz = stack.data[stack.data != 0]
    assert nz.size and nz.min() >= 0.01
    assert stack.data.max() <= 1.0


def test_downsample_examples():
    block = HeatmapStack(np.array([[[0.2, 0.4], [0.6, 0.8]]]), 4.0)
    out = downsample_stack(block, 2)
    assert out.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == pytest.approx(0.5, abs=1e-15)
    assert out.stride == 8.0

    const = HeatmapStack(np.full((2, 8, 8), 0.37), 4.0)
    for f in (1, 2, 4, 8):
        assert np.allclose(downsample_stack(const, f).data, 0.37, rtol=1e-15, atol=0)

    rnd = HeatmapStack(np.random.default_rng(0).uniform(size=(3, 8, 8)), 4.0)
    same = downsample_stack(rnd, 1)
    assert np.array_equal(same.data, rnd.data) and same.stride == 4.0


def test_downsample_indivisible():
    with pytest.raises(IndivisibleDims):
        downsample_stack(HeatmapStack(np.zeros((1, 6, 8)), 4.0), 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([1, 2, 4, 8, 16]))
def test_downsample_preserves_channel_mean(seed, factor):
    data = np.random.default_rng(seed).uniform(size=(4, 32, 48))
    out = downsample_stack(HeatmapStack(data, 4.0), factor)
    assert np.allclose(out.data.mean(axis=(1, 2)), data.mean(axis=(1, 2)), rtol=1e-13, atol=0)


def test_pyramid_strides_and_shapes(spec):
    stack = encode_stack([], spec, EncoderConfig())
    pyr = build_pyramid(stack)
    assert [p.stride for p in pyr] == [4, 8, 16, 32, 64]
    assert [p.shape[1:] for p in pyr] == [(96, 96), (48, 48), (24, 24), (12, 12), (6, 6)]


def test_build_mask_examples():
    assert np.all(build_mask([], 96, 96) == 1)
    assert not build_mask([(0, 0, 96, 96)], 96, 96).any()
    m = build_mask([(10, 20, 14, 24)], 96, 96)
    assert (m == 0).sum() == 16
    assert set(np.unique(m)) == {0.0, 1.0}


def test_unannotated_regions_cover_flagged_person():
    p = Pose([[10, 10, 2], [30, 50, 2]])
    q = Pose([[100, 100, 2], [120, 120, 2]])
    regions = unannotated_regions([p, q], [True, False], stride=4)
    m = build_mask(regions, 40, 40)
    assert m[2, 2] == 0 and m[12, 7] == 0
    assert m[25, 25] == 1


def test_mask_pyramid_is_conservative():
    m = build_mask([(3, 3, 4, 4)], 16, 16)
    pyr = mask_pyramid(m)
    assert [x.shape for x in pyr] == [(16, 16), (8, 8), (4, 4), (2, 2), (1, 1)]
    assert all((x == 0).sum() == 1 for x in pyr)


def test_encoder_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(sigma_kp=0)
    with pytest.raises(ConfigError):
        EncoderConfig(thre=1.0)
