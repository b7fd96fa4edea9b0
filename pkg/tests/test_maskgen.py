import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgtsm.maskgen import (RATIO_BUCKETS, MaskRatioError, MaskSpec, MaskVideo, apply_mask, bbox_mask, bucket_label,
                           generate_mask, iou, random_walk, ratio, rigid_video, translate)


def test_bucket_labels():
    assert [bucket_label(lo, hi) for lo, hi in RATIO_BUCKETS] == [
        "0-10%", "10-20%", "20-30%", "30-40%", "40-50%", "50-60%", "60-70%"]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["stroke", "object_like", "bbox"]), st.integers(0, 6), st.integers(0, 10**6))
def test_generated_ratio_lands_in_bucket(kind, b, seed):
    lo, hi = RATIO_BUCKETS[b]
    m = generate_mask(MaskSpec(kind, (lo, hi), seed=seed), 4, 32, 32)
    assert lo <= m.ratio < hi
    assert m.shape == (1, 1, 4, 32, 32)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_same_seed_gives_identical_masks(seed):
    spec = MaskSpec("stroke", (0.2, 0.3), seed=seed)
    assert generate_mask(spec, 5, 32, 32) == generate_mask(spec, 5, 32, 32)


def test_small_frames_still_reach_ratio():
    for b in range(7):
        for seed in range(5):
            m = generate_mask(MaskSpec("stroke", RATIO_BUCKETS[b], seed=seed), 3, 16, 16)
            assert RATIO_BUCKETS[b][0] <= m.ratio < RATIO_BUCKETS[b][1]


def test_impossible_range_raises_with_best_ratio():
    with pytest.raises(MaskRatioError) as e:
        generate_mask(MaskSpec("bbox", (0.0, 0.001), seed=0), 2, 16, 16)
    assert "after 100 attempts" in str(e.value)


def test_invalid_specs_are_rejected():
    with pytest.raises(ValueError):
        MaskSpec("blob")
    with pytest.raises(ValueError):
        MaskSpec("stroke", (0.3, 0.2))
    with pytest.raises(ValueError):
        generate_mask(MaskSpec(), 2, 8, 8)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.floats(0, 5), st.integers(0, 1000))
def test_random_walk_step_lengths(L, motion, seed):
    offs = random_walk(np.random.default_rng(seed), L, motion)
    assert offs.shape == (L, 2)
    assert np.array_equal(offs[0], [0, 0])
    steps = np.diff(offs, axis=0)
    assert (np.hypot(steps[:, 0], steps[:, 1]) <= motion + 1e-12).all()


def test_zero_motion_masks_are_static():
    m = generate_mask(MaskSpec("stroke", (0.1, 0.2), motion=0.0, seed=3), 5, 32, 32).frames
    assert all(np.array_equal(m[0], f) for f in m)


def test_translate_and_rigid_video():
    f = np.zeros((4, 4), np.uint8)
    f[1, 1] = 1
    assert translate(f, 1, 2)[2, 3] == 1
    assert translate(f, 5, 0).sum() == 0
    vid = rigid_video(f, np.array([[0, 0], [0, 1], [1, 1]]))
    assert [tuple(np.argwhere(v)[0]) for v in vid] == [(1, 1), (1, 2), (2, 2)]


def test_bbox_mask_keeps_area_inside_frame():
    m = bbox_mask(6, 20, 20, 5, 5, 8, 6, motion=3.0, rng=np.random.default_rng(1))
    assert all(f.sum() == 48 for f in m.frames)


def test_apply_mask_zeroes_exactly_the_hole():
    v = np.ones((1, 3, 2, 4, 4))
    m = np.zeros((1, 1, 2, 4, 4))
    m[..., 0, 0] = 1
    out = apply_mask(v, m)
    assert out[..., 0, 0].sum() == 0 and out.sum() == 3 * 2 * 15


def test_ratio_and_iou_helpers():
    a = np.array([[1, 0], [1, 0]], bool)
    b = np.array([[1, 1], [0, 0]], bool)
    assert ratio(a) == 0.5
    assert iou(a, b) == pytest.approx(1 / 3)
    assert iou(np.zeros(3, bool), np.zeros(3, bool)) == 1.0


def test_mask_video_round_trip(tmp_path):
    m = generate_mask(MaskSpec("object_like", (0.3, 0.4), seed=4), 3, 24, 20)
    m.save(tmp_path / "m")
    assert MaskVideo.load(tmp_path / "m") == m
    with pytest.raises(ValueError):
        MaskVideo(np.full((2, 4, 4), 2))
