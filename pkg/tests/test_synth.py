import numpy as np
import pytest
from hypothesis import given, strategies as st

from ldeq.synth import (FAST_SPEED, DatasetError, SceneSpec, SynthError, gen_still, gen_stills,
                        gen_video, read_dataset, render, trajectories, v_max, write_dataset)


def test_still_is_deterministic():
    a = gen_still(SceneSpec(ambiguity_prob=0.5), 3)
    b = gen_still(SceneSpec(ambiguity_prob=0.5), 3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_video_is_deterministic():
    a = gen_video(SceneSpec(ambiguity_prob=0.8), 12, (2, 8), seed=5)
    b = gen_video(SceneSpec(ambiguity_prob=0.8), 12, (2, 8), seed=5)
    np.testing.assert_array_equal(a.frames, b.frames)
    np.testing.assert_array_equal(a.gt.points, b.gt.points)
    np.testing.assert_array_equal(a.ambiguity_mask, b.ambiguity_mask)


def test_different_seeds_differ():
    a = gen_still(SceneSpec(), 1)[0]
    b = gen_still(SceneSpec(), 2)[0]
    assert not np.array_equal(a, b)


def _column_profile(img):
    return img.sum(axis=0)


def test_ambiguous_landmark_has_two_modes_two_offsets_apart():
    spec = SceneSpec(num_landmarks=1, noise_sigma=0.0, blob_sigma=1.0, image_size=64,
                     ambiguity_offset=0.1)
    p = np.array([[0.5, 0.5]])
    img = render(spec, p, np.array([1]), np.zeros(64 * 64))
    prof = _column_profile(img)
    peaks = [i for i in range(1, 63) if prof[i] > prof[i - 1] and prof[i] >= prof[i + 1]]
    assert len(peaks) == 2
    centres = (np.array(peaks) + 0.5) / 64
    assert centres[1] - centres[0] == pytest.approx(0.2, abs=1.5 / 64)
    # side +1: the right-hand decoy is brighter
    assert prof[peaks[1]] > prof[peaks[0]]


def test_still_label_is_the_brighter_mode():
    spec = SceneSpec(ambiguity_prob=1.0, noise_sigma=0.0)
    for seed in range(20):
        img, lab, mask = gen_still(spec, seed)
        assert mask[-1]
        base = gen_still(SceneSpec(ambiguity_prob=0.0, noise_sigma=0.0), seed)[1]
        np.testing.assert_array_equal(lab[:-1], base[:-1])
        assert abs(lab[-1, 0] - base[-1, 0]) == pytest.approx(spec.ambiguity_offset)


def test_zero_ambiguity_never_masks():
    spec = SceneSpec(ambiguity_prob=0.0)
    for seed in range(10):
        assert not gen_still(spec, seed)[2].any()
    assert not gen_video(spec, 20, (5, 15), seed=1).ambiguity_mask.any()


def test_empty_window_gives_no_ambiguity():
    v = gen_video(SceneSpec(ambiguity_prob=1.0), 10, (4, 4), seed=0)
    assert not v.ambiguity_mask.any()


def test_mask_confined_to_window():
    v = gen_video(SceneSpec(ambiguity_prob=1.0), 20, (5, 12), seed=0)
    assert v.ambiguity_mask[5:12, -1].all()
    assert not v.ambiguity_mask[:5].any() and not v.ambiguity_mask[12:].any()


def test_invalid_window_raises():
    with pytest.raises(SynthError):
        gen_video(SceneSpec(), 10, (5, 11), seed=0)
    with pytest.raises(SynthError):
        gen_video(SceneSpec(), 10, (6, 5), seed=0)


@pytest.mark.parametrize("kw", [{"ambiguity_prob": 1.5}, {"blob_sigma": 0.0},
                                {"ambiguity_contrast": 2.0}, {"speed": 0.0},
                                {"ambiguous_landmarks": (7,)}])
def test_bad_spec_rejected(kw):
    with pytest.raises(SynthError):
        SceneSpec(**kw)


@given(seed=st.integers(0, 2**31 - 1), speed=st.sampled_from([1.0, 2.0, FAST_SPEED]))
def test_trajectories_bounded_and_slow(seed, speed):
    spec = SceneSpec(speed=speed)
    gt = trajectories(spec, 60, seed)
    assert gt.min() >= 0.1 and gt.max() <= 0.9
    step = np.linalg.norm(np.diff(gt, axis=0), axis=-1)
    assert step.max() <= v_max(speed) + 1e-12


def test_fast_benchmark_speed_bound():
    assert v_max(FAST_SPEED) <= 0.02
    assert v_max(FAST_SPEED) == pytest.approx(FAST_SPEED * v_max(1.0))


@given(seed=st.integers(0, 2**31 - 1))
def test_still_labels_in_range(seed):
    _, lab, _ = gen_still(SceneSpec(ambiguity_prob=0.0), seed)
    assert lab.min() >= 0.1 and lab.max() <= 0.9


def test_gen_stills_count_and_shapes():
    items = gen_stills(SceneSpec(), 5, 0)
    assert len(items) == 5
    img, lab, mask = items[0]
    assert img.shape == (32, 32) and lab.shape == (4, 2) and mask.shape == (4,)


def test_dataset_round_trip(tmp_path):
    spec = SceneSpec(ambiguity_prob=0.8)
    vids = [gen_video(spec, 6, (1, 4), seed=s, video_id=f"v{s}") for s in range(3)]
    write_dataset(tmp_path, vids, spec)
    back = read_dataset(tmp_path)
    assert [b.video_id for b in back] == ["v0", "v1", "v2"]
    for a, b in zip(vids, back):
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.gt.points, b.gt.points)
        np.testing.assert_array_equal(a.ambiguity_mask, b.ambiguity_mask)
        assert a.seed == b.seed


def test_missing_frame_is_reported(tmp_path):
    write_dataset(tmp_path, [gen_video(SceneSpec(), 3, None, seed=0)])
    (tmp_path / "frames" / "00000_0001.eqg").unlink()
    with pytest.raises(DatasetError, match="missing frame"):
        read_dataset(tmp_path)


def test_empty_manifest_gives_empty_list(tmp_path):
    write_dataset(tmp_path, [])
    assert read_dataset(tmp_path) == []


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError, match="missing manifest"):
        read_dataset(tmp_path)
