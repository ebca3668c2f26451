import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from graspfusion.data import (DataConfig, PreprocessConfig, SceneParams, add_gaussian_noise, background_substitute,
                              gaussian_filter, gaussian_kernel, generate_dataset, generate_scenes, label_rule,
                              object_area, preprocess_tactile, render_at_force, render_tactile, render_visual,
                              sensor_backgrounds, splice_tactile, unsplice_tactile)

CFG = DataConfig()


def test_kernel_is_normalised_and_symmetric():
    k = gaussian_kernel(2.0)
    assert k.shape == (13, 13)
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(k, k.T)
    np.testing.assert_allclose(k, k[::-1, ::-1])


@pytest.mark.parametrize("sigma", [0.8, 1.0, 2.0])
def test_gaussian_filter_matches_scipy_correlate(sigma):
    img = np.random.default_rng(0).uniform(size=(3, 14, 17))
    k = gaussian_kernel(sigma)
    want = np.stack([ndimage.correlate(c, k, mode="reflect") for c in img])
    np.testing.assert_allclose(gaussian_filter(img, sigma), want, atol=1e-12)


def test_constant_image_is_a_fixed_point():
    img = np.full((3, 12, 24), 0.37)
    np.testing.assert_allclose(gaussian_filter(img, 2.0), img, atol=1e-9)


def test_gaussian_filter_is_linear():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(12, 12)), rng.uniform(size=(12, 12))
    lhs = gaussian_filter(2.0 * a - 0.5 * b)
    np.testing.assert_allclose(lhs, 2.0 * gaussian_filter(a) - 0.5 * gaussian_filter(b), atol=1e-9)


def test_gaussian_filter_rejects_bad_sigma():
    with pytest.raises(ValueError):
        gaussian_filter(np.zeros((5, 5)), 0.0)


def test_background_substitution():
    sim, real = sensor_backgrounds(CFG)
    np.testing.assert_allclose(background_substitute(sim, sim, real), real)
    bright = np.ones_like(sim)
    assert background_substitute(bright, sim, real + 1.0).max() == 1.0
    with pytest.raises(ValueError):
        background_substitute(sim[:, :4], sim, real)


def test_preprocess_without_backgrounds_is_just_the_blur():
    img = np.random.default_rng(2).uniform(size=(3, 12, 24))
    np.testing.assert_allclose(preprocess_tactile(img, PreprocessConfig(1.5)), gaussian_filter(img, 1.5))
    assert PreprocessConfig().radius == 6


def test_splice_round_trip_left_on_top():
    rng = np.random.default_rng(3)
    left, right = rng.uniform(size=(3, 4, 6)), rng.uniform(size=(3, 4, 6))
    spliced = splice_tactile(left, right)
    assert spliced.shape == (3, 8, 6)
    np.testing.assert_array_equal(spliced[:, :4], left)
    l2, r2 = unsplice_tactile(spliced)
    np.testing.assert_array_equal(l2, left)
    np.testing.assert_array_equal(r2, right)
    with pytest.raises(ValueError):
        splice_tactile(left, right[:, :3])


def test_noise_stays_in_unit_range():
    img = np.random.default_rng(4).uniform(size=(3, 8, 8))
    out = add_gaussian_noise(img, 0.5, np.random.default_rng(0))
    assert out.min() >= 0 and out.max() <= 1
    np.testing.assert_array_equal(add_gaussian_noise(img, 0.0, np.random.default_rng(0)), img)


@pytest.mark.parametrize("force,offset,label", [(20, 0.0, 1), (10, 0.0, 0), (15, 2.5, 1), (20, -2.6, 0), (15, 1.0, 1)])
def test_label_rule(force, offset, label):
    scene = SceneParams(15.0, offset, object_area(15.0, CFG))
    assert label_rule(scene, force) == label


def test_object_area_is_linear_in_threshold():
    lo, hi = CFG.threshold_range
    assert object_area(lo, CFG) == CFG.area_range[0]
    assert object_area(hi, CFG) == CFG.area_range[1]
    assert object_area((lo + hi) / 2, CFG) == pytest.approx(sum(CFG.area_range) / 2)


def test_generation_is_deterministic_and_prefix_stable():
    a = generate_dataset(CFG, 20, seed=5)
    b = generate_dataset(CFG, 30, seed=5)
    np.testing.assert_array_equal(a.visual, b.visual[:20])
    np.testing.assert_array_equal(a.tactile, b.tactile[:20])
    np.testing.assert_array_equal(a.label, b.label[:20])
    c = generate_dataset(CFG, 20, seed=6)
    assert not np.array_equal(a.visual, c.visual)


def test_generated_images_have_expected_layout():
    ds = generate_dataset(CFG, 10, seed=0)
    assert ds.visual.shape == (10, 3, 24, 24)
    assert ds.tactile.shape == (10, 3, 24, 24)
    assert ds.visual.dtype == np.float32
    for arr in (ds.visual, ds.tactile):
        assert arr.min() >= 0 and arr.max() <= 1
    np.testing.assert_array_equal(ds.label, [label_rule(s, f) for s, f in zip(ds.scenes, ds.force)])


def test_generate_rejects_empty():
    with pytest.raises(ValueError):
        generate_dataset(CFG, 0)


def test_scenes_match_rendered_dataset():
    ds = generate_dataset(CFG, 15, seed=9)
    scenes, forces, labels = generate_scenes(CFG, 15, seed=9)
    assert scenes == ds.scenes
    np.testing.assert_array_equal(forces, ds.force)
    np.testing.assert_array_equal(labels, ds.label)


def test_forces_avoid_the_threshold_gap():
    scenes, forces, _ = generate_scenes(CFG, 2000, seed=1)
    gaps = np.abs(forces - np.array([s.force_threshold for s in scenes]))
    assert gaps.min() >= CFG.force_gap


def test_tactile_intensity_grows_with_force():
    scene = SceneParams(15.0, 0.0, object_area(15.0, CFG))
    cfg = DataConfig(noise_std=0.0)
    lo = render_tactile(scene, 10.0, cfg, np.random.default_rng(0))
    hi = render_tactile(scene, 25.0, cfg, np.random.default_rng(0))
    assert hi.sum() > lo.sum()


def test_visual_object_grows_with_threshold():
    cfg = DataConfig(noise_std=0.0)
    small = render_visual(SceneParams(9.0, 0.0, object_area(9.0, cfg)), cfg, np.random.default_rng(0))
    large = render_visual(SceneParams(25.0, 0.0, object_area(25.0, cfg)), cfg, np.random.default_rng(0))
    orange = lambda img: np.sum(img[0] - img[2] > 0.5)  # noqa: E731
    assert orange(large) > orange(small)


def test_render_at_force_keeps_the_camera_view():
    scene = SceneParams(15.0, 1.0, object_area(15.0, CFG))
    view = render_visual(scene, CFG, np.random.default_rng(0))
    v, _ = render_at_force(scene, 20.0, CFG, np.random.default_rng(1), visual=view)
    assert v is view


def _best_decoder_accuracy(keys, labels):
    correct = 0
    for k in np.unique(keys):
        m = keys == k
        correct += max(labels[m].sum(), (1 - labels[m]).sum())
    return correct / len(labels)


def test_label_needs_both_latent_channels():
    scenes, forces, labels = generate_scenes(CFG, 20000, seed=11)
    t = np.array([s.force_threshold for s in scenes])
    ok = np.array([abs(s.offset) <= CFG.offset_margin for s in scenes])
    # both channels: the rule itself decodes every sample
    assert np.array_equal((forces >= t) & ok, labels.astype(bool))
    # one channel: majority vote per half-newton bin is the Bayes decoder
    visual_only = _best_decoder_accuracy(np.floor(2 * t).astype(int) * 2 + ok, labels)
    tactile_only = _best_decoder_accuracy(np.floor(2 * forces).astype(int) * 2 + ok, labels)
    assert visual_only < 0.90
    assert tactile_only < 0.90
    assert tactile_only > visual_only


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_scene_latents_stay_in_range(seed):
    scenes, forces, _ = generate_scenes(CFG, 10, seed)
    for s, f in zip(scenes, forces):
        assert CFG.threshold_range[0] <= s.force_threshold <= CFG.threshold_range[1]
        assert CFG.force_range[0] <= f <= CFG.force_range[1]
        assert abs(s.offset) <= CFG.offset_valid_max or CFG.offset_margin < abs(s.offset) <= CFG.offset_max
