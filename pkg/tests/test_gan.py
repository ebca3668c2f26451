import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from graspfusion import tensor as T
from graspfusion.gan import (SIM_BACKGROUND, DiscriminatorNet, GanTrainConfig, GeneratorNet, corrupt, d_step,
                             g_step, gan_objectives, generate_paired_toy, identity_generator, init_gan,
                             lsgan_d_loss, lsgan_g_loss, pixel_bce, ssim, train_gan, train_test_split, translate)
from graspfusion.layers import named_parameters
from graspfusion.tensor import ShapeError, Tensor, grad_check
from graspfusion.training import Adam


def images(seed, n=2, size=8):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, size=(n, 3, size, size)), rng.uniform(0.05, 0.95, size=(n, 3, size, size))


# ---------------------------------------------------------------------------
# objectives with stubbed players


def test_d_loss_half_everywhere_is_a_quarter():
    x, y = images(0)
    D = lambda x, y: Tensor(np.full((len(x.data), 1, 2, 2), 0.5))  # noqa: E731
    assert lsgan_d_loss(D, x, y, identity_generator).item() == 0.25


def test_d_loss_zero_at_the_optimum():
    x, y = images(1)

    def D(a, b):
        return Tensor(np.full((len(a.data), 1, 2, 2), 1.0 if np.array_equal(b.data, y) else 0.0))

    assert lsgan_d_loss(D, x, y, identity_generator).item() == 0.0


def test_d_loss_matches_scalar_recomputation():
    x, y = images(2)
    rng = np.random.default_rng(2)
    real_scores, fake_scores = rng.uniform(size=(2, 1, 2, 2)), rng.uniform(size=(2, 1, 2, 2))

    def D(a, b):
        return Tensor(real_scores if np.array_equal(b.data, y) else fake_scores)

    want = 0.5 * sum((s - 1) ** 2 for s in real_scores.ravel()) / 8 + 0.5 * sum(s**2 for s in fake_scores.ravel()) / 8
    assert lsgan_d_loss(D, x, y, identity_generator).item() == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("score,want", [(1.0, 0.0), (0.0, 0.5)])
def test_g_loss_stub_values(score, want):
    x, _ = images(3)
    D = lambda a, b: Tensor(np.full((len(a.data), 1, 2, 2), score))  # noqa: E731
    assert lsgan_g_loss(D, x, identity_generator).item() == want


def test_reconstruction_vanishes_for_a_perfect_generator():
    x, _ = images(4)
    assert abs(pixel_bce(Tensor(x), x).item()) < 1e-9
    binary = (x > 0.5).astype(float)
    assert abs(pixel_bce(Tensor(binary), binary).item()) < 1e-6


def test_reconstruction_is_positive_otherwise():
    x, y = images(5)
    assert pixel_bce(Tensor(x), y).item() > 1e-3


def test_reconstruction_has_bce_gradient():
    x, y = images(6)
    p = Tensor(x, requires_grad=True)
    pixel_bce(p, y).backward()
    np.testing.assert_allclose(p.grad, (x - y) / (x * (1 - x)) / x.size, rtol=1e-10)


def test_pixel_range_contract():
    x, y = images(7)
    with pytest.raises(ValueError):
        pixel_bce(Tensor(x), y + 1.0)
    with pytest.raises(ValueError):
        gan_objectives(lambda a, b: Tensor(np.full((2, 1, 2, 2), 0.5)), lambda a: T.mul_scalar(a, 3.0), x, y)


def test_lambda_zero_drops_the_reconstruction():
    x, y = images(8)
    G, D = init_gan(GanTrainConfig(width=4))
    _, plain = gan_objectives(D, G, x, y, lambda_bce=0.0)
    assert plain.item() == pytest.approx(lsgan_g_loss(D, x, G).item(), rel=1e-12)
    _, full = gan_objectives(D, G, x, y, lambda_bce=10.0)
    assert full.item() == pytest.approx(plain.item() + 10 * pixel_bce(G(Tensor(x)), y).item(), rel=1e-12)


def test_objectives_reject_mismatched_pairs():
    x, y = images(9)
    G, D = init_gan(GanTrainConfig(width=4))
    with pytest.raises(ShapeError):
        gan_objectives(D, G, x, y[:, :, :4])


# ---------------------------------------------------------------------------
# networks


def test_network_shapes():
    G, D = init_gan(GanTrainConfig(width=4))
    x = Tensor(np.random.default_rng(0).uniform(size=(2, 3, 32, 32)))
    out = G(x)
    assert out.shape == x.shape
    assert ((out.data > 0) & (out.data < 1)).all()
    scores = D(x, out)
    assert scores.shape == (2, 1, 8, 8)
    assert ((scores.data > 0) & (scores.data < 1)).all()


def test_generator_loss_reaches_every_generator_parameter():
    G, D = init_gan(GanTrainConfig(width=4, seed=1))
    x, _ = images(10, size=16)
    lsgan_g_loss(D, x, G).backward()
    g_params = [t for _, t in named_parameters(G)]
    assert sum(t.grad is not None and np.any(t.grad) for t in g_params) == len(g_params)
    assert all(t.grad is None for _, t in named_parameters(D))


def test_discriminator_loss_leaves_the_generator_alone():
    G, D = init_gan(GanTrainConfig(width=4, seed=2))
    x, y = images(11, size=16)
    lsgan_d_loss(D, x, y, G).backward()
    assert all(t.grad is None for _, t in named_parameters(G))
    assert all(t.grad is not None for _, t in named_parameters(D))


def _snapshot(net):
    return {k: t.data.copy() for k, t in named_parameters(net)}


def test_opposite_player_is_bit_identical_across_a_step():
    G, D = init_gan(GanTrainConfig(width=4, seed=3))
    x, y = (Tensor(a) for a in images(12, size=16))
    opt_d = Adam(dict(named_parameters(D)), 2e-4, 0.5)
    opt_g = Adam(dict(named_parameters(G)), 2e-4, 0.5)
    g_before, d_before = _snapshot(G), _snapshot(D)
    d_step(D, G, x, y, opt_d)
    assert all(np.array_equal(G_v, g_before[k]) for k, G_v in _snapshot(G).items())
    assert any(not np.array_equal(v, d_before[k]) for k, v in _snapshot(D).items())
    d_after = _snapshot(D)
    g_step(D, G, x, y, opt_g, 10.0)
    assert all(np.array_equal(v, d_after[k]) for k, v in _snapshot(D).items())
    assert any(not np.array_equal(v, g_before[k]) for k, v in _snapshot(G).items())


@pytest.mark.parametrize("seed", range(2))
def test_gan_losses_gradcheck_through_the_generator(seed):
    G, D = init_gan(GanTrainConfig(width=2, seed=seed))
    x, y = images(seed, n=1, size=8)
    params = [t for _, t in named_parameters(G)]

    def loss(*_):
        return gan_objectives(D, G, x, y, 10.0)[1]

    assert grad_check(loss, params, max_coords=4, rng=np.random.default_rng(seed)) < 1e-4


# ---------------------------------------------------------------------------
# training


def test_train_gan_is_deterministic_and_logs_each_epoch():
    pairs = generate_paired_toy(12, seed=0, size=16)
    cfg = GanTrainConfig(epochs=2, batch_size=5, width=4, seed=5)
    _, _, h1 = train_gan(pairs, cfg)
    G, _, h2 = train_gan(pairs, cfg)
    assert len(h1) == 2
    assert h1.loss_d == h2.loss_d and h1.loss_g == h2.loss_g
    out = translate(G, pairs.real)
    assert out.shape == pairs.real.shape
    np.testing.assert_array_equal(out, translate(G, pairs.real))
    assert ((out > 0) & (out < 1)).all()


def test_train_gan_rejects_empty():
    pairs = generate_paired_toy(4, seed=0, size=16)
    with pytest.raises(ValueError):
        train_gan(pairs.subset([]), GanTrainConfig(width=4))


def test_negative_lambda_is_rejected():
    with pytest.raises(ValueError):
        GanTrainConfig(lambda_bce=-1.0)


def test_translate_rejects_out_of_range_input():
    with pytest.raises(ValueError):
        translate(identity_generator, np.full((3, 8, 8), 1.5))


# ---------------------------------------------------------------------------
# paired toy data


def test_toy_pairs_are_deterministic_and_in_range():
    a, b = generate_paired_toy(6, seed=3), generate_paired_toy(6, seed=3)
    np.testing.assert_array_equal(a.real, b.real)
    np.testing.assert_array_equal(a.sim, b.sim)
    for arr in (a.real, a.sim):
        assert arr.shape == (6, 3, 32, 32) and arr.min() >= 0 and arr.max() <= 1


def _centroid(img):
    w = np.clip(img.sum(0), 0, None)
    yy, xx = np.mgrid[0:img.shape[-2], 0:img.shape[-1]]
    return np.array([(w * yy).sum(), (w * xx).sum()]) / w.sum()


def test_toy_pairs_are_pixel_aligned():
    pairs = generate_paired_toy(20, seed=1)
    blank_real = corrupt(np.full((3, 32, 32), SIM_BACKGROUND))
    for i in range(20):
        sim_signal = pairs.sim[i] - SIM_BACKGROUND
        real_signal = pairs.real[i] - blank_real
        assert np.linalg.norm(_centroid(sim_signal) - _centroid(real_signal)) < 0.5


def test_train_test_split_is_eighty_twenty_and_disjoint():
    pairs = generate_paired_toy(50, seed=2, size=16)
    tr, te = train_test_split(pairs)
    assert (len(tr), len(te)) == (40, 10)
    rows = {arr.tobytes() for arr in tr.sim} | {arr.tobytes() for arr in te.sim}
    assert len(rows) == 50


# ---------------------------------------------------------------------------
# SSIM


def test_ssim_of_identical_images():
    x = np.random.default_rng(0).uniform(size=(3, 32, 32))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)


def test_ssim_constant_images_closed_form():
    a, b = np.full((16, 16), 0.5), np.full((16, 16), 0.6)
    want = (2 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4)
    assert ssim(a, b) == pytest.approx(want, rel=1e-12)
    assert ssim(a, b) == pytest.approx(0.9836, abs=1e-4)


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_scikit_image_uniform_window(seed):
    # scikit-image only takes odd windows; use 7 for both
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(20, 24))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
    want = structural_similarity(a, b, win_size=7, data_range=1.0, gaussian_weights=False,
                                 use_sample_covariance=False)
    assert ssim(a, b, window=7) == pytest.approx(want, rel=1e-9)


def test_ssim_rejects_mismatch():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 9)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 0.5))
def test_ssim_bounded_and_symmetric(seed, noise):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(3, 10, 10))
    b = np.clip(a + rng.normal(scale=noise + 1e-3, size=a.shape), 0, 1)
    s = ssim(a, b)
    assert s == ssim(b, a)
    assert -1.0 <= s < 1.0
