"""Paired real-to-sim tactile image translation with LSGAN objectives, and SSIM.

The generator is a small U-Net (two stride-2 encoder stages, two transposed
decoder stages, skip connections, sigmoid output) and the discriminator a
three-stage fully convolutional patch scorer conditioned on the input image.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .data import gaussian_filter
from .fusion import BCE_EPS
from .layers import Conv, ConvTranspose, frozen, named_parameters
from .tensor import ShapeError, Tensor
from .training import Adam

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GanPair:
    real: np.ndarray
    sim: np.ndarray


@dataclass(frozen=True)
class GanTrainConfig:
    lambda_bce: float = 10.0
    learning_rate: float = 2e-4
    batch_size: int = 10
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    width: int = 16

    def __post_init__(self):
        if self.lambda_bce < 0:
            raise ValueError("lambda_bce must be >= 0")


# ---------------------------------------------------------------------------
# networks


@dataclass
class GeneratorNet:
    down1: Conv
    down2: Conv
    up1: ConvTranspose
    up2: ConvTranspose
    out: Conv

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int = 3, width: int = 16) -> "GeneratorNet":
        return cls(
            Conv.init(rng, channels, width, 4, stride=2, padding=1),
            Conv.init(rng, width, 2 * width, 4, stride=2, padding=1),
            ConvTranspose.init(rng, 2 * width, width, 4, stride=2, padding=1),
            ConvTranspose.init(rng, 2 * width, width, 4, stride=2, padding=1),
            Conv.init(rng, width + channels, channels, 3, stride=1, padding=1),
        )

    def __call__(self, x: Tensor) -> Tensor:
        d1 = T.relu(self.down1(x))
        d2 = T.relu(self.down2(d1))
        u1 = T.relu(self.up1(d2))
        u2 = T.relu(self.up2(T.concat([u1, d1], axis=-3)))
        return T.sigmoid(self.out(T.concat([u2, x], axis=-3)))


@dataclass
class DiscriminatorNet:
    c1: Conv
    c2: Conv
    c3: Conv

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int = 3, width: int = 16) -> "DiscriminatorNet":
        return cls(
            Conv.init(rng, 2 * channels, width, 4, stride=2, padding=1),
            Conv.init(rng, width, 2 * width, 4, stride=2, padding=1),
            Conv.init(rng, 2 * width, 1, 3, stride=1, padding=1),
        )

    def __call__(self, x: Tensor, y: Tensor) -> Tensor:
        """Patch scores in (0, 1) for the pair (condition ``x``, candidate ``y``)."""
        if x.shape != y.shape:
            raise ShapeError(f"condition and candidate differ: {x.shape} vs {y.shape}")
        h = T.relu(self.c1(T.concat([x, y], axis=-3)))
        h = T.relu(self.c2(h))
        return T.sigmoid(self.c3(h))


# ---------------------------------------------------------------------------
# objectives

Discriminator = Callable[[Tensor, Tensor], Tensor]
Generator = Callable[[Tensor], Tensor]


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _freeze(net):
    return frozen(net) if isinstance(net, (GeneratorNet, DiscriminatorNet)) else net


def _d_terms(d_real: Tensor, d_fake: Tensor) -> Tensor:
    real = T.mul_scalar(T.mean(T.pow_scalar(T.add_scalar(d_real, -1.0), 2)), 0.5)
    fake = T.mul_scalar(T.mean(T.pow_scalar(d_fake, 2)), 0.5)
    return T.add(real, fake)


def _g_term(d_fake: Tensor) -> Tensor:
    return T.mul_scalar(T.mean(T.pow_scalar(T.add_scalar(d_fake, -1.0), 2)), 0.5)


def lsgan_d_loss(D: Discriminator, x, y, G: Generator) -> Tensor:
    """½·E[(D(x,y)−1)²] + ½·E[D(x,G(x))²]; G(x) is detached."""
    x, y = _t(x), _t(y)
    if x.shape != y.shape:
        raise ShapeError(f"input and target differ: {x.shape} vs {y.shape}")
    with T.no_grad():
        fake = G(x)
    return _d_terms(D(x, y), D(x, Tensor(fake.data)))


def lsgan_g_loss(D: Discriminator, x, G: Generator) -> Tensor:
    """½·E[(D(x,G(x))−1)²]; the discriminator is frozen so only G receives gradients."""
    x = _t(x)
    return _g_term(_freeze(D)(x, G(x)))


def pixel_bce(pred: Tensor, target) -> Tensor:
    """Mean per-pixel binary cross-entropy, offset by the target's own entropy.

    The offset is constant in ``pred``; it makes the term vanish when
    ``pred == target`` for non-binary targets without changing gradients.
    """
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    if y.shape != pred.shape:
        raise ShapeError(f"prediction and target differ: {pred.shape} vs {y.shape}")
    if ((y < 0) | (y > 1)).any() or ((pred.data < 0) | (pred.data > 1)).any():
        raise ValueError("pixel BCE needs images in [0, 1]; clamp upstream")
    p = T.clamp(pred, BCE_EPS, 1.0 - BCE_EPS)
    ce = T.add(T.mul(Tensor(y), T.log(p)), T.mul(Tensor(1.0 - y), T.log(T.add_scalar(T.neg(p), 1.0))))
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(y > 0, y * np.log(y), 0.0) + np.where(y < 1, (1 - y) * np.log1p(-y), 0.0)
    return T.add_scalar(T.neg(T.mean(ce)), float(np.mean(ent)))


def gan_objectives(D: Discriminator, G: Generator, x, y, lambda_bce: float = 10.0) -> tuple[Tensor, Tensor]:
    """(discriminator loss, generator loss = adversarial + λ·pixel BCE)."""
    x, y = _t(x), _t(y)
    if x.shape != y.shape:
        raise ShapeError(f"input and target differ: {x.shape} vs {y.shape}")
    fake = G(x)
    loss_d = _d_terms(D(x, y), D(x, Tensor(fake.data)))
    adv = _g_term(_freeze(D)(x, fake))
    if lambda_bce == 0:
        return loss_d, adv
    return loss_d, T.add(adv, T.mul_scalar(pixel_bce(fake, y), lambda_bce))


# ---------------------------------------------------------------------------
# training


@dataclass
class GanHistory:
    loss_d: list[float] = field(default_factory=list)
    loss_g: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss_d)


def _stack(pairs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pairs, PairDataset):
        return pairs.real, pairs.sim
    return np.stack([p.real for p in pairs]), np.stack([p.sim for p in pairs])


def init_gan(cfg: GanTrainConfig, channels: int = 3) -> tuple[GeneratorNet, DiscriminatorNet]:
    rng = np.random.default_rng(cfg.seed)
    return GeneratorNet.init(rng, channels, cfg.width), DiscriminatorNet.init(rng, channels, cfg.width)


def train_gan(pairs, cfg: GanTrainConfig | None = None,
              nets: tuple[GeneratorNet, DiscriminatorNet] | None = None) -> tuple[GeneratorNet, DiscriminatorNet, GanHistory]:
    """Alternate one discriminator and one generator Adam step per batch."""
    cfg = cfg or GanTrainConfig()
    real, sim = _stack(pairs)
    n = len(real)
    if n == 0:
        raise ValueError("cannot train on an empty pair set")
    G, D = nets or init_gan(cfg, real.shape[1])
    opt_g = Adam(dict(named_parameters(G)), cfg.learning_rate, cfg.beta1, cfg.beta2)
    opt_d = Adam(dict(named_parameters(D)), cfg.learning_rate, cfg.beta1, cfg.beta2)
    history = GanHistory()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sum_d = sum_g = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = Tensor(np.asarray(real[idx], dtype=np.float64))
            y = Tensor(np.asarray(sim[idx], dtype=np.float64))
            loss_d = d_step(D, G, x, y, opt_d)
            loss_g = g_step(D, G, x, y, opt_g, cfg.lambda_bce)
            sum_d += loss_d * len(idx)
            sum_g += loss_g * len(idx)
        history.loss_d.append(sum_d / n)
        history.loss_g.append(sum_g / n)
        logger.info("gan epoch %d  D %.4f  G %.4f", epoch + 1, history.loss_d[-1], history.loss_g[-1])
    return G, D, history


def d_step(D: DiscriminatorNet, G: GeneratorNet, x: Tensor, y: Tensor, opt: Adam) -> float:
    """One discriminator update; the generator is only evaluated, never updated."""
    opt.zero_grad()
    loss = lsgan_d_loss(D, x, y, _freeze(G))
    loss.backward()
    opt.step()
    return loss.item()


def g_step(D: DiscriminatorNet, G: GeneratorNet, x: Tensor, y: Tensor, opt: Adam, lambda_bce: float) -> float:
    """One generator update through a frozen discriminator."""
    opt.zero_grad()
    fake = G(x)
    loss = _g_term(_freeze(D)(x, fake))
    if lambda_bce:
        loss = T.add(loss, T.mul_scalar(pixel_bce(fake, y), lambda_bce))
    loss.backward()
    opt.step()
    return loss.item()


def translate(G: Generator, real: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Map real-style images (``(C,H,W)`` or ``(N,C,H,W)``) to sim-style ones."""
    real = np.asarray(real, dtype=np.float64)
    if (real < 0).any() or (real > 1).any():
        raise ValueError("translate expects images in [0, 1]")
    with T.no_grad():
        if real.ndim == 3:
            return G(Tensor(real)).data
        return np.concatenate([G(Tensor(real[i:i + batch_size])).data for i in range(0, len(real), batch_size)])


def identity_generator(x: Tensor) -> Tensor:
    return x


# ---------------------------------------------------------------------------
# SSIM


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8, c1: float = 0.01**2, c2: float = 0.03**2,
         data_range: float = 1.0) -> float:
    """Mean structural similarity over all ``window``×``window`` positions, channel-averaged.

    Window statistics are plain (unweighted, population) means.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ValueError(f"ssim: image {a.shape} smaller than window {window}")
    c1 *= data_range**2
    c2 *= data_range**2

    def wmean(x):
        return sliding_window_view(x, (window, window), axis=(-2, -1)).mean(axis=(-2, -1))

    mu_a, mu_b = wmean(a), wmean(b)
    var_a = wmean(a * a) - mu_a**2
    var_b = wmean(b * b) - mu_b**2
    cov = wmean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def mean_ssim(pred: np.ndarray, target: np.ndarray, **kw) -> tuple[float, np.ndarray]:
    scores = np.array([ssim(p, t, **kw) for p, t in zip(pred, target)])
    return float(scores.mean()), scores


# ---------------------------------------------------------------------------
# synthetic paired data


@dataclass
class PairDataset:
    real: np.ndarray
    sim: np.ndarray

    def __len__(self) -> int:
        return len(self.real)

    def __getitem__(self, i: int) -> GanPair:
        return GanPair(self.real[i], self.sim[i])

    def subset(self, idx) -> "PairDataset":
        return PairDataset(self.real[idx], self.sim[idx])


SIM_BACKGROUND = 0.08


def _texture(size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    return 0.04 * np.sin(2 * np.pi * 3 * xx) * np.cos(2 * np.pi * 2 * yy)


def corrupt(sim: np.ndarray) -> np.ndarray:
    """Fixed sim-to-real corruption: mild blur, gain with vignette, background texture."""
    size = sim.shape[-1]
    yy, xx = (np.mgrid[0:size, 0:size] + 0.5) / size - 0.5
    vignette = 1.0 - 0.6 * (xx**2 + yy**2)
    tint = np.array([1.0, 0.92, 1.08])[:, None, None]
    out = 0.85 * gaussian_filter(sim, 0.8) * vignette * tint + 0.1 + _texture(size)
    return np.clip(out, 0.0, 1.0)


def render_sim_pattern(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """1-3 coloured Gaussian contact blobs on a dark, flat background."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((3, size, size), SIM_BACKGROUND)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
        s = rng.uniform(0.06, 0.14) * size
        amp = rng.uniform(0.4, 0.85)
        color = rng.uniform(0.6, 1.0, size=3)
        img += amp * color[:, None, None] * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return np.clip(img, 0.0, 1.0)


def generate_paired_toy(n: int, seed: int = 0, size: int = 32) -> PairDataset:
    if n <= 0:
        raise ValueError("n must be positive")
    sim = np.stack([render_sim_pattern(np.random.default_rng([seed, i]), size) for i in range(n)])
    real = np.stack([corrupt(s) for s in sim])
    return PairDataset(real.astype(np.float32), sim.astype(np.float32))


def train_test_split(pairs: PairDataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[PairDataset, PairDataset]:
    order = np.random.default_rng([seed, 80]).permutation(len(pairs))
    k = int(round(train_fraction * len(pairs)))
    return pairs.subset(np.sort(order[:k])), pairs.subset(np.sort(order[k:]))
