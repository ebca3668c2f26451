"""Planted-rule visual-tactile grasp data and tactile preprocessing.

Each scene has a latent force threshold, a grasp-placement offset and an
object size that grows with the threshold.  The wrist-camera image shows the
object between the gripper jaws (size and offset visible, force invisible);
the spliced tactile image shows a contact bump per sensor whose intensity
grows with the applied force and whose horizontal displacement mirrors the
offset (force and offset visible, threshold invisible).  A grasp succeeds iff
``force >= threshold`` and ``|offset| <= margin``, so neither modality alone
determines the label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SceneParams:
    force_threshold: float
    offset: float
    object_size: float


@dataclass(frozen=True)
class Sample:
    visual: np.ndarray
    tactile: np.ndarray
    force: float
    label: int


@dataclass(frozen=True)
class PreprocessConfig:
    sigma: float = 2.0
    sim_background: np.ndarray | None = field(default=None, repr=False, compare=False)
    real_background: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def radius(self) -> int:
        return int(math.ceil(3 * self.sigma))


@dataclass(frozen=True)
class DataConfig:
    visual_size: int = 24
    sensor_height: int = 12
    sensor_width: int = 24
    threshold_range: tuple[float, float] = (8.0, 28.0)
    threshold_mean: float = 16.0
    threshold_std: float = 7.0
    force_range: tuple[float, float] = (8.0, 32.0)
    # forces closer than this to the threshold are resampled
    force_gap: float = 1.0
    valid_fraction: float = 0.95
    offset_valid_max: float = 2.0
    offset_margin: float = 2.5
    offset_max: float = 4.0
    area_range: tuple[float, float] = (12.0, 64.0)
    noise_std: float = 0.02
    tactile_sigma: float = 2.0

    @property
    def tactile_shape(self) -> tuple[int, int, int]:
        return (3, 2 * self.sensor_height, self.sensor_width)

    @property
    def visual_shape(self) -> tuple[int, int, int]:
        return (3, self.visual_size, self.visual_size)


def label_rule(scene: SceneParams, force: float, margin: float = DataConfig.offset_margin) -> int:
    return int(force >= scene.force_threshold and abs(scene.offset) <= margin)


def object_area(threshold: float, cfg: DataConfig) -> float:
    lo, hi = cfg.threshold_range
    a0, a1 = cfg.area_range
    return a0 + (a1 - a0) * (threshold - lo) / (hi - lo)


def sample_scene(rng: np.random.Generator, cfg: DataConfig) -> SceneParams:
    lo, hi = cfg.threshold_range
    while True:
        t = rng.normal(cfg.threshold_mean, cfg.threshold_std)
        if lo <= t <= hi:
            break
    if rng.random() < cfg.valid_fraction:
        offset = rng.uniform(-cfg.offset_valid_max, cfg.offset_valid_max)
    else:
        lo_bad = cfg.offset_margin + 0.5 * (cfg.offset_max - cfg.offset_margin)
        offset = rng.uniform(lo_bad, cfg.offset_max) * rng.choice((-1.0, 1.0))
    return SceneParams(float(t), float(offset), object_area(t, cfg))


def sample_force(rng: np.random.Generator, scene: SceneParams, cfg: DataConfig) -> float:
    while True:
        f = rng.uniform(*cfg.force_range)
        if abs(f - scene.force_threshold) >= cfg.force_gap:
            return float(f)


# ---------------------------------------------------------------------------
# image preprocessing


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    """2-D Gaussian with entries ∝ exp(-(x²+y²)/2σ²), rescaled to sum to 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = int(math.ceil(3 * sigma)) if radius is None else radius
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2 * sigma**2))
    return g / g.sum()


def gaussian_filter(image: np.ndarray, sigma: float = PreprocessConfig.sigma) -> np.ndarray:
    """Per-channel blur with the normalised kernel and mirror-reflected borders.

    Works on ``(H, W)`` or ``(..., H, W)`` arrays.  The kernel is separable, so
    it is applied as two 1-D passes.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    img = np.asarray(image, dtype=np.float64)
    r = int(math.ceil(3 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    pad = [(0, 0)] * (img.ndim - 2) + [(r, r), (r, r)]
    p = np.pad(img, pad, mode="symmetric")
    win = np.lib.stride_tricks.sliding_window_view(p, 2 * r + 1, axis=-1)
    p = win @ g
    win = np.lib.stride_tricks.sliding_window_view(p, 2 * r + 1, axis=-2)
    return win @ g


def background_substitute(image: np.ndarray, sim_background: np.ndarray, real_background: np.ndarray) -> np.ndarray:
    """Swap the simulated sensor background for the real one, clamped to [0, 1]."""
    image, sim_background, real_background = map(np.asarray, (image, sim_background, real_background))
    if not image.shape == sim_background.shape == real_background.shape:
        raise ValueError(
            f"shape mismatch: image {image.shape}, sim bg {sim_background.shape}, real bg {real_background.shape}"
        )
    return np.clip(image - sim_background + real_background, 0.0, 1.0)


def preprocess_tactile(image: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    out = gaussian_filter(image, cfg.sigma)
    if cfg.sim_background is not None and cfg.real_background is not None:
        out = background_substitute(out, cfg.sim_background, cfg.real_background)
    return out


def splice_tactile(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Stack the two sensor images vertically, left sensor on top."""
    if left.shape != right.shape:
        raise ValueError(f"sensor images differ in shape: {left.shape} vs {right.shape}")
    return np.concatenate([left, right], axis=-2)


def unsplice_tactile(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = image.shape[-2]
    if h % 2:
        raise ValueError(f"spliced image height must be even, got {h}")
    return image[..., : h // 2, :], image[..., h // 2:, :]


def add_gaussian_noise(image: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    if std < 0:
        raise ValueError("noise std must be >= 0")
    if std == 0:
        return np.array(image, copy=True)
    return np.clip(image + rng.normal(0.0, std, size=np.shape(image)), 0.0, 1.0)


# ---------------------------------------------------------------------------
# rendering

_OBJECT_RGB = np.array([0.9, 0.5, 0.15])
_JAW_RGB = np.array([0.85, 0.85, 0.9])
_TABLE_RGB = np.array([0.35, 0.33, 0.30])
_GEL_RGB = np.array([0.6, 0.9, 1.0])


def sensor_backgrounds(cfg: DataConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed simulated and real backgrounds for one sensor, shape (3, h, w)."""
    h, w = cfg.sensor_height, cfg.sensor_width
    yy, xx = np.mgrid[0:h, 0:w] / np.array([max(h - 1, 1), max(w - 1, 1)])[:, None, None]
    sim = np.stack([np.full((h, w), v) for v in (0.20, 0.22, 0.28)])
    vignette = 1.0 - 0.25 * ((xx - 0.5) ** 2 + (yy - 0.5) ** 2)
    real = np.stack([
        (0.30 + 0.05 * xx) * vignette,
        (0.26 + 0.04 * np.sin(6.0 * xx)) * vignette,
        (0.34 - 0.05 * yy) * vignette,
    ])
    return sim, real


def render_visual(scene: SceneParams, cfg: DataConfig, rng: np.random.Generator) -> np.ndarray:
    n = cfg.visual_size
    c = (n - 1) / 2.0
    jitter = rng.uniform(-1.0, 1.0, size=2)
    table = _TABLE_RGB + rng.uniform(-0.03, 0.03, size=3)
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    img = np.broadcast_to(table[:, None, None], (3, n, n)).copy()
    cy, cx = c + jitter[0], c + jitter[1]
    jaw_dx = 0.3 * n
    for side in (-1.0, 1.0):
        jaw = np.clip(1.0 - np.abs(xx - (cx + side * jaw_dx)) + 0.5, 0, 1) * (np.abs(yy - cy) <= 0.25 * n)
        img = img * (1 - jaw) + _JAW_RGB[:, None, None] * jaw
    radius = math.sqrt(scene.object_size / math.pi)
    dist = np.hypot(yy - cy, xx - (cx + scene.offset))
    alpha = np.clip(radius - dist + 0.5, 0.0, 1.0)
    img = img * (1 - alpha) + _OBJECT_RGB[:, None, None] * alpha
    return add_gaussian_noise(img, cfg.noise_std, rng)


def render_tactile(scene: SceneParams, force: float, cfg: DataConfig, rng: np.random.Generator,
                   backgrounds: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    sim_bg, real_bg = backgrounds or sensor_backgrounds(cfg)
    h, w = cfg.sensor_height, cfg.sensor_width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    lo, hi = cfg.force_range
    amp = 0.08 + 0.6 * (force - lo) / (hi - lo)
    sensors = []
    for side in (1.0, -1.0):
        cx = (w - 1) / 2.0 + side * 1.5 * scene.offset
        bump = amp * np.exp(-((yy - (h - 1) / 2.0) ** 2 + (xx - cx) ** 2) / (2 * 2.0**2))
        raw = sim_bg + _GEL_RGB[:, None, None] * bump
        pre = PreprocessConfig(cfg.tactile_sigma, sim_bg, real_bg)
        sensors.append(preprocess_tactile(raw, pre))
    return add_gaussian_noise(splice_tactile(*sensors), cfg.noise_std, rng)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class GraspDataset:
    visual: np.ndarray
    tactile: np.ndarray
    force: np.ndarray
    label: np.ndarray
    scenes: list[SceneParams] | None = None

    def __len__(self) -> int:
        return len(self.label)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.visual[i], self.tactile[i], float(self.force[i]), int(self.label[i]))

    def subset(self, idx) -> "GraspDataset":
        idx = np.asarray(idx)
        if idx.size == 0:
            idx = idx.astype(np.intp)
        scenes = None if self.scenes is None else [self.scenes[i] for i in idx]
        return GraspDataset(self.visual[idx], self.tactile[idx], self.force[idx], self.label[idx], scenes)

    @property
    def positive_fraction(self) -> float:
        return float(np.mean(self.label)) if len(self) else float("nan")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def generate_scenes(cfg: DataConfig, n: int, seed: int) -> tuple[list[SceneParams], np.ndarray, np.ndarray]:
    """Latent scenes, applied forces and labels without rendering any image."""
    scenes, forces = [], []
    for i in range(n):
        rng = sample_rng(seed, i)
        s = sample_scene(rng, cfg)
        scenes.append(s)
        forces.append(sample_force(rng, s, cfg))
    labels = np.array([label_rule(s, f, cfg.offset_margin) for s, f in zip(scenes, forces)], dtype=np.uint8)
    return scenes, np.asarray(forces), labels


def generate_dataset(cfg: DataConfig | None = None, n: int = 1000, seed: int = 0) -> GraspDataset:
    """Render ``n`` grasp trials; a pure function of ``(cfg, n, seed)``.

    Each sample draws from its own stream ``default_rng([seed, i])``, so a
    dataset of size n is a prefix of any larger one under the same seed.
    """
    cfg = cfg or DataConfig()
    if n <= 0:
        raise ValueError("n must be positive")
    bgs = sensor_backgrounds(cfg)
    visual = np.empty((n, *cfg.visual_shape), dtype=np.float32)
    tactile = np.empty((n, *cfg.tactile_shape), dtype=np.float32)
    forces = np.empty(n)
    labels = np.empty(n, dtype=np.uint8)
    scenes = []
    for i in range(n):
        rng = sample_rng(seed, i)
        s = sample_scene(rng, cfg)
        f = sample_force(rng, s, cfg)
        visual[i] = render_visual(s, cfg, rng)
        tactile[i] = render_tactile(s, f, cfg, rng, bgs)
        forces[i] = f
        labels[i] = label_rule(s, f, cfg.offset_margin)
        scenes.append(s)
    return GraspDataset(visual, tactile, forces, labels, scenes)


def render_at_force(scene: SceneParams, force: float, cfg: DataConfig, rng: np.random.Generator,
                    visual: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Re-observe a scene at another gripping force; the camera view is unchanged."""
    if visual is None:
        visual = render_visual(scene, cfg, rng)
    return visual, render_tactile(scene, force, cfg, rng)
