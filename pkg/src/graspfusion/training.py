"""Optimisation, augmentation, metrics, cross-validation, ablations and the
minimum-force grasping policy."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as T
from .data import DataConfig, GraspDataset, SceneParams, label_rule, render_tactile, render_visual
from .fusion import FusionConfig, FusionModel, bce_loss
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # augmentation: bilinear resize then random crop; None disables it
    resize: int | None = None
    crop: int | None = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if (self.resize is None) != (self.crop is None):
            raise ValueError("resize and crop must be set together")
        if self.crop is not None and self.crop > self.resize:
            raise ValueError(f"crop {self.crop} larger than resize {self.resize}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def full_scale(cls, **kw) -> "TrainConfig":
        return cls(**{"learning_rate": 1e-4, "batch_size": 32, "epochs": 20, "resize": 256, "crop": 224, **kw})

    @classmethod
    def toy(cls, **kw) -> "TrainConfig":
        return cls(**{"learning_rate": 1e-3, "batch_size": 32, "epochs": 30, "resize": 20, "crop": 16, **kw})


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays, advances ``state``.

    A parameter whose gradient is missing or all zero is left exactly as it
    is, moments included, so a zero gradient never moves anything.
    """
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is not None and g.shape != p.shape:
            raise T.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if g is None or not g.any():
            out[name] = p
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return out


class Adam:
    """Adam over a dict of named Tensors, reading their ``.grad``."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        new = adam_step({k: p.data for k, p in self.params.items()},
                        {k: p.grad for k, p in self.params.items()},
                        self.state, self.lr, self.beta1, self.beta2, self.eps)
        for k, p in self.params.items():
            p.data = new[k]


# ---------------------------------------------------------------------------
# augmentation


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of the last two axes (exact on linear ramps)."""
    img = np.asarray(image)
    h, w = img.shape[-2:]

    def axis_weights(n_in, n_out):
        if n_out == 1 or n_in == 1:
            src = np.zeros(n_out)
        else:
            src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    i0, i1, wy = axis_weights(h, out_h)
    rows = img[..., i0, :] * (1 - wy)[:, None] + img[..., i1, :] * wy[:, None]
    j0, j1, wx = axis_weights(w, out_w)
    return rows[..., j0] * (1 - wx) + rows[..., j1] * wx


def augment(image: np.ndarray, cfg: TrainConfig, rng: np.random.Generator | None = None,
            train: bool = True) -> np.ndarray:
    """Resize to ``cfg.resize`` then crop ``cfg.crop``: random per sample when
    training, centred otherwise.  Accepts ``(C,H,W)`` or ``(N,C,H,W)``."""
    if cfg.resize is None:
        return image
    if cfg.crop > cfg.resize:
        raise ValueError("crop larger than image")
    img = bilinear_resize(image, cfg.resize, cfg.resize)
    c, r = cfg.crop, cfg.resize
    if not train or c == r:
        o = (r - c) // 2
        return img[..., o:o + c, o:o + c]
    if rng is None:
        raise ValueError("random crop needs an rng")
    if img.ndim == 3:
        y, x = rng.integers(0, r - c + 1, size=2)
        return img[..., y:y + c, x:x + c]
    offs = rng.integers(0, r - c + 1, size=(img.shape[0], 2))
    return np.stack([im[:, y:y + c, x:x + c] for im, (y, x) in zip(img, offs)])


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    """Accuracy/precision/recall from a confusion matrix.

    Precision (recall) is ``None`` when TP+FP (TP+FN) is zero.
    """

    accuracy: float
    precision: float | None
    recall: float | None
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "Metrics":
        n = tp + fp + fn + tn
        if n == 0:
            raise ValueError("metrics of an empty set")
        precision = tp / (tp + fp) if tp + fp else None
        recall = tp / (tp + fn) if tp + fn else None
        return cls((tp + tn) / n, precision, recall, tp, fp, fn, tn)

    @classmethod
    def from_predictions(cls, predicted, labels) -> "Metrics":
        p = np.asarray(predicted).astype(bool)
        y = np.asarray(labels).astype(bool)
        return cls.from_counts(int(np.sum(p & y)), int(np.sum(p & ~y)), int(np.sum(~p & y)), int(np.sum(~p & ~y)))


@dataclass(frozen=True)
class MetricSummary:
    """Mean and population standard deviation over folds; null precisions are skipped."""

    accuracy: tuple[float, float]
    precision: tuple[float, float] | None
    recall: tuple[float, float] | None
    null_precision: int = 0
    null_recall: int = 0

    @classmethod
    def of(cls, folds: Sequence[Metrics]) -> "MetricSummary":
        def stat(vals):
            vals = [v for v in vals if v is not None]
            return (float(np.mean(vals)), float(np.std(vals))) if vals else None

        return cls(
            stat([m.accuracy for m in folds]),
            stat([m.precision for m in folds]),
            stat([m.recall for m in folds]),
            sum(m.precision is None for m in folds),
            sum(m.recall is None for m in folds),
        )


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    metrics: Metrics


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0]).permutation(n)


def _prepare(images: np.ndarray, cfg: TrainConfig, rng, train: bool) -> np.ndarray:
    return np.asarray(augment(images, cfg, rng, train=train), dtype=np.float64)


def train(model: FusionModel, dataset: GraspDataset, cfg: TrainConfig,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> History:
    """Mini-batch Adam on mean BCE.  Epoch metrics are computed from the
    predictions made while training through that epoch."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    history = History()
    for epoch in range(cfg.epochs):
        order = epoch_permutation(cfg.seed, epoch, n)
        aug_rng = np.random.default_rng([cfg.seed, epoch, 1])
        total, preds = 0.0, np.empty(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            v = _prepare(dataset.visual[idx], cfg, aug_rng, True)
            h = _prepare(dataset.tactile[idx], cfg, aug_rng, True)
            y = dataset.label[idx].astype(np.float64)
            opt.zero_grad()
            p = model(v, h)
            loss = bce_loss(p, y)
            loss.backward()
            opt.step()
            history.batch_losses.append(loss.item())
            total += loss.item() * len(idx)
            preds[idx] = p.data
        rec = EpochRecord(epoch + 1, total / n,
                          Metrics.from_predictions(preds >= cfg.threshold, dataset.label))
        history.epochs.append(rec)
        logger.info("epoch %d loss %.4f acc %.4f", rec.epoch, rec.loss, rec.metrics.accuracy)
        if on_epoch is not None:
            on_epoch(rec)
    return history


def predict_proba(model: FusionModel, dataset: GraspDataset, cfg: TrainConfig, batch_size: int = 256) -> np.ndarray:
    out = []
    with T.no_grad():
        for i in range(0, len(dataset), batch_size):
            v = _prepare(dataset.visual[i:i + batch_size], cfg, None, False)
            h = _prepare(dataset.tactile[i:i + batch_size], cfg, None, False)
            out.append(model(v, h).data)
    return np.concatenate(out)


def evaluate(model: FusionModel, dataset: GraspDataset, cfg: TrainConfig | None = None,
             threshold: float = 0.5) -> Metrics:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    cfg = cfg or TrainConfig()
    p = predict_proba(model, dataset, cfg)
    return Metrics.from_predictions(p >= threshold, dataset.label)


def quantize_float32(model: FusionModel) -> None:
    """Round parameters to float32 precision, as stored in checkpoints."""
    for p in model.parameters().values():
        p.data = p.data.astype(np.float32).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# cross-validation and ablations


def kfold_splits(labels: np.ndarray, k: int, seed: int, stratified: bool = True) -> list[np.ndarray]:
    """Disjoint, covering test folds.  Sizes are ⌊N/k⌋ with the remainder
    going to the first folds; with ``stratified`` each class is shuffled and
    dealt round-robin so every fold keeps the class ratio."""
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    rng = np.random.default_rng([seed, 7])
    if stratified:
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    else:
        order = rng.permutation(n)
    return [np.sort(order[j::k]) for j in range(k)]


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


@dataclass
class FoldResult:
    fold: int
    history: History
    train: Metrics
    held_out: Metrics
    test: Metrics | None = None
    model: FusionModel | None = None


@dataclass
class CrossValidationResult:
    folds: list[FoldResult]

    @property
    def held_out(self) -> MetricSummary:
        return MetricSummary.of([f.held_out for f in self.folds])

    @property
    def test(self) -> MetricSummary | None:
        if any(f.test is None for f in self.folds):
            return None
        return MetricSummary.of([f.test for f in self.folds])


def kfold_cross_validate(dataset: GraspDataset, model_cfg: FusionConfig, cfg: TrainConfig, k: int = 3,
                         test_set: GraspDataset | None = None, keep_models: bool = False) -> CrossValidationResult:
    """Train a fresh model per fold; score it on its held-out fold and,
    if given, on a separate test set."""
    folds = kfold_splits(dataset.label, k, cfg.seed)
    results = []
    for j, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(len(dataset)), test_idx)
        fseed = fold_seed(cfg.seed, j)
        model = FusionModel.create(model_cfg, seed=fseed)
        tcfg = dataclasses.replace(cfg, seed=fseed)
        hist = train(model, dataset.subset(train_idx), tcfg)
        res = FoldResult(
            j,
            hist,
            evaluate(model, dataset.subset(train_idx), cfg, cfg.threshold),
            evaluate(model, dataset.subset(test_idx), cfg, cfg.threshold),
            evaluate(model, test_set, cfg, cfg.threshold) if test_set is not None else None,
            model if keep_models else None,
        )
        logger.info("%s fold %d held-out acc %.4f", model_cfg.variant, j, res.held_out.accuracy)
        results.append(res)
    return CrossValidationResult(results)


ABLATION_ROWS = (
    ("visual-only", "visual"),
    ("tactile-only", "tactile"),
    ("concat", "concat"),
    ("ours-m", "coattention"),
    ("ours", "full"),
)


def ablation_suite(dataset: GraspDataset, model_cfg: FusionConfig, cfg: TrainConfig, k: int = 3,
                   test_set: GraspDataset | None = None, rows: Iterable[tuple[str, str]] = ABLATION_ROWS,
                   keep_models: bool = False) -> dict[str, CrossValidationResult]:
    """Train every ablation variant under identical settings and splits."""
    return {
        name: kfold_cross_validate(dataset, dataclasses.replace(model_cfg, variant=variant), cfg, k,
                                   test_set, keep_models)
        for name, variant in rows
    }


# ---------------------------------------------------------------------------
# minimum-force policy


def force_grid(f_min: float = 10.0, f_max: float = 30.0, step: float = 1.0) -> np.ndarray:
    if step <= 0 or f_min > f_max:
        raise ValueError(f"invalid force range [{f_min}, {f_max}] with step {step}")
    n = int(np.floor((f_max - f_min) / step + 1e-9)) + 1
    return f_min + step * np.arange(n)


def minimum_force_policy(predictor: Callable[[SceneParams, float], bool], scene: SceneParams,
                         f_min: float = 10.0, f_max: float = 30.0, step: float = 1.0) -> tuple[float, bool]:
    """Raise the force from ``f_min`` in ``step`` increments until the predictor
    calls the grasp stable; give up at ``f_max`` with a ``False`` flag."""
    for f in force_grid(f_min, f_max, step):
        if predictor(scene, float(f)):
            return float(f), True
    return float(f_max), False


def oracle_predictor(scene: SceneParams, force: float) -> bool:
    return force >= scene.force_threshold


# Lift only when the predictor is fairly sure: an early lift drops the object,
# while one extra newton of grip costs little.
LIFT_THRESHOLD = 0.9


class ModelPredictor:
    """Predict grasp success by re-rendering the scene's tactile reading at each force.

    With several models (for example the fold models of a cross-validation
    run) the success probabilities are averaged before thresholding.
    """

    def __init__(self, models: FusionModel | Sequence[FusionModel], data_cfg: DataConfig, train_cfg: TrainConfig,
                 seed: int = 0, threshold: float = LIFT_THRESHOLD):
        self.models = [models] if isinstance(models, FusionModel) else list(models)
        if not self.models:
            raise ValueError("ModelPredictor needs at least one model")
        self.data_cfg, self.train_cfg = data_cfg, train_cfg
        self.seed, self.threshold = seed, threshold
        self._views: dict[SceneParams, np.ndarray] = {}

    def probability(self, scene: SceneParams, force: float) -> float:
        key = abs(hash(scene)) % 2**32
        if scene not in self._views:
            self._views[scene] = render_visual(scene, self.data_cfg, np.random.default_rng([self.seed, key]))
        rng = np.random.default_rng([self.seed, key, int(round(force * 1000))])
        tactile = render_tactile(scene, force, self.data_cfg, rng)
        v = _prepare(self._views[scene][None], self.train_cfg, None, False)
        h = _prepare(tactile[None], self.train_cfg, None, False)
        with T.no_grad():
            return float(np.mean([m(v, h).data[0] for m in self.models]))

    def __call__(self, scene: SceneParams, force: float) -> bool:
        return self.probability(scene, force) >= self.threshold


@dataclass(frozen=True)
class PolicyRow:
    grasp: int
    chosen_force: float
    predicted: bool
    actual: bool


def run_policy(predictor, scenes: Sequence[SceneParams], f_min: float = 10.0, f_max: float = 30.0,
               step: float = 1.0, margin: float = DataConfig.offset_margin) -> list[PolicyRow]:
    rows = []
    for i, s in enumerate(scenes):
        f, ok = minimum_force_policy(predictor, s, f_min, f_max, step)
        rows.append(PolicyRow(i, f, ok, bool(label_rule(s, f, margin))))
    return rows


def fixed_force_success(scenes: Sequence[SceneParams], force: float,
                        margin: float = DataConfig.offset_margin) -> float:
    return float(np.mean([label_rule(s, force, margin) for s in scenes]))


# ---------------------------------------------------------------------------
# CSV output

CSV_HEADER = ("run", "fold", "epoch", "loss", "accuracy", "precision", "recall")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def metrics_rows(run: str, fold: int, history: History, final: Metrics, final_loss: float | None = None):
    for rec in history.epochs:
        m = rec.metrics
        yield (run, str(fold), str(rec.epoch), _fmt(rec.loss), _fmt(m.accuracy), _fmt(m.precision), _fmt(m.recall))
    yield (run, str(fold), "final", _fmt(final_loss), _fmt(final.accuracy), _fmt(final.precision), _fmt(final.recall))


def write_metrics_csv(stream: io.TextIOBase, rows: Iterable[Sequence[str]], header: bool = True) -> None:
    w = csv.writer(stream, lineterminator="\n")
    if header:
        w.writerow(CSV_HEADER)
    w.writerows(rows)
