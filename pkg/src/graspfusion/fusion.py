"""Dual-stream visual-tactile fusion classifier.

Pipeline per stream: conv backbone stub -> 1x1 reduction to width ``d`` ->
flatten to an ``(H*W, d)`` sequence.  The two sequences pass through ``L``
fusion layers (self-attention per stream, then symmetric cross-attention),
are concatenated along the sequence axis, go through one more self-attention
block (co-attention) and are mean-pooled into a single ``d``-vector that the
prediction head maps to a success probability.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import tensor as T
from .attention import FfnParams, McaParams, MhaConfig, MsaParams, ffn, mca_block, msa_block, sinusoidal_positions
from .layers import Conv, named_parameters, xavier_uniform
from .tensor import ShapeError, Tensor

VARIANTS = ("full", "coattention", "concat", "visual", "tactile")
# backbone features pooled and concatenated straight into the head; the
# unimodal variants are this network with the other modality zeroed out
DIRECT_VARIANTS = ("concat", "visual", "tactile")

BCE_EPS = 1e-7


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    # (out_channels, kernel, stride); padding is kernel // 2
    stages: tuple[tuple[int, int, int], ...] = ((8, 3, 1), (16, 3, 2), (32, 3, 2))
    d: int = 32

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        for _, k, s in self.stages:
            h = T.conv_output_size(h, k, s, k // 2)
            w = T.conv_output_size(w, k, s, k // 2)
        return h, w


@dataclass(frozen=True)
class FusionConfig:
    d: int = 32
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int | None = None
    head_hidden: int | None = None
    variant: str = "full"
    aggregation: str = "mean"
    visual_backbone: BackboneConfig = field(default_factory=BackboneConfig)
    tactile_backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.aggregation not in ("mean", "cls"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        for bb in (self.visual_backbone, self.tactile_backbone):
            if bb.d != self.d:
                raise ValueError(f"backbone reduce width {bb.d} differs from model width {self.d}")
        MhaConfig(self.n_heads, self.d)

    @property
    def mha(self) -> MhaConfig:
        return MhaConfig(self.n_heads, self.d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        d = dict(d)
        for key in ("visual_backbone", "tactile_backbone"):
            if key in d:
                bb = dict(d[key])
                bb["stages"] = tuple(tuple(s) for s in bb.get("stages", BackboneConfig.stages))
                d[key] = BackboneConfig(**bb)
        return cls(**d)

    @classmethod
    def full_scale(cls) -> "FusionConfig":
        return cls(d=512, n_heads=8, n_layers=4,
                   visual_backbone=BackboneConfig(d=512), tactile_backbone=BackboneConfig(d=512))


@dataclass
class Backbone:
    stages: list[Conv]
    reduce: Conv

    @classmethod
    def init(cls, rng, cfg: BackboneConfig) -> "Backbone":
        stages, c = [], cfg.in_channels
        for out, k, s in cfg.stages:
            stages.append(Conv.init(rng, c, out, k, stride=s, padding=k // 2))
            c = out
        return cls(stages, Conv.init(rng, c, cfg.d, 1))


@dataclass
class FusionLayer:
    msa_v: MsaParams
    msa_h: MsaParams
    mca: McaParams


@dataclass
class FusionParams:
    visual: Backbone
    tactile: Backbone
    layers: list[FusionLayer]
    co_attention: MsaParams | None
    head: FfnParams
    cls_token: Tensor | None = None


def init_params(cfg: FusionConfig, seed: int) -> FusionParams:
    rng = np.random.default_rng(seed)
    visual = Backbone.init(rng, cfg.visual_backbone)
    tactile = Backbone.init(rng, cfg.tactile_backbone)
    hidden = cfg.head_hidden or cfg.d
    if cfg.variant in DIRECT_VARIANTS:
        head = FfnParams.init(rng, 2 * cfg.d, hidden, 1)
        return FusionParams(visual, tactile, [], None, head)
    n_layers = 0 if cfg.variant == "coattention" else cfg.n_layers
    layers = [
        FusionLayer(MsaParams.init(rng, cfg.mha, cfg.d_ff), MsaParams.init(rng, cfg.mha, cfg.d_ff),
                    McaParams.init(rng, cfg.mha, cfg.d_ff))
        for _ in range(n_layers)
    ]
    co = MsaParams.init(rng, cfg.mha, cfg.d_ff)
    head = FfnParams.init(rng, cfg.d, hidden, 1)
    cls_token = xavier_uniform(rng, (1, cfg.d), 1, cfg.d) if cfg.aggregation == "cls" else None
    return FusionParams(visual, tactile, layers, co, head, cls_token)


@lru_cache(maxsize=64)
def _positions(seq_len: int, d: int) -> Tensor:
    return sinusoidal_positions(seq_len, d)


def extract_features(image: Tensor, backbone: Backbone) -> Tensor:
    """Image ``(C,H,W)`` or ``(B,C,H,W)`` -> sequence ``(S,d)`` / ``(B,S,d)`` with S = H'·W'."""
    c_expected = backbone.stages[0].weight.shape[1] if backbone.stages else backbone.reduce.weight.shape[1]
    if image.ndim not in (3, 4) or image.shape[-3] != c_expected:
        raise ShapeError(f"backbone expects {c_expected} input channels, got image {image.shape}")
    x = image
    for conv in backbone.stages:
        x = T.relu(conv(x))
    x = backbone.reduce(x)
    *lead, d, h, w = x.shape
    x = T.reshape(x, (*lead, d, h * w))
    return T.transpose(x, (0, 2, 1) if lead else (1, 0))


def _tile_token(token: Tensor, like: Tensor) -> Tensor:
    if like.ndim == 2:
        return token
    ones = Tensor(np.ones((like.shape[0], 1, 1), dtype=like.dtype))
    return T.matmul(ones, token)


def fusion_forward(x_v: Tensor, x_h: Tensor, params: FusionParams) -> Tensor:
    """Fuse two ``(…, S, d)`` sequences into one ``(…, d)`` feature vector."""
    if x_v.shape[-1] != x_h.shape[-1]:
        raise ShapeError(f"stream widths differ: {x_v.shape} vs {x_h.shape}")
    d = x_v.shape[-1]
    if params.co_attention is None:
        # direct fusion baseline: pool each stream, concatenate features
        return T.concat([T.mean(x_v, axis=-2), T.mean(x_h, axis=-2)], axis=-1)
    if params.co_attention.attn.d_model != d:
        raise ShapeError(f"model width {params.co_attention.attn.d_model} differs from feature width {d}")
    p_v, p_h = _positions(x_v.shape[-2], d), _positions(x_h.shape[-2], d)
    for layer in params.layers:
        x_v = msa_block(x_v, p_v, layer.msa_v)
        x_h = msa_block(x_h, p_h, layer.msa_h)
        x_v, x_h = mca_block(x_v, x_h, p_v, p_h, layer.mca)
    parts = [x_v, x_h]
    if params.cls_token is not None:
        parts.insert(0, _tile_token(params.cls_token, x_v))
    x = T.concat(parts, axis=-2)
    x = msa_block(x, _positions(x.shape[-2], d), params.co_attention)
    if params.cls_token is not None:
        return _first_token(x)
    return T.mean(x, axis=-2)


def _first_token(x: Tensor) -> Tensor:
    # select row 0 along the sequence axis as a matmul with a one-hot selector
    sel = np.zeros((1, x.shape[-2]), dtype=x.dtype)
    sel[0, 0] = 1.0
    if x.ndim == 2:
        return T.reshape(T.matmul(Tensor(sel), x), (x.shape[-1],))
    picked = T.matmul(T.transpose(x, (0, 2, 1)), Tensor(sel.T))
    return T.reshape(picked, (x.shape[0], x.shape[-1]))


def predict(features: Tensor, head: FfnParams) -> Tensor:
    """Two-layer FFN with ReLU, then sigmoid: ``(…, d)`` -> probabilities ``(…)``."""
    lead = features.shape[:-1]
    if not lead:
        features = T.reshape(features, (1, features.shape[0]))
    logits = ffn(features, head)
    return T.reshape(T.sigmoid(logits), lead)


def bce_loss(p: Tensor, y, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy with ``p`` clamped to ``[1e-7, 1 - 1e-7]``.

    ``reduction="sum"`` gives the plain summed form; ``"mean"`` divides by the
    number of elements.
    """
    y = np.asarray(y, dtype=p.data.dtype).reshape(p.shape)
    if ((y < 0) | (y > 1)).any():
        raise ValueError("targets must lie in [0, 1]")
    pc = T.clamp(p, BCE_EPS, 1.0 - BCE_EPS)
    yt = Tensor(y, dtype=y.dtype)
    terms = T.add(T.mul(yt, T.log(pc)), T.mul(Tensor(1.0 - y, dtype=y.dtype), T.log(T.add_scalar(T.neg(pc), 1.0))))
    if reduction == "sum":
        return T.neg(T.sum(terms))
    if reduction == "mean":
        return T.neg(T.mean(terms))
    raise ValueError(f"unknown reduction {reduction!r}")


class FusionModel:
    """Configuration plus parameters; callable on ``(visual, tactile)`` image batches."""

    def __init__(self, config: FusionConfig, params: FusionParams):
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: FusionConfig | None = None, seed: int = 0) -> "FusionModel":
        config = config or FusionConfig()
        return cls(config, init_params(config, seed))

    def parameters(self) -> dict[str, Tensor]:
        return dict(named_parameters(self.params))

    def features(self, visual, tactile) -> Tensor:
        visual, tactile = _as_input(visual), _as_input(tactile)
        # unimodal baselines see the other modality as an all-zero image
        if self.config.variant == "visual":
            tactile = Tensor(np.zeros_like(tactile.data))
        elif self.config.variant == "tactile":
            visual = Tensor(np.zeros_like(visual.data))
        x_v = extract_features(visual, self.params.visual)
        x_h = extract_features(tactile, self.params.tactile)
        return fusion_forward(x_v, x_h, self.params)

    def __call__(self, visual, tactile) -> Tensor:
        return predict(self.features(visual, tactile), self.params.head)

    def predict_proba(self, visual: np.ndarray, tactile: np.ndarray, batch_size: int = 128) -> np.ndarray:
        out = []
        with T.no_grad():
            for i in range(0, len(visual), batch_size):
                out.append(self(visual[i:i + batch_size], tactile[i:i + batch_size]).data)
        return np.concatenate(out) if out else np.zeros(0)


def _as_input(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    x = np.asarray(x)
    return Tensor(x, dtype=x.dtype if x.dtype in (np.float32, np.float64) else np.float64)
