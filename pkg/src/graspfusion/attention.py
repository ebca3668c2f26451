"""Multi-head attention, sinusoidal positions, FFN and the residual MSA/MCA blocks.

All functions accept sequences shaped ``(S, d)`` or batched ``(B, S, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import xavier_uniform, zeros
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class MhaConfig:
    n_heads: int = 4
    d_model: int = 32

    def __post_init__(self):
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    d_v = d_k

    @classmethod
    def full_scale(cls) -> "MhaConfig":
        return cls(n_heads=8, d_model=512)


@dataclass
class ProjectionWeights:
    """Per-head projections stored side by side: ``wq[:, h*d_k:(h+1)*d_k]`` is head h."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    n_heads: int

    @classmethod
    def init(cls, rng: np.random.Generator, cfg: MhaConfig) -> "ProjectionWeights":
        d, hk = cfg.d_model, cfg.n_heads * cfg.d_k
        return cls(
            wq=xavier_uniform(rng, (d, hk), d, hk),
            wk=xavier_uniform(rng, (d, hk), d, hk),
            wv=xavier_uniform(rng, (d, hk), d, hk),
            wo=xavier_uniform(rng, (hk, d), hk, d),
            n_heads=cfg.n_heads,
        )

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]


@dataclass
class FfnParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, d_ff: int | None = None, d_out: int | None = None) -> "FfnParams":
        d_ff = d_ff or 4 * d
        d_out = d_out or d
        return cls(xavier_uniform(rng, (d, d_ff), d, d_ff), zeros((d_ff,)),
                   xavier_uniform(rng, (d_ff, d_out), d_ff, d_out), zeros((d_out,)))


@dataclass
class MsaParams:
    attn: ProjectionWeights
    ffn: FfnParams

    @classmethod
    def init(cls, rng, cfg: MhaConfig, d_ff: int | None = None) -> "MsaParams":
        return cls(ProjectionWeights.init(rng, cfg), FfnParams.init(rng, cfg.d_model, d_ff))


@dataclass
class McaParams:
    """``visual`` updates the visual stream (its queries), ``tactile`` the tactile one."""

    visual: MsaParams
    tactile: MsaParams

    @classmethod
    def init(cls, rng, cfg: MhaConfig, d_ff: int | None = None) -> "McaParams":
        return cls(MsaParams.init(rng, cfg, d_ff), MsaParams.init(rng, cfg, d_ff))

    def swapped(self) -> "McaParams":
        return McaParams(self.tactile, self.visual)


def _check_width(x: Tensor, d: int, what: str) -> None:
    if x.shape[-1] != d:
        raise ShapeError(f"{what}: expected width {d}, got shape {x.shape}")


def project_qkv(x: Tensor, w: ProjectionWeights) -> tuple[Tensor, Tensor, Tensor]:
    _check_width(x, w.d_model, "project_qkv")
    return T.matmul(x, w.wq), T.matmul(x, w.wk), T.matmul(x, w.wv)


def _swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return T.transpose(x, tuple(axes))


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """Row-stochastic matrix ``softmax(Q Kᵀ / sqrt(d_k))`` over the key axis."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key widths differ: {q.shape} vs {k.shape}")
    scores = T.mul_scalar(T.matmul(q, _swap_last(k)), 1.0 / np.sqrt(q.shape[-1]))
    return T.softmax(scores, axis=-1)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value lengths differ: {k.shape} vs {v.shape}")
    return T.matmul(attention_weights(q, k), v)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, s, hd = x.shape
    x = T.reshape(x, (*lead, s, n_heads, hd // n_heads))
    n = len(lead)
    return T.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, s, dk = x.shape
    n = len(lead)
    x = T.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return T.reshape(x, (*lead, s, h * dk))


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, w: ProjectionWeights,
                         cfg: MhaConfig | None = None) -> Tensor:
    """Project, attend per head, concatenate the heads and apply the output matrix."""
    n_heads = cfg.n_heads if cfg is not None else w.n_heads
    for x, name in ((q_in, "query"), (k_in, "key"), (v_in, "value")):
        _check_width(x, w.d_model, f"multi_head_attention {name}")
    if w.wq.shape[1] % n_heads:
        raise ShapeError(f"projection width {w.wq.shape[1]} not divisible by {n_heads} heads")
    q = _split_heads(T.matmul(q_in, w.wq), n_heads)
    k = _split_heads(T.matmul(k_in, w.wk), n_heads)
    v = _split_heads(T.matmul(v_in, w.wv), n_heads)
    return T.matmul(_merge_heads(scaled_dot_attention(q, k, v)), w.wo)


def sinusoidal_positions(seq_len: int, d: int) -> Tensor:
    """``P[pos, 2i] = sin(pos / 10000^(2i/d))``, ``P[pos, 2i+1] = cos(...)``."""
    if d % 2:
        raise ValueError(f"positional width must be even, got {d}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    p = np.empty((seq_len, d))
    p[:, 0::2] = np.sin(pos * freq)
    p[:, 1::2] = np.cos(pos * freq)
    return Tensor(p)


def ffn(x: Tensor, p: FfnParams) -> Tensor:
    _check_width(x, p.w1.shape[0], "ffn")
    h = T.relu(T.add(T.matmul(x, p.w1), p.b1))
    return T.add(T.matmul(h, p.w2), p.b2)


def msa_block(x: Tensor, pos: Tensor, p: MsaParams) -> Tensor:
    if pos.shape != x.shape[-2:]:
        raise ShapeError(f"positional encoding {pos.shape} does not match sequence {x.shape}")
    xp = T.add(x, pos)
    x = T.add(x, multi_head_attention(xp, xp, x, p.attn))
    return T.add(x, ffn(x, p.ffn))


def mca_block(x_v: Tensor, x_h: Tensor, pos_v: Tensor, pos_h: Tensor,
              p: McaParams) -> tuple[Tensor, Tensor]:
    """Symmetric cross-attention update; both streams read the pre-update inputs."""
    if x_v.shape[-1] != x_h.shape[-1]:
        raise ShapeError(f"stream widths differ: {x_v.shape} vs {x_h.shape}")
    if pos_v.shape != x_v.shape[-2:] or pos_h.shape != x_h.shape[-2:]:
        raise ShapeError("positional encodings do not match the stream shapes")
    vp, hp = T.add(x_v, pos_v), T.add(x_h, pos_h)
    new_v = T.add(x_v, multi_head_attention(vp, hp, x_h, p.visual.attn))
    new_h = T.add(x_h, multi_head_attention(hp, vp, x_v, p.tactile.attn))
    new_v = T.add(new_v, ffn(new_v, p.visual.ffn))
    new_h = T.add(new_h, ffn(new_h, p.tactile.ffn))
    return new_v, new_h
