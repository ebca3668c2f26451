"""Parameter containers, initialisation and small reusable layers."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` for every Tensor inside nested dataclasses/lists."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            sub = getattr(obj, f.name)
            if sub is None:
                continue
            yield from named_parameters(sub, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, sub in enumerate(obj):
            yield from named_parameters(sub, f"{prefix}.{i}" if prefix else str(i))


def parameter_dict(obj) -> dict[str, Tensor]:
    return dict(named_parameters(obj))


def assign_parameters(obj, values: dict[str, np.ndarray]) -> None:
    """Overwrite parameter data in place; names and shapes must match exactly."""
    params = parameter_dict(obj)
    missing = params.keys() - values.keys()
    extra = values.keys() - params.keys()
    if missing or extra:
        raise KeyError(f"parameter names differ: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
    for name, t in params.items():
        v = np.asarray(values[name], dtype=t.data.dtype)
        if v.shape != t.shape:
            raise T.ShapeError(f"parameter {name}: expected {t.shape}, got {v.shape}")
        t.data = v.copy()


def zero_grads(obj) -> None:
    for _, t in named_parameters(obj):
        t.grad = None


def frozen(obj):
    """Structural copy sharing data but recording no gradients."""
    if isinstance(obj, Tensor):
        return Tensor(obj.data, dtype=obj.data.dtype)
    if dataclasses.is_dataclass(obj):
        return dataclasses.replace(
            obj, **{f.name: frozen(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        )
    if isinstance(obj, list):
        return [frozen(o) for o in obj]
    if isinstance(obj, tuple):
        return tuple(frozen(o) for o in obj)
    return obj


@dataclass
class Conv:
    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, k: int, stride: int = 1, padding: int = 0) -> "Conv":
        w = xavier_uniform(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k)
        return cls(w, zeros((c_out,)), stride, padding)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


@dataclass
class ConvTranspose:
    # weight uses the conv2d layout (c_in_here, c_out_here, k, k)
    weight: Tensor
    bias: Tensor
    stride: int = 2
    padding: int = 1

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, k: int, stride: int = 2, padding: int = 1) -> "ConvTranspose":
        w = xavier_uniform(rng, (c_in, c_out, k, k), c_in * k * k, c_out * k * k)
        return cls(w, zeros((c_out,)), stride, padding)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d_transpose(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


@dataclass
class Linear:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng, d_in: int, d_out: int) -> "Linear":
        return cls(xavier_uniform(rng, (d_in, d_out), d_in, d_out), zeros((d_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)
