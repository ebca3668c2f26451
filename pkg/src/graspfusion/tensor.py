"""Dense tensors with reverse-mode differentiation.

Every op records its inputs and a local gradient rule on the output node;
``Tensor.backward`` walks the recorded graph in reverse topological order.
Data is held in numpy arrays (float64 by default, float32 when the inputs
are float32).

Broadcasting is deliberately narrow: operands of binary ops must have equal
shapes, or one of them must be a scalar, or its shape must be a trailing
suffix of the other's (the bias-row case, e.g. ``(B, S, d) + (d,)``).
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "Tensor",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "neg",
    "add_scalar",
    "mul_scalar",
    "pow_scalar",
    "matmul",
    "softmax",
    "relu",
    "sigmoid",
    "log",
    "clamp",
    "concat",
    "reshape",
    "transpose",
    "sum",
    "mean",
    "conv2d",
    "conv2d_transpose",
    "conv_output_size",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with an op."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})\n{self.data!r}"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add_scalar(self, other) if _is_number(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if _is_number(other) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other) if _is_number(other) else sub(other, self)

    def __mul__(self, other):
        return mul_scalar(self, other) if _is_number(other) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not _is_number(other):
            raise TypeError("only division by a scalar is supported")
        return mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    # -- differentiation -----------------------------------------------
    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into ``.grad`` of every requires-grad leaf.

        Gradients accumulate: calling ``backward`` twice on the same graph
        without zeroing the leaves doubles their ``.grad``.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _is_number(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
    # iterative DFS; recursion would overflow on deep attention stacks
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError("non-finite value produced by a forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# elementwise


def _broadcast_kind(a: tuple, b: tuple) -> str:
    if a == b:
        return "same"
    if len(b) == 0 or (len(b) <= len(a) and int(np.prod(b)) == 1 and all(s == 1 for s in b)):
        return "b_scalar"
    if len(a) == 0 or (len(a) <= len(b) and int(np.prod(a)) == 1 and all(s == 1 for s in a)):
        return "a_scalar"
    if len(b) < len(a) and a[len(a) - len(b):] == b:
        return "b_suffix"
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return "a_suffix"
    raise ShapeError(f"cannot combine shapes {a} and {b}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead > 0 else g
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _reduce_to(g, sa), -_reduce_to(g, sb)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return _result(ad * bd, (a, b), backward)


def neg(x: Tensor) -> Tensor:
    return _result(-x.data, (x,), lambda g: (-g,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _result(x.data + c, (x,), lambda g: (g,))


def mul_scalar(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), lambda g: (g * c,))


def pow_scalar(x: Tensor, p: float) -> Tensor:
    xd = x.data
    if p == 2:
        return _result(xd * xd, (x,), lambda g: (2.0 * g * xd,))
    return _result(xd**p, (x,), lambda g: (g * p * xd ** (p - 1),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if (xd <= 0).any():
        raise ValueError("log of a non-positive value; clamp the input first")
    return _result(np.log(xd), (x,), lambda g: (g / xd,))


def clamp(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    xd = x.data
    y = np.clip(xd, lo, hi)
    mask = np.ones(xd.shape, dtype=bool)
    if lo is not None:
        mask &= xd >= lo
    if hi is not None:
        mask &= xd <= hi
    return _result(y, (x,), lambda g: (g * mask,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward)


# ---------------------------------------------------------------------------
# shape ops and reductions


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    nd = ts[0].ndim
    ax = axis % nd
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ref[i] for i in range(nd) if i != ax):
            raise ShapeError(
                f"concat along axis {axis}: extents differ off-axis, {ref} vs {t.shape}"
            )
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), backward)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([src[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, src).copy(),)

    return _result(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either a plain matrix shared
    across the batch (weights) or carries the same batch axes as ``a``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions disagree, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(ad @ bd, (a, b), backward)


# ---------------------------------------------------------------------------
# convolution (cross-correlation, zero padding)


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    # xp: (N, C, Hp, Wp) already padded -> (N*Ho*Wo, C*k*k)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(cols: np.ndarray, shape: tuple, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # adjoint of _im2col: scatter-add patches back onto a padded canvas
    n, c, hp, wp = shape
    patches = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape, dtype=cols.dtype)
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + he:stride, j:j + we:stride] += patches[:, :, i, j]
    return out


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"conv input must be C×H×W or N×C×H×W, got {x.shape}")
    return x, False


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x``: (C_in,H,W) or (N,C_in,H,W); ``w``: (C_out,C_in,k,k)."""
    xb, squeeze = _batched(_as_tensor(x))
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d weight must be C_out×C_in×k×k, got {w.shape}")
    n, c, h, wd = xb.shape
    o, ci, k, _ = w.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci} ({x.shape} vs {w.shape})")
    if k > h + 2 * padding or k > wd + 2 * padding:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {xb.shape} with padding {padding}")
    xp = _pad(xb.data, padding)
    cols, ho, wo = _im2col(xp, k, stride)
    w2 = w.data.reshape(o, -1)
    out = (cols @ w2.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)
    xp_shape = xp.shape

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(w.shape)
        gx = None
        if xb.requires_grad:
            gxp = _col2im(g2 @ w2, xp_shape, k, stride, ho, wo)
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (xb, w) if bias is None else (xb, w, bias)
    y = _result(out, parents, backward)
    return reshape(y, y.shape[1:]) if squeeze else y


def conv2d_transpose(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Adjoint of :func:`conv2d` under the same weight and geometry.

    ``w`` has the conv2d layout (C_conv_out, C_conv_in, k, k); this op maps
    C_conv_out channels back to C_conv_in channels, so that
    ``<conv2d(a, w), b> == <a, conv2d_transpose(b, w)>``.
    """
    xb, squeeze = _batched(_as_tensor(x))
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d_transpose weight must be 4-D square, got {w.shape}")
    n, c, h, wd = xb.shape
    o_conv, c_out, k, _ = w.shape
    if c != o_conv:
        raise ShapeError(f"conv2d_transpose: input has {c} channels, weight expects {o_conv}")
    if not 0 <= output_padding < stride:
        raise ShapeError("conv2d_transpose: output_padding must be in [0, stride)")
    ho = (h - 1) * stride - 2 * padding + k + output_padding
    wo = (wd - 1) * stride - 2 * padding + k + output_padding
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d_transpose: geometry yields empty output from {x.shape}")
    w2 = w.data.reshape(o_conv, -1)
    x2 = xb.data.transpose(0, 2, 3, 1).reshape(-1, c)
    canvas = (n, c_out, ho + 2 * padding, wo + 2 * padding)
    full = _col2im(x2 @ w2, canvas, k, stride, h, wd)
    out = full[:, :, padding:padding + ho, padding:padding + wo]
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        cols, _, _ = _im2col(gp, k, stride)
        gx = (cols @ w2.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        gw = (x2.T @ cols).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (xb, w) if bias is None else (xb, w, bias)
    y = _result(out, parents, backward)
    return reshape(y, y.shape[1:]) if squeeze else y


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backward gradients and central differences.

    ``f(*inputs)`` must return a scalar tensor.  Only inputs with
    ``requires_grad`` are probed.  With ``max_coords`` set, that many randomly
    chosen coordinates per input are probed instead of all of them.
    """
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.zero_grad()
    f(*inputs).backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            if not t.requires_grad:
                continue
            if ga is None:
                ga = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = rng.choice(flat.size, size=max_coords, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = f(*inputs).item()
                flat[i] = orig - eps
                fm = f(*inputs).item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                a = ga.reshape(-1)[i]
                err = abs(a - num) / max(1e-8, abs(a) + abs(num))
                worst = max(worst, err)
    for t in inputs:
        t.zero_grad()
    return worst
