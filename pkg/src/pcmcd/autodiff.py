"""Dense reverse-mode automatic differentiation on numpy float64 arrays.

Every differentiable call records a node on a per-thread tape.  Node ids come
from a monotone counter, so sorting reachable nodes by id gives a valid
reverse topological order for :func:`backward`.  Graphs are rebuilt every
iteration; nothing is reused across steps.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class AutodiffError(Exception):
    """Base class for engine errors."""


class DimensionError(AutodiffError, ValueError):
    pass


class UnsupportedOpError(AutodiffError, KeyError):
    pass


class ContractError(AutodiffError, RuntimeError):
    pass


class _State(threading.local):
    def __init__(self):
        self.counter = itertools.count(1)
        self.enabled = True


_state = _State()


@contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@dataclass(eq=False)
class Node:
    kind: str
    inputs: tuple
    backward_fn: Callable
    id: int = field(default_factory=lambda: next(_state.counter))


class Tensor:
    """A dense array that may participate in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, kind: str, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.node = None
    out.requires_grad = False
    if _state.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(kind, tuple(inputs), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(kind: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make(a.data / b.data, "div", (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, "square", (a,), lambda g: (2.0 * a.data * g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore"):
        out = np.log(a.data)
    return _make(out, "log", (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (0.5 * g / out,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, "relu", (a,), lambda g: (g * mask,))


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    out = _softmax(a.data)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, "softmax", (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, "matmul", (a, b), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), "transpose", (a,), lambda g: (g.transpose(inv),))


def slice_(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    basic = all(isinstance(i, (slice, int, type(Ellipsis), type(None)))
                for i in (index if isinstance(index, tuple) else (index,)))

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, dtype=DTYPE), "slice", (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}"
        ) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, "concat", tensors, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, np.expand_dims(t.data, axis).shape) for t in tensors]
    return concat(expanded, axis=axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out, dtype=DTYPE), "sum", (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.asarray(out).size, 1) if a.data.size else 1

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(np.asarray(out, dtype=DTYPE), "mean", (a,), bw)


def mse(a, b) -> Tensor:
    """Mean squared difference, a scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    d = a.data - b.data
    n = max(d.size, 1)

    def bw(g):
        ga = (2.0 / n) * g * d
        return ga, -ga

    return _make(np.asarray((d * d).sum() / n, dtype=DTYPE), "mse", (a, b), bw)


def pad_reflect(a, pad_h: int, pad_w: int) -> Tensor:
    """Pad the last two axes at the far end with symmetric reflection."""
    a = as_tensor(a)
    if pad_h == 0 and pad_w == 0:
        return a
    H, W = a.shape[-2:]
    ih = np.pad(np.arange(H), (0, pad_h), mode="symmetric")
    iw = np.pad(np.arange(W), (0, pad_w), mode="symmetric")
    out = a.data[..., ih[:, None], iw[None, :]]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (Ellipsis, ih[:, None], iw[None, :]), g)
        return (full,)

    return _make(out, "pad", (a,), bw)


# ---------------------------------------------------------------------------
# neural-network kernels


def layernorm(a, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply optional affine gamma/beta."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    d = a.shape[-1]

    def bw(g):
        gx = inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))
        return (gx,)

    out = _make(xhat, "layernorm", (a,), bw)
    if gamma is not None:
        gamma = as_tensor(gamma)
        if gamma.shape != (d,):
            raise DimensionError(f"layernorm: gamma shape {gamma.shape} != ({d},)")
        out = mul(out, gamma)
    if beta is not None:
        out = add(out, beta)
    return out


def attention(q, k, v, bias=None, scale: float | None = None) -> Tensor:
    """Fused scaled dot-product attention: softmax(q k^T * scale + bias) v.

    ``q`` is (..., Tq, d), ``k`` is (..., Tk, d), ``v`` is (..., Tk, dv).
    ``bias`` broadcasts against the (..., Tq, Tk) score array; ``-inf``
    entries remove a key entirely.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(
            f"scaled-dot-attention: incompatible q {q.shape}, k {k.shape}, v {v.shape}"
        )
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    inputs = [q, k, v]
    if bias is not None:
        bias = as_tensor(bias)
        try:
            np.broadcast_shapes(scores.shape, bias.shape)
        except ValueError:
            raise DimensionError(
                f"scaled-dot-attention: bias {bias.shape} vs scores {scores.shape}"
            ) from None
        scores = scores + bias.data
        inputs.append(bias)
    w = _softmax(scores)
    out = w @ v.data

    def bw(g):
        gw = g @ np.swapaxes(v.data, -1, -2)
        gv = np.swapaxes(w, -1, -2) @ g
        gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True))
        gq = (gs @ k.data) * scale
        gk = (np.swapaxes(gs, -1, -2) @ q.data) * scale
        grads = [_unbroadcast(gq, q.shape), _unbroadcast(gk, k.shape), _unbroadcast(gv, v.shape)]
        if bias is not None:
            grads.append(_unbroadcast(gs, bias.shape))
        return tuple(grads)

    result = _make(out, "scaled-dot-attention", inputs, bw)
    return result


def attention_weights(q, k, bias=None, scale: float | None = None) -> np.ndarray:
    """The softmax weights :func:`attention` would use (values only)."""
    q, k = as_tensor(q), as_tensor(k)
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    if bias is not None:
        scores = scores + as_tensor(bias).data
    return _softmax(scores)


def _windows(xp: np.ndarray, H: int, W: int) -> np.ndarray:
    # (B, C, H+2, W+2) -> (B, C, H, W, 3, 3) view
    return np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, :H, :W]


def conv2d(x, weight, bias=None) -> Tensor:
    """3x3 convolution, stride 1, zero 'same' padding.

    ``x`` is (B, C, H, W); ``weight`` is (O, C, 3, 3); ``bias`` is (O,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise DimensionError(f"conv2d-3x3-same: input must be 4-D, got {x.shape}")
    if weight.ndim != 4 or weight.shape[2:] != (3, 3) or weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv2d-3x3-same: weight {weight.shape} incompatible with input {x.shape}"
        )
    B, C, H, W = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _windows(xp, H, W)
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3]))  # (B, H, W, O)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"conv2d-3x3-same: bias {bias.shape} for {weight.shape[0]} outputs")
        out += bias.data[None, :, None, None]
        inputs.append(bias)

    def bw(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, 3, 3)
        gp = np.pad(g, ((0, 0), (0, 0), (1, 1), (1, 1)))
        gcols = _windows(gp, H, W)  # (B, O, H, W, 3, 3)
        wflip = weight.data[:, :, ::-1, ::-1]
        gx = np.tensordot(gcols, wflip, axes=([1, 4, 5], [0, 2, 3]))  # (B, H, W, C)
        grads = [np.ascontiguousarray(gx.transpose(0, 3, 1, 2)), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, "conv2d-3x3-same", inputs, bw)


# ---------------------------------------------------------------------------
# generic dispatch


_OPS: dict[str, Callable] = {
    "add": lambda ins, at: add(*ins),
    "sub": lambda ins, at: sub(*ins),
    "mul": lambda ins, at: mul(*ins),
    "div": lambda ins, at: div(*ins),
    "matmul": lambda ins, at: matmul(*ins),
    "sigmoid": lambda ins, at: sigmoid(*ins),
    "relu": lambda ins, at: relu(*ins),
    "tanh": lambda ins, at: tanh(*ins),
    "exp": lambda ins, at: exp(*ins),
    "log": lambda ins, at: log(*ins),
    "softmax-lastdim": lambda ins, at: softmax(*ins),
    "conv2d-3x3-same": lambda ins, at: conv2d(*ins),
    "mean": lambda ins, at: mean(ins[0], at.get("axis"), at.get("keepdims", False)),
    "sum": lambda ins, at: sum_(ins[0], at.get("axis"), at.get("keepdims", False)),
    "mse": lambda ins, at: mse(*ins),
    "concat": lambda ins, at: concat(ins, at.get("axis", 0)),
    "slice": lambda ins, at: slice_(ins[0], at["index"]),
    "transpose": lambda ins, at: transpose(ins[0], at.get("axes")),
    "reshape": lambda ins, at: reshape(ins[0], at["shape"]),
    "layernorm": lambda ins, at: layernorm(*ins, eps=at.get("eps", 1e-5)),
    "scaled-dot-attention": lambda ins, at: attention(*ins, scale=at.get("scale")),
}

OP_KINDS = tuple(_OPS)


def forward_op(kind: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Apply the named op kind to ``inputs``."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise UnsupportedOpError(f"unsupported op kind {kind!r}") from None
    return fn([as_tensor(t) for t in inputs], attrs or {})


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    # collect reachable nodes
    nodes: dict[int, Tensor] = {}
    stack_ = [loss]
    seen = set()
    while stack_:
        t = stack_.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.node is not None:
            nodes[t.node.id] = t
            for inp in t.node.inputs:
                if inp.requires_grad:
                    stack_.append(inp)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = grads.pop(id(t), None)
        if g is None:
            continue
        in_grads = t.node.backward_fn(g)
        for inp, ig in zip(t.node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if inp.node is None:
                if inp.grad is None:
                    inp.grad = np.array(ig, dtype=DTYPE).reshape(inp.shape)
                else:
                    inp.grad = inp.grad + ig
            else:
                key = id(inp)
                grads[key] = grads[key] + ig if key in grads else ig
    if loss.node is None and loss.requires_grad:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0


# ---------------------------------------------------------------------------
# optimization


@dataclass
class OptimState:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    clip_norm: float | None = None


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None)))
    if total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * s
    return total


def adam_step(params: Sequence[Tensor], state: OptimState) -> None:
    """One bias-corrected Adam update; clears the gradients afterwards."""
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: parameters without gradient at indices {missing}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if state.clip_norm is not None:
        clip_grad_norm(params, state.clip_norm)
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


class Adam:
    """Thin holder pairing a parameter list with its :class:`OptimState`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: float | None = None):
        self.params = list(params)
        self.state = OptimState(lr=lr, betas=tuple(betas), eps=eps, clip_norm=clip_norm)

    def step(self):
        adam_step(self.params, self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# finite-difference checking


def numerical_grad(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. every entry of ``tensor``."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = fn().item()
            flat[i] = old - h
            fm = fn().item()
            flat[i] = old
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
               atol: float = 1e-7) -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    Entries whose magnitude is below ``atol`` in both estimates are compared
    absolutely instead.
    """
    for t in tensors:
        t.grad = None
    backward(fn())
    worst = 0.0
    for t in tensors:
        ad = t.grad if t.grad is not None else np.zeros_like(t.data)
        fd = numerical_grad(fn, t, h)
        diff = np.abs(ad - fd)
        scale = np.maximum(np.abs(ad), np.abs(fd))
        rel = np.where(scale > atol, diff / np.maximum(scale, 1e-300), np.where(diff > atol, np.inf, 0.0))
        worst = max(worst, float(rel.max(initial=0.0)))
        t.grad = None
    return worst
