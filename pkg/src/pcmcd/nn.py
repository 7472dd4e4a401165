"""Module base class, layers, and the flat binary checkpoint format."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad

CKPT_MAGIC = b"PCMK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


class Module:
    """Named-parameter container.  Every Tensor attribute is a parameter
    (constants are kept as numpy arrays); sub-modules are discovered in
    attribute insertion order."""

    frozen = False

    def named_parameters(self, prefix: str = ""):
        for name, val in vars(self).items():
            if isinstance(val, ad.Tensor):
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[ad.Tensor]:
        return [p for _, p in self.named_parameters()]

    def _modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val._modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item._modules()

    def freeze(self) -> "Module":
        for m in self._modules():
            m.frozen = True
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = True
        for m in self._modules():
            m.frozen = False
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise CheckpointError(f"checkpoint lacks tensors {sorted(missing)}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=float)
            if arr.shape != p.shape:
                raise CheckpointError(f"{k}: checkpoint shape {arr.shape} != model {p.shape}")
            p.data[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = ad.parameter(glorot(rng, d_in, d_out, (d_in, d_out)))
        self.bias = ad.parameter(np.zeros(d_out)) if bias else None

    def forward(self, x):
        y = ad.matmul(x, self.weight)
        return ad.add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = ad.parameter(np.ones(d))
        self.beta = ad.parameter(np.zeros(d))

    def forward(self, x):
        return ad.layernorm(x, self.gamma, self.beta)


class Conv3x3(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, bias: bool = True,
                 gain: float = 1.0):
        std = gain * np.sqrt(2.0 / (9 * c_in))
        self.weight = ad.parameter(rng.normal(0.0, std, size=(c_out, c_in, 3, 3)))
        self.bias = ad.parameter(np.zeros(c_out)) if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias)


# ---------------------------------------------------------------------------
# checkpoint I/O
#
# layout: magic "PCMK", u32 version, u32 tensor count, then per tensor
#   u16 name length, utf-8 name, u32 ndim, ndim x u32 dims, float64 LE payload


def save_checkpoint(state: dict[str, np.ndarray], path) -> None:
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(state))]
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte offset 0")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 12
        state = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            n = int(np.prod(dims)) if ndim else 1
            if off + 8 * n > len(raw):
                raise CheckpointError(f"{path}: truncated tensor {name!r} at byte offset {off}")
            state[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(dims).copy()
            off += 8 * n
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint: {exc}") from exc
    return state
