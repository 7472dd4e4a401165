"""Reconstruction network: measurement cube (H, W, M) -> hyperspectral cube (H, W, N).

Layout: 3x3 input projection, two dual residual attention blocks, a
patch-level non-local tail driven by channel-covariance descriptors, a body
convolution, a global skip from the input projection, and a 3x3 output
projection.  Internally tensors are (batch, channels, H, W).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .nn import Conv3x3, Linear, Module


class DecoderError(ValueError):
    pass


class ChannelAttention(Module):
    """Global average pool -> bottleneck MLP -> sigmoid channel gate."""

    def __init__(self, rng, channels: int, reduction: int = 4):
        hidden = max(1, channels // reduction)
        self.down = Linear(rng, channels, hidden)
        self.up = Linear(rng, hidden, channels)

    def forward(self, x):
        B, C = x.shape[:2]
        pooled = ad.mean(x, axis=(2, 3))
        gate = ad.sigmoid(self.up(ad.relu(self.down(pooled))))
        return ad.mul(x, ad.reshape(gate, (B, C, 1, 1)))


class DRAB(Module):
    """Dual residual attention block.

    a = relu(conv1(u)); t = conv2(a) + a (short residual);
    out = u + CA(t) (long residual from the block input).
    """

    def __init__(self, rng, channels: int):
        self.conv1 = Conv3x3(rng, channels, channels)
        self.conv2 = Conv3x3(rng, channels, channels, gain=0.5)
        self.attn = ChannelAttention(rng, channels)

    def forward(self, u):
        a = ad.relu(self.conv1(u))
        t = ad.add(self.conv2(a), a)
        return ad.add(u, self.attn(t))


class PatchNonLocal(Module):
    """Non-local mixing between P x P patches in residual form.

    Each patch is described by its F x F channel covariance; patches attend to
    each other with softmax-normalised scaled dot products of those
    descriptors, and receive the attention-weighted sum of the other patches'
    projected mean features, broadcast over the patch.
    """

    def __init__(self, rng, channels: int, patch: int = 4):
        self.patch = patch
        self.value = ad.parameter(rng.normal(0.0, 0.1 / np.sqrt(channels), (channels, channels)))

    def _patches(self, x):
        B, F, H, W = x.shape
        P = self.patch
        ph, pw = (-H) % P, (-W) % P
        xp = ad.pad_reflect(x, ph, pw)
        Hp, Wp = H + ph, W + pw
        nh, nw = Hp // P, Wp // P
        t = ad.reshape(xp, (B, F, nh, P, nw, P))
        t = ad.transpose(t, (0, 2, 4, 1, 3, 5))
        return ad.reshape(t, (B, nh * nw, F, P * P)), (B, F, H, W, nh, nw, Hp, Wp)

    def descriptors(self, x):
        patches, _ = self._patches(x)
        return self._descriptors(patches)

    def _descriptors(self, patches):
        B, L, F, PP = patches.shape
        centred = ad.sub(patches, ad.mean(patches, axis=-1, keepdims=True))
        cov = ad.div(ad.matmul(centred, ad.transpose(centred, (0, 1, 3, 2))), float(PP))
        return ad.reshape(cov, (B, L, F * F))

    def attention_weights(self, x) -> np.ndarray:
        d = self.descriptors(x)
        return ad.attention_weights(d, d, scale=1.0 / d.shape[-1] ** 0.5)

    def forward(self, x):
        patches, (B, F, H, W, nh, nw, Hp, Wp) = self._patches(x)
        P = self.patch
        desc = self._descriptors(patches)
        v = ad.matmul(ad.mean(patches, axis=-1), self.value)  # (B, L, F)
        agg = ad.attention(desc, desc, v, scale=1.0 / desc.shape[-1] ** 0.5)
        out = ad.add(patches, ad.reshape(agg, (B, nh * nw, F, 1)))
        out = ad.reshape(out, (B, nh, nw, F, P, P))
        out = ad.transpose(out, (0, 3, 1, 4, 2, 5))
        out = ad.reshape(out, (B, F, Hp, Wp))
        if (Hp, Wp) != (H, W):
            out = out[:, :, :H, :W]
        return out


class DecoderModel(Module):
    def __init__(self, M: int = 11, N: int = 100, features: int = 32, patch: int = 4,
                 blocks: int = 2, seed: int = 0, input_scale: float | None = None):
        rng = np.random.default_rng(seed)
        self.M, self.N = M, N
        # measurements are plain sums over N channels; bring them to O(1)
        self.input_scale = 1.0 / N if input_scale is None else input_scale
        self.head = Conv3x3(rng, M, features)
        self.blocks = [DRAB(rng, features) for _ in range(blocks)]
        self.nonlocal_ = PatchNonLocal(rng, features, patch)
        self.body = Conv3x3(rng, features, features, gain=0.5)
        self.tail = Conv3x3(rng, features, N)

    def features(self, x):
        f0 = self.head(ad.mul(x, self.input_scale))
        h = f0
        for blk in self.blocks:
            h = blk(h)
        h = self.nonlocal_(h)
        return ad.add(f0, self.body(h))

    def forward(self, x):
        """``x`` is a (B, M, H, W) Tensor; returns (B, N, H, W)."""
        if x.ndim != 4 or x.shape[1] != self.M:
            raise DecoderError(f"decoder expects (B, {self.M}, H, W) input, got {x.shape}")
        return self.tail(self.features(x))

    def skip_path(self, x):
        """Output with every block, non-local and body contribution removed."""
        return self.tail(self.head(ad.mul(x, self.input_scale)))


def decoder_forward(model: DecoderModel, meas, clamp: bool = False):
    """Decode an (H, W, M) or (B, H, W, M) measurement cube.

    Returns a Tensor of matching layout with N channels; ``clamp`` (for
    evaluation) clips values to [0, 1] and detaches.
    """
    meas = ad.as_tensor(meas)
    single = meas.ndim == 3
    if single:
        meas = ad.reshape(meas, (1,) + meas.shape)
    if meas.ndim != 4 or meas.shape[-1] != model.M:
        raise DecoderError(f"measurement has {meas.shape[-1]} channels, decoder expects M={model.M}")
    out = model(ad.transpose(meas, (0, 3, 1, 2)))
    out = ad.transpose(out, (0, 2, 3, 1))
    if single:
        out = ad.reshape(out, out.shape[1:])
    if clamp:
        return ad.Tensor(np.clip(out.data, 0.0, 1.0))
    return out


def patch_nonlocal(features, patch: int = 4, value_weight=None):
    """Functional form on an (F, H, W) array with an explicit value matrix."""
    x = ad.as_tensor(features)
    F = x.shape[0]
    layer = PatchNonLocal.__new__(PatchNonLocal)
    layer.patch = patch
    layer.value = ad.as_tensor(np.zeros((F, F)) if value_weight is None else value_weight)
    return ad.reshape(layer(ad.reshape(x, (1,) + x.shape)), x.shape)
