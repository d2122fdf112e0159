"""Building blocks of the toy video U-Net.

Spatial layers see activations with frames folded into the batch axis,
``[B*N, C, H, W]``; temporal layers unfold them using a :class:`FrameLayout`.
Temporal layers are residual and zero-initialized, so a freshly built block
is the identity along time.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import tensor as tt
from ..tensor import Module, Parameter, Tensor


@dataclass(frozen=True)
class FrameLayout:
    batch: int
    frames: int
    temporal: bool = True


def _param(module: Module, attr: str, shape, init: str, fan_in: int = 1) -> Tensor:
    """Register a parameter; values are filled in later by :func:`initialize`."""
    p = Parameter(np.zeros(shape))
    setattr(module, attr, p)
    module.__dict__.setdefault("_inits", {})[attr] = (init, fan_in)
    if init == "ones":
        p.data[...] = 1.0
    return p


def initialize(model: Module, seed: int) -> None:
    """Fill every "normal" parameter from a stream keyed by (seed, parameter name).

    Keying by name makes weights independent of construction order, so models
    that differ only in optional branches share identical values elsewhere.
    """
    for mod_name, mod in model.named_modules():
        for attr, (init, fan_in) in getattr(mod, "_inits", {}).items():
            p = getattr(mod, attr)
            if init == "zeros":
                p.data[...] = 0.0
            elif init == "ones":
                p.data[...] = 1.0
            else:
                full = f"{mod_name}.{attr}" if mod_name else attr
                key = zlib.crc32(full.encode())
                bg = np.random.Philox(np.random.SeedSequence([int(seed), key]))
                std = 1.0 / math.sqrt(fan_in)
                p.data[...] = np.random.Generator(bg).standard_normal(p.shape) * std


def sinusoidal_embedding(positions, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """[len(positions), dim] table of sin/cos features."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / max(half, 1))
    args = pos[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


class Linear(Module):
    def __init__(self, fin: int, fout: int, zero_init: bool = False):
        init = "zeros" if zero_init else "normal"
        _param(self, "weight", (fout, fin), init, fin)
        _param(self, "bias", (fout,), "zeros")

    def forward(self, x):
        return tt.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1, zero_init: bool = False):
        init = "zeros" if zero_init else "normal"
        _param(self, "weight", (cout, cin, kernel, kernel), init, cin * kernel * kernel)
        _param(self, "bias", (cout,), "zeros")
        self.stride = stride
        self.padding = kernel // 2

    def forward(self, x):
        return tt.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int):
        self.groups = groups
        _param(self, "weight", (channels,), "ones")
        _param(self, "bias", (channels,), "zeros")

    def forward(self, x, layout=None, feat=None):
        return tt.group_norm(x, self.groups, self.weight, self.bias)


def _unfold(h: Tensor, layout: FrameLayout) -> Tensor:
    """[B*N,C,H,W] -> [B,C,N,H,W]."""
    BN, C, H, W = h.shape
    return tt.permute(tt.reshape(h, (layout.batch, layout.frames, C, H, W)), (0, 2, 1, 3, 4))


def _fold(h: Tensor) -> Tensor:
    """[B,C,N,H,W] -> [B*N,C,H,W]."""
    B, C, N, H, W = h.shape
    return tt.reshape(tt.permute(h, (0, 2, 1, 3, 4)), (B * N, C, H, W))


class TemporalConv(Module):
    """x + conv1d_temporal(x); zero kernel at init."""

    def __init__(self, channels: int, kernel: int = 3):
        _param(self, "weight", (channels, channels, kernel), "zeros")
        _param(self, "bias", (channels,), "zeros")

    def forward(self, h, layout: FrameLayout):
        if not layout.temporal:
            return h
        out = tt.conv1d_temporal(_unfold(h, layout), self.weight, self.bias)
        return tt.add(h, _fold(out))


class STConv(Module):
    """A spatial conv followed by its residual temporal conv."""

    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1, temporal_kernel: int = 3):
        self.spatial = Conv2d(cin, cout, kernel, stride)
        self.temporal = TemporalConv(cout, temporal_kernel)

    def forward(self, h, layout):
        return self.temporal(self.spatial(h), layout)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    G, L, C = x.shape
    return tt.permute(tt.reshape(x, (G, L, heads, C // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    G, h, L, d = x.shape
    return tt.reshape(tt.permute(x, (0, 2, 1, 3)), (G, L, h * d))


class SelfAttention(Module):
    """Multi-head self-attention over a [groups, tokens, channels] sequence."""

    def __init__(self, channels: int, heads: int, zero_out: bool = False):
        self.heads = heads
        self.q = Linear(channels, channels)
        self.k = Linear(channels, channels)
        self.v = Linear(channels, channels)
        self.out = Linear(channels, channels, zero_init=zero_out)

    def forward(self, x):
        q = _split_heads(self.q(x), self.heads)
        k = _split_heads(self.k(x), self.heads)
        v = _split_heads(self.v(x), self.heads)
        return self.out(_merge_heads(tt.attention(q, k, v)))


class SpatialAttention(Module):
    def __init__(self, channels: int, head_channels: int, groups: int):
        self.norm = GroupNorm(groups, channels)
        self.attn = SelfAttention(channels, max(1, channels // head_channels))

    def forward(self, h, layout):
        BN, C, H, W = h.shape
        x = tt.permute(tt.reshape(self.norm(h), (BN, C, H * W)), (0, 2, 1))
        y = self.attn(x)
        return tt.add(h, tt.reshape(tt.permute(y, (0, 2, 1)), (BN, C, H, W)))


class TemporalAttention(Module):
    """Attention across frames at every spatial location; zero output projection."""

    def __init__(self, channels: int, head_channels: int, groups: int):
        self.norm = GroupNorm(groups, channels)
        self.attn = SelfAttention(channels, max(1, channels // head_channels), zero_out=True)
        self.channels = channels

    def forward(self, h, layout):
        if not layout.temporal:
            return h
        BN, C, H, W = h.shape
        B, N = layout.batch, layout.frames
        x = self.norm(_unfold(h, layout))  # statistics over channels-in-group x N x H x W
        x = tt.reshape(tt.permute(x, (0, 3, 4, 2, 1)), (B * H * W, N, C))
        pos = sinusoidal_embedding(np.arange(N), C).astype(x.data.dtype)
        y = self.attn(tt.add(x, pos))
        y = tt.permute(tt.reshape(y, (B, H, W, N, C)), (0, 3, 4, 1, 2))
        return tt.add(h, tt.reshape(y, (BN, C, H, W)))


class AttentionBlock(Module):
    """Spatial attention immediately followed by temporal attention."""

    def __init__(self, channels: int, head_channels: int, groups: int):
        self.spatial = SpatialAttention(channels, head_channels, groups)
        self.temporal = TemporalAttention(channels, head_channels, groups)

    def forward(self, h, layout):
        return self.temporal(self.spatial(h, layout), layout)


def spade_inject(h: Tensor, f_a: Tensor, gamma_conv: Conv2d, beta_conv: Conv2d, groups: int,
                 layout: Optional[FrameLayout] = None, clip_norm: bool = False) -> Tensor:
    """(gamma + 1) * group_norm(h) + beta with gamma, beta convolved from f_a.

    ``clip_norm`` computes the normalization statistics over the whole clip
    (channels-in-group x N x H x W) instead of per frame.
    """
    if h.shape[0] != f_a.shape[0] or h.shape[2:] != f_a.shape[2:]:
        raise tt.ShapeError(f"spade_inject: feature {f_a.shape} not aligned with activation {h.shape}")
    if clip_norm and layout is not None:
        h_bar = _fold(tt.group_norm(_unfold(h, layout), groups))
    else:
        h_bar = tt.group_norm(h, groups)
    gamma = gamma_conv(f_a)
    beta = beta_conv(f_a)
    return tt.add(tt.add(h_bar, tt.mul(gamma, h_bar)), beta)


class SPADE(Module):
    """Parameter-free group norm denormalized by appearance features."""

    def __init__(self, groups: int, channels: int, feat_channels: int, clip_norm: bool = False):
        self.groups = groups
        self.clip_norm = clip_norm
        self.gamma_conv = Conv2d(feat_channels, channels, 3, zero_init=True)
        self.beta_conv = Conv2d(feat_channels, channels, 3, zero_init=True)

    def forward(self, x, layout=None, feat=None):
        if feat is None:
            raise ValueError("SPADE normalization needs an appearance feature map")
        return spade_inject(x, feat, self.gamma_conv, self.beta_conv, self.groups, layout, self.clip_norm)


class ResBlock(Module):
    def __init__(self, cin: int, cout: int, emb_dim: int, groups: int, temporal_kernel: int = 3,
                 spade_feat: Optional[int] = None, spade_clip_norm: bool = False):
        if spade_feat is None:
            self.norm1 = GroupNorm(groups, cin)
        else:
            self.norm1 = SPADE(groups, cin, spade_feat, spade_clip_norm)
        self.conv1 = STConv(cin, cout, 3, 1, temporal_kernel)
        self.emb = Linear(emb_dim, cout)
        self.norm2 = GroupNorm(groups, cout)
        self.conv2 = STConv(cout, cout, 3, 1, temporal_kernel)
        self.skip = Conv2d(cin, cout, 1) if cin != cout else None

    def forward(self, x, emb, layout: FrameLayout, feat=None):
        h = self.conv1(tt.silu(self.norm1(x, layout, feat)), layout)
        B, N = layout.batch, layout.frames
        BN, C, H, W = h.shape
        e = tt.reshape(self.emb(tt.silu(emb)), (B, 1, C, 1, 1))
        h = tt.reshape(tt.add(tt.reshape(h, (B, N, C, H, W)), e), (BN, C, H, W))
        h = self.conv2(tt.silu(self.norm2(h)), layout)
        skip = x if self.skip is None else self.skip(x)
        return tt.add(skip, h)


class Downsample(Module):
    def __init__(self, channels: int, temporal_kernel: int = 3):
        self.conv = STConv(channels, channels, 3, 2, temporal_kernel)

    def forward(self, h, layout):
        return self.conv(h, layout)


class Upsample(Module):
    def __init__(self, channels: int, temporal_kernel: int = 3):
        self.conv = STConv(channels, channels, 3, 1, temporal_kernel)

    def forward(self, h, layout):
        return self.conv(tt.nearest_upsample(h, 2), layout)
