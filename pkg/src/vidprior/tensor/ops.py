"""Differentiable primitives.

Each op computes its forward result with numpy and registers a closure that
maps the output gradient to input gradients. Shapes follow NCHW for images
and NCNHW (batch, channels, frames, height, width) for temporal ops.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .core import Tensor, as_tensor, make_result

GROUP_NORM_EPS = 1e-5


class ShapeError(ValueError):
    pass


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _const(x, like: np.ndarray) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _const(b, a.data)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result("add", out, (a, b), bw)


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor):
        b = _const(b, a.data)
    else:
        a = _const(a, b.data)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result("sub", out, (a, b), bw)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _const(b, a.data)
    ad, bd = a.data, b.data
    out = ad * bd

    def bw(g):
        ga = _unbroadcast(g * bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result("mul", out, (a, b), bw)


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * x.data.dtype.type(c)

    def bw(g):
        return (g * g.dtype.type(c),)

    return make_result("scalar_mul", out, (x,), bw)


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = 0.5 * (1.0 + np.tanh(0.5 * xd))  # logistic without exp overflow
    out = xd * s

    def bw(g):
        return (g * (s * (1.0 + xd * (1.0 - s))),)

    return make_result("silu", out, (x,), bw)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)
    src = x.shape

    def bw(g):
        return (g.reshape(src),)

    return make_result("reshape", out, (x,), bw)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute axes {axes} invalid for {x.ndim}-d tensor")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return make_result("permute", out, (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result("concat", out, tuple(tensors), bw)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=1)


# ---------------------------------------------------------------------------
# reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(x.data.sum())
    src = x.shape

    def bw(g):
        return (np.broadcast_to(g, src).copy(),)

    return make_result("sum", out, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    src = x.shape
    if axis is None:
        count = x.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([src[a] for a in ax]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, src).astype(x.data.dtype),)

    return make_result("mean", out, (x,), bw)


def mse(a: Tensor, b) -> Tensor:
    """Mean of squared differences over all elements."""
    b = _const(b, a.data)
    if a.shape != b.shape:
        raise ShapeError(f"mse: {a.shape} vs {b.shape}")
    d = a.data - b.data
    out = np.asarray((d * d).mean())
    n = d.size

    def bw(g):
        gd = d * (2.0 * g / n)
        return gd, -gd

    return make_result("mse", out, (a, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", p, (x,), bw)


# ---------------------------------------------------------------------------
# layers


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """y = x @ weight.T + bias over the last axis of ``x``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input features {x.shape[-1]} != weight in-features {weight.shape[1]}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g @ wd) if x.requires_grad else None
        gw = g2.T @ xd.reshape(-1, xd.shape[-1]) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result("linear", out, inputs, bw)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [B,C,H,W] with [O,C,kh,kw]."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = weight.shape
    if C != Ck:
        raise ShapeError(f"conv2d: input has {C} channels but kernel expects {Ck}")
    s, p = int(stride), int(padding)
    if kh > H + 2 * p or kw > W + 2 * p:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {H + 2 * p}x{W + 2 * p}")
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    xd, wd = x.data, weight.data
    # channel-major copy so every im2col tap below is a plain strided slice
    xt = xd.transpose(1, 0, 2, 3)
    if p:
        xt = np.pad(xt, ((0, 0), (0, 0), (p, p), (p, p)))
    hs, ws = s * (Ho - 1) + 1, s * (Wo - 1) + 1
    cols = np.empty((C, kh, kw, B, Ho, Wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + hs : s, j : j + ws : s]
    cols = cols.reshape(C * kh * kw, B * Ho * Wo)
    w2 = wd.reshape(O, -1)
    # [positions, O] orientation keeps BLAS efficient when O is small
    out = np.ascontiguousarray((cols.T @ w2.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gT = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
        gw = np.ascontiguousarray((cols @ gT).T).reshape(O, C, kh, kw) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ gT.T).reshape(C, kh, kw, B, Ho, Wo)
            gxt = np.zeros((C, B, H + 2 * p, W + 2 * p), dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxt[:, :, i : i + hs : s, j : j + ws : s] += gcols[:, i, j]
            gx = np.ascontiguousarray(gxt[:, :, p : p + H, p : p + W].transpose(1, 0, 2, 3))
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result("conv2d", out, inputs, bw)


def conv1d_temporal(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Convolution along the frame axis of [B,C,N,H,W] with kernel [O,C,kt].

    Frames are padded by replicating the edge frames so a static clip stays
    static.
    """
    if x.ndim != 5 or weight.ndim != 3:
        raise ShapeError(f"conv1d_temporal expects [B,C,N,H,W] and [O,C,kt], got {x.shape} and {weight.shape}")
    B, C, N, H, W = x.shape
    O, Ck, kt = weight.shape
    if Ck != C:
        raise ShapeError(f"conv1d_temporal: input has {C} channels but kernel expects {Ck}")
    if kt % 2 == 0:
        raise ShapeError(f"temporal kernel size must be odd, got {kt}")
    if kt > N:
        raise ShapeError(f"temporal kernel size {kt} exceeds frame count {N}")
    r = (kt - 1) // 2
    xd, wd = x.data, weight.data
    # taps[k, n] is the (edge-clamped) source frame of output frame n under tap k
    taps = np.clip(np.arange(kt)[:, None] + np.arange(N)[None, :] - r, 0, N - 1)
    P = N * H * W
    X = xd[:, :, taps].reshape(B, C * kt, P)
    w2 = wd.reshape(O, C * kt)
    out = np.matmul(w2, X).reshape(B, O, N, H, W)
    if bias is not None:
        out += bias.data[None, :, None, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gw = gx = None
        g3 = g.reshape(B, O, P)
        if weight.requires_grad:
            gw = np.tensordot(g3, X, axes=([0, 2], [0, 2])).reshape(O, C, kt)
        if x.requires_grad:
            gX = np.matmul(w2.T, g3).reshape(B, C, kt, N, H, W)
            gx = np.zeros((B, C, N, H, W), dtype=xd.dtype)
            for k in range(kt):
                sft, gk = k - r, gX[:, :, k]
                if sft >= 0:
                    gx[:, :, sft:] += gk[:, :, : N - sft]
                    gx[:, :, N - 1] += gk[:, :, N - sft :].sum(axis=2)
                else:
                    gx[:, :, : N + sft] += gk[:, :, -sft:]
                    gx[:, :, 0] += gk[:, :, :-sft].sum(axis=2)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    return make_result("conv1d_temporal", out, inputs, bw)


def group_norm(x: Tensor, groups: int, weight: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = GROUP_NORM_EPS) -> Tensor:
    """Normalize each (sample, channel group) over channels-in-group and all trailing axes.

    The variance is floored at ``eps`` rather than offset by it, so groups
    whose variance exceeds ``eps`` come out with exactly zero mean and unit
    variance.
    """
    if x.ndim < 2:
        raise ShapeError("group_norm needs at least [B,C]")
    B, C = x.shape[:2]
    if groups <= 0 or C % groups:
        raise ShapeError(f"group_norm: {groups} groups do not divide {C} channels")
    xd = x.data
    xg = xd.reshape(B, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    clamped = var <= eps
    inv = 1.0 / np.sqrt(np.maximum(var, eps))
    xhat = (xc * inv).reshape(xd.shape)
    cshape = (1, C) + (1,) * (x.ndim - 2)
    out = xhat
    if weight is not None:
        out = out * weight.data.reshape(cshape)
    if bias is not None:
        out = out + bias.data.reshape(cshape)
    if out is xhat:
        out = xhat.copy()
    inputs = [x]
    if weight is not None:
        inputs.append(weight)
    if bias is not None:
        inputs.append(bias)
    red = (0,) + tuple(range(2, x.ndim))

    def bw(g):
        grads = []
        gh = g * weight.data.reshape(cshape) if weight is not None else g
        if x.requires_grad:
            ghg = gh.reshape(B, groups, -1)
            xh = xhat.reshape(B, groups, -1)
            m1 = ghg.mean(axis=-1, keepdims=True)
            m2 = np.where(clamped, 0.0, (ghg * xh).mean(axis=-1, keepdims=True))
            grads.append((inv * (ghg - m1 - xh * m2)).reshape(xd.shape))
        else:
            grads.append(None)
        if weight is not None:
            grads.append((g * xhat).sum(axis=red))
        if bias is not None:
            grads.append(g.sum(axis=red))
        return grads

    return make_result("group_norm", out, tuple(inputs), bw)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v for [B,heads,L,d] inputs."""
    if q.ndim != 4 or q.shape != k.shape or k.shape != v.shape:
        raise ShapeError(f"attention expects matching [B,h,L,d] tensors, got {q.shape}, {k.shape}, {v.shape}")
    d = q.shape[-1]
    scale = 1.0 / math.sqrt(d)
    qd, kd, vd = q.data, k.data, v.data
    s = (qd @ kd.swapaxes(-1, -2)) * scale
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ vd

    def bw(g):
        gv = p.swapaxes(-1, -2) @ g
        gp = g @ vd.swapaxes(-1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True))
        gs *= scale
        return gs @ kd, gs.swapaxes(-1, -2) @ qd, gv

    return make_result("attention", out, (q, k, v), bw)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"embedding id out of range [0, {V})")
    out = table.data[ids]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return make_result("embedding_lookup", out, (table,), bw)


def nearest_downsample(x: Tensor, factor: int = 2) -> Tensor:
    f = int(factor)
    B, C, H, W = x.shape
    if H % f or W % f:
        raise ShapeError(f"nearest_downsample: {H}x{W} not divisible by {f}")
    out = np.ascontiguousarray(x.data[:, :, ::f, ::f])

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[:, :, ::f, ::f] = g
        return (gx,)

    return make_result("nearest_downsample", out, (x,), bw)


def nearest_upsample(x: Tensor, factor: int = 2) -> Tensor:
    f = int(factor)
    B, C, H, W = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (B, C, H, f, W, f)).reshape(B, C, H * f, W * f)

    def bw(g):
        return (g.reshape(B, C, H, f, W, f).sum(axis=(3, 5)),)

    return make_result("nearest_upsample", np.ascontiguousarray(out), (x,), bw)
