"""Differentiable primitives.

Every function takes and returns :class:`~mixfacenet.tensor.Tensor` values,
computes in the dtype of its input (float32 or float64), and registers a
backward rule on the active :class:`~mixfacenet.tensor.GradTape`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, record

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


@dataclass(frozen=True)
class ConvParams:
    kernel: tuple = (1, 1)
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")
        if self.groups < 1:
            raise ValueError(f"groups must be positive, got {self.groups}")

    def output_hw(self, h: int, w: int) -> tuple:
        kh, kw = self.kernel
        return ((h + 2 * self.padding - kh) // self.stride + 1,
                (w + 2 * self.padding - kw) // self.stride + 1)


def _need4d(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what}: expected a 4-d (n, c, h, w) tensor, got shape {x.shape}")


def _window(xp: np.ndarray, i: int, j: int, oh: int, ow: int, s: int) -> np.ndarray:
    return xp[..., i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s]


def conv_output_shape(in_shape, out_channels: int, params: ConvParams) -> tuple:
    n, c, h, w = in_shape
    return (n, out_channels) + params.output_hw(h, w)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           params: ConvParams = ConvParams()) -> Tensor:
    """Direct grouped 2-d convolution with symmetric zero padding."""
    _need4d(x, "conv2d input")
    _need4d(weight, "conv2d weight")
    n, c, h, w = x.shape
    oc, cg, kh, kw = weight.shape
    g, s, p = params.groups, params.stride, params.padding
    if c % g:
        raise ValueError(f"conv2d: input channels {c} not divisible by groups {g}")
    if oc % g:
        raise ValueError(f"conv2d: output channels {oc} not divisible by groups {g}")
    if cg != c // g:
        raise ShapeError(f"conv2d: weight in-channels dim is {cg}, expected {c // g} (c={c}, groups={g})")
    if (kh, kw) != tuple(params.kernel):
        raise ShapeError(f"conv2d: weight kernel {(kh, kw)} does not match params.kernel {params.kernel}")
    if h + 2 * p < kh:
        raise ShapeError(f"conv2d: padded height {h + 2 * p} smaller than kernel height {kh}")
    if w + 2 * p < kw:
        raise ShapeError(f"conv2d: padded width {w + 2 * p} smaller than kernel width {kw}")
    if bias is not None and bias.shape != (oc,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({oc},)")

    oh, ow = params.output_hw(h, w)
    og = oc // g
    dt = x.dtype
    xd = x.data
    wd = weight.data.astype(dt, copy=False)
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    depthwise = cg == 1 and og == 1
    pointwise = kh == 1 and kw == 1 and s == 1 and p == 0

    if depthwise:
        out = np.zeros((n, c, oh, ow), dtype=dt)
        for i in range(kh):
            for j in range(kw):
                out += _window(xp, i, j, oh, ow, s) * wd[:, 0, i, j][:, None, None]
    elif pointwise:
        xg = xd.reshape(n, g, cg, h * w)
        out = np.matmul(wd.reshape(g, og, cg), xg).reshape(n, oc, oh, ow)
    else:
        xg = xp.reshape(n, g, cg, xp.shape[2], xp.shape[3])
        wg = wd.reshape(g, og, cg, kh, kw)
        acc = np.zeros((n, g, og, oh, ow), dtype=dt)
        for i in range(kh):
            for j in range(kw):
                win = np.ascontiguousarray(_window(xg, i, j, oh, ow, s)).reshape(n, g, cg, oh * ow)
                acc += np.matmul(wg[:, :, :, i, j], win).reshape(n, g, og, oh, ow)
        out = acc.reshape(n, oc, oh, ow)
    if bias is not None:
        out = out + bias.data.astype(dt, copy=False)[:, None, None]

    def backward(gout, needs):
        need_x, need_w = needs[0], needs[1]
        gx = gw = gb = None
        if bias is not None and needs[2]:
            gb = gout.sum(axis=(0, 2, 3))
        if depthwise:
            gxp = np.zeros_like(xp) if need_x else None
            gw = np.zeros_like(wd) if need_w else None
            for i in range(kh):
                for j in range(kw):
                    if need_x:
                        _window(gxp, i, j, oh, ow, s)[...] += gout * wd[:, 0, i, j][:, None, None]
                    if need_w:
                        gw[:, 0, i, j] = np.einsum("ncyx,ncyx->c", gout, _window(xp, i, j, oh, ow, s))
        else:
            go = gout.reshape(n, g, og, oh * ow)
            wg = wd.reshape(g, og, cg, kh, kw)
            xg = xp.reshape(n, g, cg, xp.shape[2], xp.shape[3])
            gxp = np.zeros_like(xg) if need_x else None
            gw = np.zeros_like(wg) if need_w else None
            wt = np.swapaxes(wg, 1, 2)  # (g, cg, og, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    if need_x:
                        contrib = np.matmul(wt[:, :, :, i, j], go).reshape(n, g, cg, oh, ow)
                        _window(gxp, i, j, oh, ow, s)[...] += contrib
                    if need_w:
                        win = np.ascontiguousarray(_window(xg, i, j, oh, ow, s)).reshape(n, g, cg, oh * ow)
                        gw[:, :, :, i, j] = np.einsum("ngoy,ngcy->goc", go, win)
            if need_x:
                gxp = gxp.reshape(xp.shape)
            if need_w:
                gw = gw.reshape(wd.shape)
        if need_x and p:
            gx = gxp[:, :, p:p + h, p:p + w]
        elif need_x:
            gx = gxp
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", inputs, out, backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor,
               running_var: Tensor, eps: float = BN_EPS, training: bool = False,
               momentum: float = BN_MOMENTUM) -> Tensor:
    """Per-channel batch normalization over axis 1.

    In training mode the batch statistics normalize the input and the
    running buffers are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``
    (the variance update uses the unbiased batch estimate).
    """
    if x.ndim < 2:
        raise ShapeError(f"batch_norm: input needs a channel axis, got shape {x.shape}")
    c = x.shape[1]
    for nm, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean),
                  ("running_var", running_var)):
        if t.shape != (c,):
            raise ShapeError(f"batch_norm: {nm} has shape {t.shape}, input has {c} channels")
    dt = x.dtype
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    gm = gamma.data.astype(dt, copy=False).reshape(bshape)
    bt = beta.data.astype(dt, copy=False).reshape(bshape)
    if training:
        m = xd.size // c
        if m < 2:
            raise ShapeError("batch_norm: training mode needs more than one value per channel")
        mean = xd.mean(axis=axes, keepdims=True)
        var = ((xd - mean) ** 2).mean(axis=axes, keepdims=True)
        rm, rv = running_mean.data, running_var.data
        running_mean.data = (momentum * rm + (1 - momentum) * mean.reshape(c)).astype(rm.dtype)
        running_var.data = (momentum * rv + (1 - momentum) * var.reshape(c) * (m / (m - 1))).astype(rv.dtype)
    else:
        mean = running_mean.data.astype(dt, copy=False).reshape(bshape)
        var = running_var.data.astype(dt, copy=False).reshape(bshape)
    std = np.sqrt(var + dt.type(eps))
    xhat = (xd - mean) / std
    out = gm * xhat + bt

    def backward(gout, needs):
        gx = gg = gb = None
        if needs[1]:
            gg = (gout * xhat).sum(axis=axes)
        if needs[2]:
            gb = gout.sum(axis=axes)
        if needs[0]:
            gxhat = gout * gm
            if training:
                gx = (gxhat - gxhat.mean(axis=axes, keepdims=True)
                      - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)) / std
            else:
                gx = gxhat / std
        return gx, gg, gb, None, None

    return record("batch_norm", (x, gamma, beta, running_mean, running_var), out, backward)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    if x.ndim < 2 or alpha.shape != (x.shape[1],):
        raise ShapeError(f"prelu: alpha shape {alpha.shape} does not match channels of input {x.shape}")
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    a = alpha.data.astype(x.dtype, copy=False).reshape(bshape)
    xd = x.data
    pos = xd >= 0
    out = np.where(pos, xd, a * xd)

    def backward(gout, needs):
        gx = np.where(pos, gout, a * gout) if needs[0] else None
        ga = None
        if needs[1]:
            axes = (0,) + tuple(range(2, x.ndim))
            ga = np.where(pos, 0, gout * xd).sum(axis=axes)
        return gx, ga

    return record("prelu", (x, alpha), out, backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    half = z.dtype.type(0.5)
    return half + half * np.tanh(half * z)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)

    def backward(gout, needs):
        return (gout * y * (1 - y),)

    return record("sigmoid", (x,), y, backward)


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    xd = x.data
    sg = _sigmoid(xd)
    out = xd * sg

    def backward(gout, needs):
        return (gout * (sg + xd * sg * (1 - sg)),)

    return record("swish", (x,), out, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    _need4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    if h * w < 1:
        raise ShapeError("global_avg_pool: empty spatial extent")
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(gout, needs):
        return (np.broadcast_to(gout / x.dtype.type(h * w), x.shape).copy(),)

    return record("global_avg_pool", (x,), out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = a.data + b.data

    def backward(gout, needs):
        return gout, gout

    return record("add", (a, b), out, backward)


def scale_channels(x: Tensor, scale: Tensor) -> Tensor:
    """Multiply each (n, c) plane of ``x`` by ``scale[n, c, 0, 0]``."""
    _need4d(x, "scale_channels")
    if scale.shape != x.shape[:2] + (1, 1):
        raise ShapeError(f"scale_channels: scale shape {scale.shape}, expected {x.shape[:2] + (1, 1)}")
    out = x.data * scale.data

    def backward(gout, needs):
        gx = gout * scale.data if needs[0] else None
        gs = (gout * x.data).sum(axis=(2, 3), keepdims=True) if needs[1] else None
        return gx, gs

    return record("scale_channels", (x, scale), out, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_channels: [{start}, {stop}) out of range for {x.shape[1]} channels")
    out = x.data[:, start:stop].copy()

    def backward(gout, needs):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = gout
        return (gx,)

    return record("slice_channels", (x,), out, backward)


def split_channels(x: Tensor, sizes: Sequence[int]) -> list:
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split_channels: sizes {list(sizes)} sum to {sum(sizes)}, input has {x.shape[1]} channels")
    if len(sizes) == 1:
        return [x]
    bounds = np.cumsum([0] + list(sizes))
    return [slice_channels(x, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    base = parts[0].shape
    for t in parts[1:]:
        if t.shape[:1] != base[:1] or t.shape[2:] != base[2:]:
            raise ShapeError(f"concat_channels: shape {t.shape} incompatible with {base}")
    out = np.concatenate([t.data for t in parts], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in parts])

    def backward(gout, needs):
        return [gout[:, a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    return record("concat_channels", tuple(parts), out, backward)


def shuffle_permutation(c: int, groups: int) -> np.ndarray:
    """Source channel for each output channel of a channel shuffle."""
    if groups < 1 or c % groups:
        raise ValueError(f"channel_shuffle: {c} channels not divisible by groups={groups}")
    return np.arange(c).reshape(groups, c // groups).T.reshape(-1)


def permute_channels(x: Tensor, perm: np.ndarray, op: str = "permute_channels") -> Tensor:
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(x.shape[1])):
        raise ValueError("permute_channels: not a permutation of the channel axis")
    out = x.data[:, perm]
    inv = np.argsort(perm)

    def backward(gout, needs):
        return (gout[:, inv],)

    return record(op, (x,), out, backward)


def channel_shuffle(x: Tensor, groups: int = 2) -> Tensor:
    """Reshape (groups, c/groups), transpose, flatten along channels."""
    if x.ndim < 2:
        raise ShapeError(f"channel_shuffle: input needs a channel axis, got {x.shape}")
    return permute_channels(x, shuffle_permutation(x.shape[1], groups), op="channel_shuffle")


def flatten(x: Tensor) -> Tensor:
    shape = x.shape
    out = x.data.reshape(shape[0], -1)

    def backward(gout, needs):
        return (gout.reshape(shape),)

    return record("flatten", (x,), out, backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)``; the probe loss used by gradient checks."""
    w = np.asarray(weights, dtype=x.dtype)
    out = np.asarray((x.data * w).sum(), dtype=x.dtype)

    def backward(gout, needs):
        return (gout * w,)

    return record("weighted_sum", (x,), out, backward)


def total(x: Tensor) -> Tensor:
    return weighted_sum(x, np.ones(x.shape, dtype=x.dtype))
