"""Naive-loop reference implementations and an instrumented op counter.

Everything here is written as explicit scalar loops in float64 over Python
lists, sharing no code with :mod:`mixfacenet.ops`. It exists to check the
vectorized engine and the static cost model, and is far too slow for
anything but small shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import singledispatch

import numpy as np

from .blocks import EmbeddingStage, GroupedPointwise, Head, MixBlock, MixConv, SqueezeExcite
from .layers import BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, ModuleList, PReLU, Sigmoid, Swish


@dataclass
class OpCounter:
    """Arithmetic observed while executing the naive loops.

    ``mac_mul``/``mac_add`` are the multiply and accumulate of each
    convolution tap; ``elementwise`` collects residual adds and SE
    rescales, which the published convention does not charge.
    """

    mac_mul: int = 0
    mac_add: int = 0
    bias_add: int = 0
    bn_ops: int = 0
    act_ops: int = 0
    pool_adds: int = 0
    elementwise: int = 0

    @property
    def macs(self) -> int:
        return self.mac_mul

    @property
    def flops(self) -> int:
        return self.mac_mul + self.mac_add + self.bias_add + self.bn_ops + self.act_ops + self.pool_adds


def _zeros4(n, c, h, w):
    return [[[[0.0] * w for _ in range(h)] for _ in range(c)] for _ in range(n)]


def conv2d_ref(x, w, b=None, stride=1, padding=0, groups=1, counter: OpCounter = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    oc, cg, kh, kw = w.shape
    og = oc // groups
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    xl, wl = x.tolist(), w.tolist()
    bl = None if b is None else np.asarray(b, dtype=np.float64).tolist()
    out = _zeros4(n, oc, oh, ow)
    for bi in range(n):
        for o in range(oc):
            g = o // og
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for ci in range(cg):
                        cin = g * cg + ci
                        for i in range(kh):
                            for j in range(kw):
                                yy = y * stride + i - padding
                                xc = xx * stride + j - padding
                                v = xl[bi][cin][yy][xc] if 0 <= yy < h and 0 <= xc < wd else 0.0
                                acc += wl[o][ci][i][j] * v
                                if counter is not None:
                                    counter.mac_mul += 1
                                    counter.mac_add += 1
                    if bl is not None:
                        acc += bl[o]
                        if counter is not None:
                            counter.bias_add += 1
                    out[bi][o][y][xx] = acc
    return np.array(out)


def batch_stats_ref(x):
    """Per-channel mean and biased variance over (n, h, w)."""
    x = np.asarray(x, dtype=np.float64)
    n, c = x.shape[:2]
    flat = x.reshape(n, c, -1).tolist()
    means, vars_ = [], []
    for ch in range(c):
        vals = [v for bi in range(n) for v in flat[bi][ch]]
        m = sum(vals) / len(vals)
        means.append(m)
        vars_.append(sum((v - m) ** 2 for v in vals) / len(vals))
    return np.array(means), np.array(vars_)


def batch_norm_ref(x, gamma, beta, mean, var, eps=1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    n, c = x.shape[:2]
    for ch in range(c):
        d = math.sqrt(float(var[ch]) + eps)
        for bi in range(n):
            for idx, v in np.ndenumerate(x[bi, ch]):
                out[(bi, ch) + idx] = float(gamma[ch]) * (v - float(mean[ch])) / d + float(beta[ch])
    return out


def _map(x, fn):
    x = np.asarray(x, dtype=np.float64)
    return np.array([fn(v) for v in x.reshape(-1).tolist()]).reshape(x.shape)


def _sig(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def sigmoid_ref(x) -> np.ndarray:
    return _map(x, _sig)


def swish_ref(x) -> np.ndarray:
    return _map(x, lambda v: v * _sig(v))


def prelu_ref(x, alpha) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for idx, v in np.ndenumerate(x):
        a = float(alpha[idx[1]])
        out[idx] = v if v >= 0 else a * v
    return out


def gap_ref(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.zeros((n, c, 1, 1))
    for bi in range(n):
        for ch in range(c):
            s = 0.0
            for v in x[bi, ch].reshape(-1).tolist():
                s += v
            out[bi, ch, 0, 0] = s / (h * w)
    return out


def shuffle_ref(x, groups) -> np.ndarray:
    """Output channel k reads input channel (k % groups) * (c // groups) + k // groups."""
    x = np.asarray(x)
    c = x.shape[1]
    per = c // groups
    out = np.empty_like(x)
    for k in range(c):
        out[:, k] = x[:, (k % groups) * per + k // groups]
    return out


def mixconv_ref(x, weights, kernel_sizes, split, stride=1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    outs, start = [], 0
    for w, k, cs in zip(weights, kernel_sizes, split):
        part = x[:, start:start + cs]
        outs.append(conv2d_ref(part, w, None, stride, (k - 1) // 2, cs))
        start += cs
    return np.concatenate(outs, axis=1)


def se_ref(x, reduce_w, reduce_b, expand_w, expand_b, act) -> np.ndarray:
    """Scalar SE pipeline; ``act`` is a float -> float function."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    rw = np.asarray(reduce_w, dtype=np.float64)[:, :, 0, 0]
    ew = np.asarray(expand_w, dtype=np.float64)[:, :, 0, 0]
    rb = np.asarray(reduce_b, dtype=np.float64)
    eb = np.asarray(expand_b, dtype=np.float64)
    sq = rw.shape[0]
    out = np.empty_like(x)
    for bi in range(n):
        pooled = [sum(x[bi, ch].reshape(-1).tolist()) / (h * w) for ch in range(c)]
        hidden = [act(sum(rw[s, ch] * pooled[ch] for ch in range(c)) + rb[s]) for s in range(sq)]
        for ch in range(c):
            gate = _sig(sum(ew[ch, s] * hidden[s] for s in range(sq)) + eb[ch])
            out[bi, ch] = x[bi, ch] * gate
    return out


# Instrumented execution of whole layers: naive loops plus operation counts.

@singledispatch
def run_layer(m, x: np.ndarray, counter: OpCounter) -> np.ndarray:
    raise TypeError(f"no reference executor for {type(m).__name__}")


@run_layer.register
def _(m: Conv2d, x, counter):
    p = m.params
    b = None if m.bias is None else m.bias.data
    return conv2d_ref(x, m.weight.data, b, p.stride, p.padding, p.groups, counter)


@run_layer.register
def _(m: BatchNorm2d, x, counter):
    # Inference BN folded into one multiply and one add per element.
    x = np.asarray(x, dtype=np.float64)
    scale = [float(g) / math.sqrt(float(v) + m.eps) for g, v in zip(m.gamma.data, m.running_var.data)]
    shift = [float(b) - float(mu) * s for b, mu, s in zip(m.beta.data, m.running_mean.data, scale)]
    out = np.empty_like(x)
    for idx, v in np.ndenumerate(x):
        ch = idx[1]
        out[idx] = v * scale[ch] + shift[ch]
        counter.bn_ops += 2
    return out


def _act(fn, x, counter):
    x = np.asarray(x, dtype=np.float64)
    counter.act_ops += x.size
    return fn(x)


@run_layer.register
def _(m: PReLU, x, counter):
    return _act(lambda v: prelu_ref(v, m.alpha.data), x, counter)


@run_layer.register
def _(m: Swish, x, counter):
    return _act(swish_ref, x, counter)


@run_layer.register
def _(m: Sigmoid, x, counter):
    return _act(sigmoid_ref, x, counter)


@run_layer.register
def _(m: GlobalAvgPool, x, counter):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.zeros((n, c, 1, 1))
    for bi in range(n):
        for ch in range(c):
            s = 0.0
            for v in x[bi, ch].reshape(-1).tolist():
                s += v
                counter.pool_adds += 1
            out[bi, ch, 0, 0] = s / (h * w)
    return out


@run_layer.register
def _(m: Flatten, x, counter):
    return np.asarray(x).reshape(x.shape[0], -1)


@run_layer.register
def _(m: ModuleList, x, counter):
    for child in m:
        x = run_layer(child, x, counter)
    return x


def _split_run(convs, sizes, x, counter):
    outs, start = [], 0
    for conv, cs in zip(convs, sizes):
        outs.append(run_layer(conv, x[:, start:start + cs], counter))
        start += cs
    return np.concatenate(outs, axis=1)


@run_layer.register
def _(m: MixConv, x, counter):
    return _split_run(m.convs, m.spec.channel_split, x, counter)


@run_layer.register
def _(m: GroupedPointwise, x, counter):
    return _split_run(m.convs, m.in_split, x, counter)


@run_layer.register
def _(m: SqueezeExcite, x, counter):
    s = run_layer(GlobalAvgPool(), x, counter)
    s = run_layer(m.reduce, s, counter)
    s = run_layer(m.act, s, counter)
    s = run_layer(m.expand, s, counter)
    s = run_layer(m.gate, s, counter)
    counter.elementwise += x.size
    return np.asarray(x, dtype=np.float64) * s


@run_layer.register
def _(m: MixBlock, x, counter):
    spec = m.spec
    y = np.asarray(x, dtype=np.float64)
    if m.expand is not None:
        for part in (m.expand, m.expand_bn, m.expand_act):
            y = run_layer(part, y, counter)
    y = run_layer(m.dw, y, counter)
    if spec.shuffle and spec.shuffle_placement == "mixconv":
        y = shuffle_ref(y, 2)
    y = run_layer(m.dw_bn, y, counter)
    y = run_layer(m.dw_act, y, counter)
    if m.se is not None:
        y = run_layer(m.se, y, counter)
    y = run_layer(m.project, y, counter)
    y = run_layer(m.project_bn, y, counter)
    if spec.residual:
        counter.elementwise += y.size
        y = y + np.asarray(x, dtype=np.float64)
    if spec.shuffle and spec.shuffle_placement == "block":
        y = shuffle_ref(y, 2)
    return y


@run_layer.register
def _(m: Head, x, counter):
    for part in (m.conv, m.bn, m.act, m.block):
        x = run_layer(part, x, counter)
    return x


@run_layer.register
def _(m: EmbeddingStage, x, counter):
    for part in ("expand", "expand_bn", "expand_act", "gdc", "gdc_bn", "linear", "linear_bn"):
        x = run_layer(getattr(m, part), x, counter)
    return x.reshape(x.shape[0], -1)
