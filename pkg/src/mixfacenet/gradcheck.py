"""Finite-difference verification of every differentiable primitive.

Each case exposes its leaf tensors and a closure producing an output. The
probe loss is ``sum(out * r)`` for a fixed random ``r``; its analytic
gradient (via the tape) is compared with central differences taken on the
same closure. The error measure is norm-wise: ``|a - n| / max(|a|, |n|)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .arcface import ArcFaceHead, arcface_loss
from .blocks import BlockSpec, MixBlock, MixConvSpec, mixconv, se_block
from .layers import PReLU, Swish
from .ops import ConvParams
from .tensor import GradTape, Tensor

TOL64 = 1e-6
TOL32 = 1e-3
STEP64 = 1e-4
STEP64_ARCFACE = 1e-5
STEP32 = 5e-3


@dataclass
class Case:
    name: str
    leaves: Sequence[Tensor]
    fn: Callable[[], Tensor]
    step: float = STEP64


@dataclass
class CheckResult:
    name: str
    dtype: str
    rel_error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error <= self.tol)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:<22} {self.dtype:<8} rel_err={self.rel_error:.3e}  tol={self.tol:.0e}"


def rel_error(a: np.ndarray, n: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    n = np.asarray(n, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - n) / denom)


def _probe_value(fn, probe) -> float:
    return float(np.sum(fn().data.astype(np.float64) * probe))


def numeric_grads(fn, leaves, probe, step) -> list:
    out = []
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = _probe_value(fn, probe)
            flat[i] = orig - step
            lo = _probe_value(fn, probe)
            flat[i] = orig
            g[i] = (hi - lo) / (2 * step)
        out.append(g.reshape(leaf.shape))
    return out


def analytic_grads(fn, leaves, probe) -> list:
    for leaf in leaves:
        leaf.requires_grad = True
    with GradTape() as tape:
        loss = ops.weighted_sum(fn(), probe)
    grads = tape.backward(loss)
    return [grads[leaf] for leaf in leaves]


def check(case: Case, tol: float, rng) -> CheckResult:
    t0 = time.perf_counter()
    probe_shape = case.fn().shape
    probe = rng.standard_normal(probe_shape)
    a = analytic_grads(case.fn, case.leaves, probe)
    n = numeric_grads(case.fn, case.leaves, probe, case.step)
    err = rel_error(np.concatenate([x.ravel() for x in a]), np.concatenate([x.ravel() for x in n]))
    return CheckResult(case.name, np.dtype(case.leaves[0].dtype).name, err, tol, time.perf_counter() - t0)


def _away_from_zero(rng, shape, margin=0.2):
    x = rng.uniform(margin, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def build_cases(seed: int = 0, dtype=np.float64) -> list:
    """All gradient cases for one precision."""
    rng = np.random.default_rng(seed)
    step = STEP64 if dtype == np.float64 else STEP32

    def t(*shape, scale=1.0):
        return Tensor(rng.standard_normal(shape) * scale, dtype=dtype)

    def case(name, leaves, fn, step=step):
        return Case(name, leaves, fn, step)

    cases = []

    x, w, b = t(2, 3, 5, 5), t(4, 3, 3, 3, scale=0.5), t(4)
    cases.append(case("conv2d/dense", [x, w, b],
                      lambda x=x, w=w, b=b: ops.conv2d(x, w, b, ConvParams((3, 3), 1, 1, 1))))
    x, w, b = t(1, 6, 6, 6), t(6, 2, 3, 3, scale=0.5), t(6)
    cases.append(case("conv2d/grouped", [x, w, b],
                      lambda x=x, w=w, b=b: ops.conv2d(x, w, b, ConvParams((3, 3), 2, 1, 3))))
    x, w = t(2, 4, 5, 5), t(4, 1, 3, 3, scale=0.5)
    cases.append(case("conv2d/depthwise", [x, w],
                      lambda x=x, w=w: ops.conv2d(x, w, None, ConvParams((3, 3), 2, 1, 4))))
    x = t(1, 2, 4, 4)
    ones = Tensor(np.ones((2, 1, 3, 3)), dtype=dtype)
    cases.append(case("conv2d/depthwise-ones", [x],
                      lambda x=x, w=ones: ops.conv2d(x, w, None, ConvParams((3, 3), 1, 0, 2))))
    x, w = t(2, 4, 3, 3), t(6, 4, 1, 1)
    cases.append(case("conv2d/pointwise", [x, w], lambda x=x, w=w: ops.conv2d(x, w)))

    x, g, be = t(2, 3, 3, 3), t(3), t(3)
    rm = Tensor(rng.standard_normal(3) * 0.1, dtype=dtype)
    rv = Tensor(rng.uniform(0.5, 2.0, 3), dtype=dtype)
    cases.append(case("batch_norm/infer", [x, g, be],
                      lambda x=x, g=g, be=be: ops.batch_norm(x, g, be, rm, rv, training=False)))
    x, g, be = t(4, 3, 3, 3), t(3), t(3)
    rm2, rv2 = Tensor(np.zeros(3), dtype=dtype), Tensor(np.ones(3), dtype=dtype)
    cases.append(case("batch_norm/train", [x, g, be],
                      lambda x=x, g=g, be=be: ops.batch_norm(x, g, be, rm2, rv2, training=True)))

    x = Tensor(_away_from_zero(rng, (2, 3, 4, 4)), dtype=dtype)
    a = Tensor(rng.uniform(0.05, 0.5, 3), dtype=dtype)
    cases.append(case("prelu", [x, a], lambda x=x, a=a: ops.prelu(x, a)))
    x = t(2, 3, 3, 3, scale=2.0)
    cases.append(case("sigmoid", [x], lambda x=x: ops.sigmoid(x)))
    x = t(2, 3, 3, 3, scale=2.0)
    cases.append(case("swish", [x], lambda x=x: ops.swish(x)))
    x = t(2, 3, 4, 5)
    cases.append(case("global_avg_pool", [x], lambda x=x: ops.global_avg_pool(x)))
    p, q = t(2, 3, 3, 3), t(2, 3, 3, 3)
    cases.append(case("add", [p, q], lambda p=p, q=q: ops.add(p, q)))
    x, s = t(2, 4, 3, 3), t(2, 4, 1, 1)
    cases.append(case("scale_channels", [x, s], lambda x=x, s=s: ops.scale_channels(x, s)))
    x, y = t(2, 5, 3, 3), t(2, 2, 3, 3)
    cases.append(case("concat/slice", [x, y], lambda x=x, y=y: ops.concat_channels(
        [ops.slice_channels(x, 1, 4), y, ops.slice_channels(x, 0, 2)])))
    x = t(2, 6, 2, 2)
    cases.append(case("channel_shuffle", [x], lambda x=x: ops.channel_shuffle(x, 2)))
    x = t(2, 3, 2, 2)
    cases.append(case("flatten", [x], lambda x=x: ops.flatten(x)))

    spec = MixConvSpec((3, 5, 7), 1, (3, 2, 2))
    x = t(1, 7, 6, 6)
    ws = [t(c, 1, k, k, scale=0.3) for c, k in zip(spec.channel_split, spec.kernel_sizes)]
    cases.append(case("mixconv", [x, *ws], lambda x=x, ws=ws: mixconv(x, ws, spec)))

    x = t(2, 4, 3, 3)
    rw, rb, ew, eb = t(2, 4, 1, 1), t(2), t(4, 2, 1, 1), t(4)
    act = Swish()
    cases.append(case("se_block", [x, rw, rb, ew, eb],
                      lambda x=x, rw=rw, rb=rb, ew=ew, eb=eb: se_block(x, rw, rb, ew, eb, act)))
    x = t(2, 4, 3, 3)
    rw, rb, ew, eb = t(2, 4, 1, 1), t(2), t(4, 2, 1, 1), t(4)
    pact = PReLU(2, dtype=dtype)
    pact.alpha.data[:] = rng.uniform(0.1, 0.4, 2)
    cases.append(case("se_block/prelu", [x, rw, rb, ew, eb, pact.alpha],
                      lambda x=x, rw=rw, rb=rb, ew=ew, eb=eb: se_block(x, rw, rb, ew, eb, pact)))

    for shuffle in (False, True):
        bs = BlockSpec(4, 4, 8, MixConvSpec((3, 5), 1, (4, 4)), se_channels=2,
                       activation="swish", shuffle=shuffle)
        blk = MixBlock(bs, rng=np.random.default_rng(seed + 1), dtype=dtype).train()
        x = t(2, 4, 4, 4)
        name = "mix_block/shuffle" if shuffle else "mix_block"
        cases.append(case(name, [x, *blk.parameters()], lambda x=x, blk=blk: blk(x)))

    for margin, scale in ((0.5, 64.0), (0.0, 1.0), (3.0, 4.0)):
        emb = t(4, 8)
        head = ArcFaceHead(t(5, 8), margin, scale)
        labels = rng.integers(0, 5, 4)
        arc_step = STEP64_ARCFACE if dtype == np.float64 else step
        cases.append(case(f"arcface/m={margin:g},s={scale:g}", [emb, head.weight],
                          lambda emb=emb, head=head, labels=labels: arcface_loss(emb, labels, head),
                          step=arc_step))
    return cases


def run(seed: int = 0, precisions=(np.float64, np.float32)) -> list:
    results = []
    for dtype in precisions:
        tol = TOL64 if dtype == np.float64 else TOL32
        rng = np.random.default_rng(seed + 1000)
        for c in build_cases(seed, dtype):
            results.append(check(c, tol, rng))
    return results
