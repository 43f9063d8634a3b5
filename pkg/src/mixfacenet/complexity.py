"""Static FLOPs / MACs / parameter accounting over a module tree.

Two counting conventions are carried side by side on every row:

``macs``
    multiply-accumulates of convolutions (including the SE 1x1 convs).
``flops``
    the convention behind the published MixFaceNet / MobileFaceNet budgets:
    a convolution costs ``2 * kernel_ops`` per output element plus one for
    the bias, batch norm two per element, PReLU / swish / sigmoid one per
    element, global pooling one per input element. Residual additions,
    the SE rescale and channel shuffles are free.

Parameters count trainable floats only; BN running statistics are buffers.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Optional

from .blocks import EmbeddingStage, GroupedPointwise, Head, MixBlock, MixConv, SqueezeExcite
from .layers import (BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, Module, ModuleList, PReLU,
                     Sigmoid, Swish)
from .network import Network

CONVENTIONS = ("flops", "macs")


@dataclass
class CostRow:
    name: str
    kind: str
    out_shape: tuple
    macs: int = 0
    flops: int = 0
    params: int = 0


@dataclass
class CostReport:
    rows: list = field(default_factory=list)
    convention: str = "flops=2*mac+bias+2*bn+act+pool; macs=conv multiply-accumulates"

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    def add(self, *args, **kw) -> None:
        self.rows.append(CostRow(*args, **kw))

    def to_table(self) -> str:
        lines = [f"{'layer':<44} {'kind':<16} {'out_shape':<18} {'macs':>12} {'flops':>12} {'params':>9}"]
        for r in self.rows:
            lines.append(f"{r.name:<44} {r.kind:<16} {_shape(r.out_shape):<18} "
                         f"{r.macs:>12,} {r.flops:>12,} {r.params:>9,}")
        lines.append(f"{'TOTAL':<44} {'':<16} {'':<18} {self.macs:>12,} {self.flops:>12,} {self.params:>9,}")
        lines.append(f"# {self.macs / 1e6:.1f}M MACs, {self.flops / 1e6:.1f}M FLOPs, "
                     f"{self.params / 1e6:.2f}M params  ({self.convention})")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "kind", "out_shape", "macs", "params", "flops"])
        for r in self.rows:
            w.writerow([r.name, r.kind, _shape(r.out_shape), r.macs, r.params, r.flops])
        w.writerow(["TOTAL", "total", "", self.macs, self.params, self.flops])
        return buf.getvalue()


def _shape(s) -> str:
    return "x".join(str(d) for d in s)


def _numel(shape) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


@singledispatch
def _walk(m: Module, shape: tuple, name: str, rep: CostReport) -> tuple:
    raise TypeError(f"no cost rule for {type(m).__name__}")


@_walk.register
def _(m: Conv2d, shape, name, rep):
    n, c, h, w = shape
    p = m.params
    oh, ow = p.output_hw(h, w)
    out = (n, m.out_channels, oh, ow)
    kernel_ops = p.kernel[0] * p.kernel[1] * (c // p.groups)
    macs = _numel(out) * kernel_ops
    bias = m.bias is not None
    params = m.weight.data.size + (m.bias.data.size if bias else 0)
    kind = "dwconv" if p.groups == c == m.out_channels and p.groups > 1 else "conv"
    rep.add(name, f"{kind}{p.kernel[0]}x{p.kernel[1]}", out, macs,
            2 * macs + (_numel(out) if bias else 0), params)
    return out


@_walk.register
def _(m: BatchNorm2d, shape, name, rep):
    rep.add(name, "batchnorm", shape, 0, 2 * _numel(shape), 2 * m.channels)
    return shape


@_walk.register
def _(m: PReLU, shape, name, rep):
    rep.add(name, "prelu", shape, 0, _numel(shape), m.channels)
    return shape


@_walk.register
def _(m: Swish, shape, name, rep):
    rep.add(name, "swish", shape, 0, _numel(shape), 0)
    return shape


@_walk.register
def _(m: Sigmoid, shape, name, rep):
    rep.add(name, "sigmoid", shape, 0, _numel(shape), 0)
    return shape


@_walk.register
def _(m: GlobalAvgPool, shape, name, rep):
    out = shape[:2] + (1, 1)
    rep.add(name, "avgpool", out, 0, _numel(shape), 0)
    return out


@_walk.register
def _(m: Flatten, shape, name, rep):
    out = (shape[0], _numel(shape[1:]))
    rep.add(name, "flatten", out)
    return out


@_walk.register
def _(m: ModuleList, shape, name, rep):
    for child_name, child in m.children():
        shape = _walk(child, shape, _join(name, child_name), rep)
    return shape


@_walk.register
def _(m: MixConv, shape, name, rep):
    n, _, h, w = shape
    out_c = 0
    for i, (conv, c) in enumerate(zip(m.convs, m.spec.channel_split)):
        o = _walk(conv, (n, c, h, w), _join(name, f"convs.{i}"), rep)
        out_c += o[1]
    return (n, out_c) + o[2:]


@_walk.register
def _(m: GroupedPointwise, shape, name, rep):
    n, _, h, w = shape
    for i, (conv, c) in enumerate(zip(m.convs, m.in_split)):
        _walk(conv, (n, c, h, w), _join(name, f"convs.{i}"), rep)
    return (n, sum(m.out_split), h, w)


@_walk.register
def _(m: SqueezeExcite, shape, name, rep):
    s = _walk(GlobalAvgPool(), shape, _join(name, "pool"), rep)
    s = _walk(m.reduce, s, _join(name, "reduce"), rep)
    s = _walk(m.act, s, _join(name, "act"), rep)
    s = _walk(m.expand, s, _join(name, "expand"), rep)
    _walk(m.gate, s, _join(name, "gate"), rep)
    rep.add(_join(name, "scale"), "mul", shape)
    return shape


@_walk.register
def _(m: MixBlock, shape, name, rep):
    spec = m.spec
    y = shape
    if m.expand is not None:
        y = _walk(m.expand, y, _join(name, "expand"), rep)
        y = _walk(m.expand_bn, y, _join(name, "expand_bn"), rep)
        y = _walk(m.expand_act, y, _join(name, "expand_act"), rep)
    y = _walk(m.dw, y, _join(name, "dw"), rep)
    if spec.shuffle and spec.shuffle_placement == "mixconv":
        rep.add(_join(name, "shuffle"), "shuffle", y)
    y = _walk(m.dw_bn, y, _join(name, "dw_bn"), rep)
    y = _walk(m.dw_act, y, _join(name, "dw_act"), rep)
    if m.se is not None:
        y = _walk(m.se, y, _join(name, "se"), rep)
    y = _walk(m.project, y, _join(name, "project"), rep)
    y = _walk(m.project_bn, y, _join(name, "project_bn"), rep)
    if spec.residual:
        rep.add(_join(name, "residual"), "add", y)
    if spec.shuffle and spec.shuffle_placement == "block":
        rep.add(_join(name, "shuffle"), "shuffle", y)
    return y


@_walk.register
def _(m: Head, shape, name, rep):
    y = _walk(m.conv, shape, _join(name, "conv"), rep)
    y = _walk(m.bn, y, _join(name, "bn"), rep)
    y = _walk(m.act, y, _join(name, "act"), rep)
    return _walk(m.block, y, _join(name, "block"), rep)


@_walk.register
def _(m: EmbeddingStage, shape, name, rep):
    y = shape
    for part in ("expand", "expand_bn", "expand_act", "gdc", "gdc_bn", "linear", "linear_bn"):
        y = _walk(getattr(m, part), y, _join(name, part), rep)
    out = (y[0], _numel(y[1:]))
    rep.add(_join(name, "flatten"), "flatten", out)
    return out


@_walk.register
def _(m: Network, shape, name, rep):
    y = _walk(m.head, shape, _join(name, "head"), rep)
    y = _walk(m.blocks, y, _join(name, "blocks"), rep)
    return _walk(m.embedding, y, _join(name, "embedding"), rep)


def _default_shape(m: Module) -> tuple:
    if isinstance(m, Network):
        h, w = m.config.input_size
        return (1, m.config.in_channels, h, w)
    raise ValueError(f"input_shape is required for a bare {type(m).__name__}")


def _input_shape(m: Module, input_shape: Optional[tuple]) -> tuple:
    if input_shape is None:
        return _default_shape(m)
    shape = tuple(int(d) for d in input_shape)
    if len(shape) == 2 and isinstance(m, Network):
        return (1, m.config.in_channels) + shape
    if len(shape) == 3:
        return (1,) + shape
    return shape


def cost_report(m: Module, input_shape: Optional[tuple] = None) -> CostReport:
    """Per-layer rows for one sample of shape ``input_shape`` (n is forced to 1)."""
    shape = _input_shape(m, input_shape)
    shape = (1,) + tuple(shape[1:])
    rep = CostReport()
    _walk(m, shape, "", rep)
    return rep


def count_params(m: Module) -> int:
    return sum(t.data.size for _, t in m.named_parameters())


def count_flops(m: Module, input_shape: Optional[tuple] = None, convention: str = "flops") -> int:
    """Per-sample cost under ``convention`` ('flops' or 'macs')."""
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    rep = cost_report(m, input_shape)
    return rep.flops if convention == "flops" else rep.macs


def count_macs(m: Module, input_shape: Optional[tuple] = None) -> int:
    return count_flops(m, input_shape, "macs")
