"""MixConv, squeeze-and-excitation, inverted-residual MixConv blocks, head and embedding stage."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import ops
from .layers import (BatchNorm2d, Conv2d, Module, ModuleList, PReLU, Sigmoid, make_activation)
from .ops import ConvParams
from .tensor import ShapeError, Tensor

SHUFFLE_GROUPS = 2
SHUFFLE_PLACEMENTS = ("block", "mixconv")


def split_evenly(channels: int, parts: int) -> list:
    """Equal split with the remainder added to the first group."""
    if parts < 1 or channels < parts:
        raise ValueError(f"cannot split {channels} channels into {parts} non-empty groups")
    sizes = [channels // parts] * parts
    sizes[0] += channels - sum(sizes)
    return sizes


@dataclass(frozen=True)
class MixConvSpec:
    kernel_sizes: tuple
    stride: int = 1
    channel_split: tuple = ()

    def __post_init__(self):
        ks = tuple(int(k) for k in self.kernel_sizes)
        object.__setattr__(self, "kernel_sizes", ks)
        object.__setattr__(self, "channel_split", tuple(int(c) for c in self.channel_split))
        if not ks:
            raise ValueError("MixConvSpec needs at least one kernel size")
        for k in ks:
            if k < 1 or k % 2 == 0:
                raise ValueError(f"MixConv kernel sizes must be odd, got {k}")
        if len(self.channel_split) != len(ks):
            raise ValueError(f"channel_split {self.channel_split} does not match {len(ks)} kernel sizes")
        if any(c < 1 for c in self.channel_split):
            raise ValueError(f"every MixConv group needs at least one channel: {self.channel_split}")

    @classmethod
    def even(cls, channels: int, kernel_sizes: Sequence[int], stride: int = 1) -> "MixConvSpec":
        return cls(tuple(kernel_sizes), stride, tuple(split_evenly(channels, len(kernel_sizes))))

    @property
    def channels(self) -> int:
        return sum(self.channel_split)

    def param_count(self) -> int:
        return sum(c * k * k for c, k in zip(self.channel_split, self.kernel_sizes))


def mixconv(x: Tensor, weights: Sequence[Tensor], spec: MixConvSpec) -> Tensor:
    """Depthwise convolution with a different kernel size per channel group."""
    if x.shape[1] != spec.channels:
        raise ShapeError(f"mixconv: input has {x.shape[1]} channels, split {spec.channel_split} sums to {spec.channels}")
    if len(weights) != len(spec.kernel_sizes):
        raise ShapeError(f"mixconv: {len(weights)} weight tensors for {len(spec.kernel_sizes)} groups")
    parts = ops.split_channels(x, spec.channel_split)
    outs = []
    for part, w, c, k in zip(parts, weights, spec.channel_split, spec.kernel_sizes):
        if w.shape != (c, 1, k, k):
            raise ShapeError(f"mixconv: weight shape {w.shape}, expected {(c, 1, k, k)}")
        outs.append(ops.conv2d(part, w, None, ConvParams((k, k), spec.stride, (k - 1) // 2, c)))
    return ops.concat_channels(outs)


def se_block(x: Tensor, reduce_w: Tensor, reduce_b: Optional[Tensor], expand_w: Tensor,
             expand_b: Optional[Tensor], activation: Module) -> Tensor:
    """Gate channels by sigmoid(expand(act(reduce(mean_hw(x)))))."""
    c = x.shape[1]
    sq = reduce_w.shape[0]
    if reduce_w.shape != (sq, c, 1, 1) or expand_w.shape != (c, sq, 1, 1):
        raise ShapeError(f"se_block: weights {reduce_w.shape}/{expand_w.shape} do not fit {c} channels")
    s = ops.global_avg_pool(x)
    s = ops.conv2d(s, reduce_w, reduce_b)
    s = activation(s)
    s = ops.conv2d(s, expand_w, expand_b)
    return ops.scale_channels(x, ops.sigmoid(s))


class MixConv(Module):
    def __init__(self, spec: MixConvSpec, rng=None, dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.convs = ModuleList([
            Conv2d(c, c, k, spec.stride, (k - 1) // 2, groups=c, rng=rng, dtype=dtype)
            for c, k in zip(spec.channel_split, spec.kernel_sizes)
        ])

    def forward(self, x):
        return mixconv(x, [m.weight for m in self.convs], self.spec)


class GroupedPointwise(Module):
    """1x1 convolution split into independent channel groups (remainder to group 0)."""

    def __init__(self, in_channels: int, out_channels: int, groups: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        self.in_split = split_evenly(in_channels, groups)
        self.out_split = split_evenly(out_channels, groups)
        self.convs = ModuleList([Conv2d(i, o, 1, rng=rng, dtype=dtype)
                                 for i, o in zip(self.in_split, self.out_split)])

    def forward(self, x):
        parts = ops.split_channels(x, self.in_split)
        return ops.concat_channels([m(p) for m, p in zip(self.convs, parts)])


class SqueezeExcite(Module):
    def __init__(self, channels: int, squeeze_channels: int, activation: str = "swish",
                 rng=None, dtype=np.float32):
        super().__init__()
        if squeeze_channels < 1:
            raise ValueError("SE squeeze width must be at least 1")
        self.reduce = Conv2d(channels, squeeze_channels, 1, bias=True, rng=rng, dtype=dtype)
        self.act = make_activation(activation, squeeze_channels, dtype)
        self.expand = Conv2d(squeeze_channels, channels, 1, bias=True, rng=rng, dtype=dtype)
        self.gate = Sigmoid()

    def forward(self, x):
        return se_block(x, self.reduce.weight, self.reduce.bias, self.expand.weight,
                        self.expand.bias, self.act)


@dataclass(frozen=True)
class BlockSpec:
    """One inverted-residual MixConv block.

    ``expansion_channels == in_channels`` skips the 1x1 expansion conv.
    ``se_channels`` is the SE bottleneck width (0 disables SE).
    ``residual=None`` enables the skip connection whenever shapes allow.
    """

    in_channels: int
    out_channels: int
    expansion_channels: int
    mixconv: MixConvSpec
    se_channels: int = 0
    activation: str = "swish"
    shuffle: bool = False
    shuffle_placement: str = "block"
    expand_groups: int = 1
    project_groups: int = 1
    residual: Optional[bool] = None

    def __post_init__(self):
        if self.mixconv.channels != self.expansion_channels:
            raise ValueError(f"mixconv split sums to {self.mixconv.channels}, expansion is {self.expansion_channels}")
        if self.activation not in ("swish", "prelu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.shuffle_placement not in SHUFFLE_PLACEMENTS:
            raise ValueError(f"shuffle_placement must be one of {SHUFFLE_PLACEMENTS}")
        can_skip = self.mixconv.stride == 1 and self.in_channels == self.out_channels
        if self.residual is None:
            object.__setattr__(self, "residual", can_skip)
        elif self.residual and not can_skip:
            raise ShapeError(
                f"residual requested but block maps {self.in_channels}->{self.out_channels} "
                f"channels with stride {self.mixconv.stride}")
        if self.shuffle:
            width = self.out_channels if self.shuffle_placement == "block" else self.expansion_channels
            if width % SHUFFLE_GROUPS:
                raise ValueError(f"channel shuffle needs an even channel count, got {width}")

    @property
    def use_se(self) -> bool:
        return self.se_channels > 0

    @property
    def stride(self) -> int:
        return self.mixconv.stride


class MixBlock(Module):
    """expand -> BN -> act -> MixConv -> BN -> act -> [SE] -> project -> BN [+x] [shuffle]."""

    def __init__(self, spec: BlockSpec, rng=None, dtype=np.float32):
        super().__init__()
        self.spec = spec
        if spec.expansion_channels != spec.in_channels:
            self.expand = GroupedPointwise(spec.in_channels, spec.expansion_channels,
                                           spec.expand_groups, rng, dtype)
            self.expand_bn = BatchNorm2d(spec.expansion_channels, dtype=dtype)
            self.expand_act = make_activation(spec.activation, spec.expansion_channels, dtype)
        else:
            self.expand = None
        self.dw = MixConv(spec.mixconv, rng, dtype)
        self.dw_bn = BatchNorm2d(spec.expansion_channels, dtype=dtype)
        self.dw_act = make_activation(spec.activation, spec.expansion_channels, dtype)
        self.se = (SqueezeExcite(spec.expansion_channels, spec.se_channels,
                                 "swish" if spec.activation == "swish" else "prelu", rng, dtype)
                   if spec.use_se else None)
        self.project = GroupedPointwise(spec.expansion_channels, spec.out_channels,
                                        spec.project_groups, rng, dtype)
        self.project_bn = BatchNorm2d(spec.out_channels, dtype=dtype)

    def forward(self, x):
        spec = self.spec
        if x.shape[1] != spec.in_channels:
            raise ShapeError(f"block expects {spec.in_channels} input channels, got {x.shape[1]}")
        y = x
        if self.expand is not None:
            y = self.expand_act(self.expand_bn(self.expand(y)))
        y = self.dw(y)
        if spec.shuffle and spec.shuffle_placement == "mixconv":
            y = ops.channel_shuffle(y, SHUFFLE_GROUPS)
        y = self.dw_act(self.dw_bn(y))
        if self.se is not None:
            y = self.se(y)
        y = self.project_bn(self.project(y))
        if spec.residual:
            y = ops.add(y, x)
        if spec.shuffle and spec.shuffle_placement == "block":
            y = ops.channel_shuffle(y, SHUFFLE_GROUPS)
        return y


class Head(Module):
    """3x3 stride-2 conv -> BN -> PReLU -> one residual block."""

    def __init__(self, stem_channels: int, block: BlockSpec, in_channels: int = 3,
                 rng=None, dtype=np.float32):
        super().__init__()
        if block.in_channels != stem_channels or not block.residual:
            raise ValueError("head block must be a residual block on the stem channels")
        self.in_channels = in_channels
        self.conv = Conv2d(in_channels, stem_channels, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(stem_channels, dtype=dtype)
        self.act = PReLU(stem_channels, dtype=dtype)
        self.block = MixBlock(block, rng, dtype)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"head expects (n, {self.in_channels}, h, w) input, got {x.shape}")
        return self.block(self.act(self.bn(self.conv(x))))


class EmbeddingStage(Module):
    """1x1 expand -> BN -> PReLU -> global depthwise conv -> BN -> 1x1 -> BN -> flatten."""

    def __init__(self, in_channels: int, expand_channels: int = 1024, embed_dim: int = 512,
                 spatial: int = 7, rng=None, dtype=np.float32):
        super().__init__()
        self.in_channels, self.spatial = in_channels, spatial
        self.expand = Conv2d(in_channels, expand_channels, 1, rng=rng, dtype=dtype)
        self.expand_bn = BatchNorm2d(expand_channels, dtype=dtype)
        self.expand_act = PReLU(expand_channels, dtype=dtype)
        self.gdc = Conv2d(expand_channels, expand_channels, spatial, groups=expand_channels,
                          rng=rng, dtype=dtype)
        self.gdc_bn = BatchNorm2d(expand_channels, dtype=dtype)
        self.linear = Conv2d(expand_channels, embed_dim, 1, rng=rng, dtype=dtype)
        self.linear_bn = BatchNorm2d(embed_dim, dtype=dtype)

    def forward(self, x):
        if x.ndim != 4 or x.shape[2:] != (self.spatial, self.spatial):
            raise ShapeError(f"embedding stage needs {self.spatial}x{self.spatial} input, got {x.shape[2:]}")
        y = self.expand_act(self.expand_bn(self.expand(x)))
        y = self.gdc_bn(self.gdc(y))
        y = self.linear_bn(self.linear(y))
        return ops.flatten(y)
