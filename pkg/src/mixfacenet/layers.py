"""Parameterized layers built on the primitives in :mod:`mixfacenet.ops`."""

from __future__ import annotations

from typing import Iterator, Optional, Sequence

import numpy as np

from . import ops
from .ops import ConvParams
from .tensor import Tensor

PRELU_INIT = 0.25


class Module:
    """Minimal module tree: parameters, buffers and ordered children."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", False)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: Tensor) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def children(self) -> Iterator[tuple]:
        yield from self._modules.items()

    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix, self
        for name, m in self._modules.items():
            yield from m.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for path, m in self.named_modules(prefix):
            for name, t in m._params.items():
                yield (f"{path}.{name}" if path else name), t

    def parameters(self) -> list:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for path, m in self.named_modules(prefix):
            for name, t in m._buffers.items():
                yield (f"{path}.{name}" if path else name), t

    def named_tensors(self) -> Iterator[tuple]:
        """Parameters and buffers, module by module, in registration order."""
        for path, m in self.named_modules():
            for name, t in list(m._params.items()) + list(m._buffers.items()):
                yield (f"{path}.{name}" if path else name), t

    def state_dict(self) -> dict:
        return {name: t.data for name, t in self.named_tensors()}

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def to_dtype(self, dtype) -> "Module":
        for _, t in self.named_tensors():
            t.data = t.data.astype(dtype)
        return self

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._modules)), m)

    def __iter__(self):
        return iter(self._modules.values())

    def __len__(self):
        return len(self._modules)

    def __getitem__(self, i):
        return self._modules[str(i)]


class Sequential(ModuleList):
    def forward(self, x):
        for m in self:
            x = m(x)
        return x


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size=1, stride: int = 1,
                 padding: int = 0, groups: int = 1, bias: bool = False,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        kh, kw = (kernel_size, kernel_size) if np.isscalar(kernel_size) else tuple(kernel_size)
        if in_channels % groups or out_channels % groups:
            raise ValueError(f"Conv2d: channels {in_channels}->{out_channels} not divisible by groups {groups}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.params = ConvParams((kh, kw), stride, padding, groups)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = (in_channels // groups) * kh * kw
        w = rng.standard_normal((out_channels, in_channels // groups, kh, kw)) * np.sqrt(2.0 / fan_in)
        self.weight = _param(w, dtype)
        self.bias = _param(np.zeros(out_channels), dtype) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.params)

    def __repr__(self):
        p = self.params
        return (f"Conv2d({self.in_channels}, {self.out_channels}, k={p.kernel}, s={p.stride}, "
                f"p={p.padding}, g={p.groups}, bias={self.bias is not None})")


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = ops.BN_EPS, momentum: float = ops.BN_MOMENTUM,
                 dtype=np.float32):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.gamma = _param(np.ones(channels), dtype)
        self.beta = _param(np.zeros(channels), dtype)
        self.register_buffer("running_mean", Tensor(np.zeros(channels, dtype=dtype)))
        self.register_buffer("running_var", Tensor(np.ones(channels, dtype=dtype)))

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              eps=self.eps, training=self.training, momentum=self.momentum)


class PReLU(Module):
    def __init__(self, channels: int, init: float = PRELU_INIT, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.alpha = _param(np.full(channels, init), dtype)

    def forward(self, x):
        return ops.prelu(x, self.alpha)


class Swish(Module):
    def forward(self, x):
        return ops.swish(x)


class Sigmoid(Module):
    def forward(self, x):
        return ops.sigmoid(x)


class GlobalAvgPool(Module):
    def forward(self, x):
        return ops.global_avg_pool(x)


class Flatten(Module):
    def forward(self, x):
        return ops.flatten(x)


def make_activation(kind: str, channels: int, dtype=np.float32) -> Module:
    if kind == "swish":
        return Swish()
    if kind == "prelu":
        return PReLU(channels, dtype=dtype)
    raise ValueError(f"unknown activation {kind!r} (expected 'swish' or 'prelu')")
