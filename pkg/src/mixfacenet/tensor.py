"""Dense tensor value and the gradient tape that records primitive ops."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes are incompatible with an op's contract."""


class TapeError(RuntimeError):
    pass


class Tensor:
    """A dense float array in (n, c, h, w) layout for feature maps.

    Weights, embeddings and scalars use the same container with their own
    rank. The array is never mutated by ops; every op returns a new Tensor.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if dtype is None and not isinstance(data, np.ndarray):
            dtype = np.float32
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x if dtype is None or x.dtype == dtype else x.astype(dtype)
    return Tensor(x, dtype=dtype)


@dataclass
class _Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray, tuple], Sequence[Optional[np.ndarray]]]
    needs: tuple


class Gradients:
    """Mapping from tensors to their accumulated gradient arrays."""

    def __init__(self, grads: dict, tensors: dict):
        self._grads = grads
        self._tensors = tensors

    def __getitem__(self, t: Tensor) -> np.ndarray:
        # Tensors the loss does not depend on get an exact zero gradient.
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def __len__(self) -> int:
        return len(self._grads)


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Optional["GradTape"]:
    s = _stack()
    return s[-1] if s else None


@dataclass
class GradTape:
    """Records executed primitives so a scalar loss can be differentiated.

    Use as a context manager; ops executed inside the block whose inputs
    require gradients are appended in execution order. ``backward`` walks
    the record in reverse and may be called once per recording.
    """

    nodes: list = field(default_factory=list)
    _consumed: bool = False

    def __enter__(self) -> "GradTape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().remove(self)

    def record(self, op: str, inputs: Iterable[Tensor], output: Tensor, backward) -> None:
        if self._consumed:
            raise TapeError("tape already replayed; call reset() before recording again")
        inputs = tuple(inputs)
        needs = tuple(isinstance(t, Tensor) and t.requires_grad for t in inputs)
        self.nodes.append(_Node(op, inputs, output, backward, needs))

    def reset(self) -> None:
        self.nodes.clear()
        self._consumed = False

    @property
    def ops(self) -> list:
        return [n.op for n in self.nodes]

    def backward(self, loss: Tensor, seed=1.0, visit: Optional[list] = None) -> Gradients:
        if self._consumed:
            raise TapeError("tape replayed twice without reset")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        grads = {id(loss): np.full(loss.shape, seed, dtype=loss.dtype)}
        keep = {id(loss): loss}
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            if visit is not None:
                visit.append(node.op)
            in_grads = node.backward(g, node.needs)
            for t, need, gi in zip(node.inputs, node.needs, in_grads):
                if gi is None or not need:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    keep[key] = t
        return Gradients(grads, keep)


def record(op: str, inputs: Sequence, out_data: np.ndarray, backward) -> Tensor:
    """Wrap ``out_data`` and register it on the active tape when needed."""
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    tape = active_tape()
    out = Tensor(out_data, requires_grad=needs and tape is not None)
    if out.requires_grad:
        tape.record(op, inputs, out, backward)
    return out
