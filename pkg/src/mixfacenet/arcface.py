"""Additive angular margin (ArcFace) classification head and softmax cross-entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, record

DEFAULT_MARGIN = 0.5
DEFAULT_SCALE = 64.0
COS_CLAMP = 1e-7


@dataclass
class ArcFaceHead:
    weight: Tensor  # (num_classes, embed_dim)
    margin: float = DEFAULT_MARGIN
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        if not 0 <= self.margin < math.pi:
            raise ValueError(f"margin must lie in [0, pi), got {self.margin}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @classmethod
    def create(cls, num_classes: int, embed_dim: int, seed: int = 0, margin: float = DEFAULT_MARGIN,
               scale: float = DEFAULT_SCALE, dtype=np.float32) -> "ArcFaceHead":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((num_classes, embed_dim)) * 0.01
        return cls(Tensor(w.astype(dtype), requires_grad=True), margin, scale)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]


def _check(emb: np.ndarray, labels: np.ndarray, weight: np.ndarray) -> None:
    if emb.ndim != 2 or weight.ndim != 2 or emb.shape[1] != weight.shape[1]:
        raise ShapeError(f"embeddings {emb.shape} and class weights {weight.shape} do not match")
    if labels.shape != (emb.shape[0],):
        raise ShapeError(f"labels shape {labels.shape}, expected ({emb.shape[0]},)")
    if labels.size and (labels.min() < 0 or labels.max() >= weight.shape[0]):
        raise ValueError(f"labels must lie in [0, {weight.shape[0]})")
    if np.any(np.linalg.norm(emb, axis=1) == 0):
        raise ValueError("zero-norm embedding")
    if np.any(np.linalg.norm(weight, axis=1) == 0):
        raise ValueError("zero-norm class weight")


def _forward(emb, labels, weight, margin, scale):
    en = np.linalg.norm(emb, axis=1, keepdims=True)
    wn = np.linalg.norm(weight, axis=1, keepdims=True)
    eh, wh = emb / en, weight / wn
    cos = eh @ wh.T
    rows = np.arange(len(labels))
    c = np.clip(cos[rows, labels], -1.0, 1.0)
    if margin == 0:
        target, dtarget = cos[rows, labels], np.ones_like(c)
    else:
        cm, sm = math.cos(margin), math.sin(margin)
        easy = c > math.cos(math.pi - margin)
        # cos(theta + m) = c cos m - sin(theta) sin m; the clamp only bounds the derivative
        target = np.where(easy, c * cm - np.sqrt(1 - c * c) * sm, c - margin * sm)
        cc = np.clip(c, -1 + COS_CLAMP, 1 - COS_CLAMP)
        dtarget = np.where(easy, cm + cc * sm / np.sqrt(1 - cc * cc), 1.0)
    logits = cos.copy()
    logits[rows, labels] = target
    logits *= scale
    return logits, (en, wn, eh, wh, rows, dtarget)


def arcface_logits(embeddings, labels, head: ArcFaceHead) -> np.ndarray:
    """``s*cos(theta_y + m)`` for each target class, ``s*cos(theta_j)`` elsewhere."""
    emb = np.asarray(getattr(embeddings, "data", embeddings))
    w = head.weight.data.astype(emb.dtype, copy=False)
    labels = np.asarray(labels, dtype=np.int64)
    _check(emb, labels, w)
    return _forward(emb, labels, w, head.margin, head.scale)[0]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels) -> float:
    """Mean of -log softmax(logits)[label]."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    return float(-log_softmax(logits)[np.arange(len(labels)), labels].mean())


def arcface_backward(embeddings, labels, head: ArcFaceHead) -> tuple:
    """Loss and analytic gradients ``(loss, d_embeddings, d_weight)``."""
    emb = np.asarray(getattr(embeddings, "data", embeddings))
    w = head.weight.data.astype(emb.dtype, copy=False)
    labels = np.asarray(labels, dtype=np.int64)
    _check(emb, labels, w)
    logits, (en, wn, eh, wh, rows, dtarget) = _forward(emb, labels, w, head.margin, head.scale)
    lsm = log_softmax(logits)
    loss = -lsm[rows, labels].mean()
    n = len(labels)
    dlogits = np.exp(lsm)
    dlogits[rows, labels] -= 1
    dlogits /= n
    dcos = head.scale * dlogits
    dcos[rows, labels] *= dtarget
    deh = dcos @ wh
    dwh = dcos.T @ eh
    demb = (deh - eh * (eh * deh).sum(axis=1, keepdims=True)) / en
    dw = (dwh - wh * (wh * dwh).sum(axis=1, keepdims=True)) / wn
    return float(loss), demb, dw


def arcface_loss(embeddings: Tensor, labels, head: ArcFaceHead) -> Tensor:
    """Scalar ArcFace loss registered on the active tape."""
    loss, demb, dw = arcface_backward(embeddings, labels, head)

    def backward(gout, needs):
        g = gout.reshape(())
        return (demb * g if needs[0] else None,
                (dw * g).astype(head.weight.dtype, copy=False) if needs[1] else None)

    return record("arcface_loss", (embeddings, head.weight),
                  np.asarray(loss, dtype=embeddings.dtype), backward)


def accuracy(embeddings, labels, head: ArcFaceHead) -> float:
    """Fraction of rows whose most similar class weight (no margin) is the label."""
    emb = np.asarray(getattr(embeddings, "data", embeddings), dtype=np.float64)
    w = head.weight.data.astype(np.float64)
    cos = (emb / np.linalg.norm(emb, axis=1, keepdims=True)) @ (w / np.linalg.norm(w, axis=1, keepdims=True)).T
    return float((cos.argmax(axis=1) == np.asarray(labels)).mean())
