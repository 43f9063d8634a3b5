"""Toy-scale ArcFace training: synthetic identities, SGD with momentum."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .arcface import ArcFaceHead, accuracy, arcface_loss
from .config import NetworkConfig, preset
from .network import Network
from .tensor import GradTape, Tensor


@dataclass
class TrainConfig:
    preset: str = "mixfacenet-nano"
    steps: int = 2000
    seed: int = 0
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    margin: float = 0.5
    scale: float = 64.0
    num_classes: int = 8
    samples_per_class: int = 4
    lr_steps: tuple = ()  # lr is divided by 10 at each listed step
    eval_every: int = 25
    stop_at: Optional[float] = None  # end early once eval accuracy reaches this


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay folded into the gradient."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads) -> None:
        for p, v in zip(self.params, self._velocity):
            g = grads[p].astype(p.dtype, copy=False)
            if self.weight_decay:
                g = g + p.dtype.type(self.weight_decay) * p.data
            v *= p.dtype.type(self.momentum)
            v += g
            p.data = p.data - p.dtype.type(self.lr) * v


def toy_dataset(cfg: NetworkConfig, num_classes: int = 8, per_class: int = 4, seed: int = 0) -> tuple:
    """Class prototypes of smooth random texture plus per-sample noise, in [-1, 1]."""
    rng = np.random.default_rng(seed)
    h, w = cfg.input_size
    c = cfg.in_channels
    coarse = rng.uniform(-1, 1, size=(num_classes, c, 8, 8))
    reps = (-(-h // 8), -(-w // 8))
    protos = np.kron(coarse, np.ones((1, 1) + reps))[:, :, :h, :w]
    x = np.repeat(protos, per_class, axis=0)
    x = np.clip(x + 0.25 * rng.standard_normal(x.shape), -1, 1).astype(np.float32)
    y = np.repeat(np.arange(num_classes), per_class)
    return x, y


@dataclass
class TrainResult:
    net: Network
    head: ArcFaceHead
    curve: list = field(default_factory=list)  # (step, loss, accuracy or nan)
    final_accuracy: float = 0.0
    steps_run: int = 0


def evaluate(net: Network, head: ArcFaceHead, x, y) -> float:
    net.eval()
    emb = net(Tensor(x)).data
    return accuracy(emb, y, head)


def train_toy(tc: TrainConfig = TrainConfig(), log=None,
              config: Optional[NetworkConfig] = None) -> TrainResult:
    cfg = preset(tc.preset) if config is None else config
    net = Network(cfg, seed=tc.seed)
    head = ArcFaceHead.create(tc.num_classes, cfg.embed_dim, seed=tc.seed + 1,
                              margin=tc.margin, scale=tc.scale)
    x, y = toy_dataset(cfg, tc.num_classes, tc.samples_per_class, seed=tc.seed)
    params = net.parameters() + [head.weight]
    opt = SGD(params, tc.lr, tc.momentum, tc.weight_decay)
    result = TrainResult(net, head)
    xt = Tensor(x)
    for step in range(1, tc.steps + 1):
        opt.lr = tc.lr * 0.1 ** sum(step > s for s in tc.lr_steps)
        net.train()
        with GradTape() as tape:
            emb = net(xt)
            loss = arcface_loss(emb, y, head)
        grads = tape.backward(loss)
        opt.step(grads)
        acc = float("nan")
        if step % tc.eval_every == 0 or step == tc.steps:
            acc = evaluate(net, head, x, y)
            if log is not None:
                log(f"step {step:5d}  loss {loss.item():.4f}  train-acc {acc:.3f}")
        result.curve.append((step, loss.item(), acc))
        result.steps_run = step
        if tc.stop_at is not None and acc >= tc.stop_at:
            break
    result.final_accuracy = evaluate(net, head, x, y)
    return result
