"""Full MixFaceNet assembly, inference, weight checkpoints and embedding comparison."""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from . import config as cfgmod
from .blocks import EmbeddingStage, Head, MixBlock
from .config import ConfigError, NetworkConfig
from .layers import Module, ModuleList
from .tensor import ShapeError, Tensor

CHECKPOINT_MAGIC = b"MFNW"
CHECKPOINT_VERSION = 1
META_PREFIX = "@meta/"
METRICS = ("euclidean", "euclidean_normalized", "cosine")


class CheckpointError(ValueError):
    pass


class Network(Module):
    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        specs = config.block_specs()
        head_spec = config.head_block()
        stem = config.scaled(config.stem_channels)
        self.head = Head(stem, head_spec, config.in_channels, rng, dtype)
        self.blocks = ModuleList()
        prev = head_spec.out_channels
        for i, spec in enumerate(specs):
            if spec.in_channels != prev:
                raise ConfigError(f"stage {i}: block input {spec.in_channels} != previous output {prev}")
            self.blocks.append(MixBlock(spec, rng, dtype))
            prev = spec.out_channels
        spatial = config.spatial_after_blocks()
        if spatial != (config.gdc_size, config.gdc_size):
            raise ConfigError(
                f"{config.name}: body output is {spatial[0]}x{spatial[1]}, embedding stage needs "
                f"{config.gdc_size}x{config.gdc_size}")
        self.embedding = EmbeddingStage(prev, config.scaled(config.embedding_expand),
                                        config.embed_dim, config.gdc_size, rng, dtype)

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def forward(self, x: Tensor) -> Tensor:
        h, w = self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (self.config.in_channels, h, w):
            raise ShapeError(f"{self.config.name} expects input (n, {self.config.in_channels}, {h}, {w}), "
                             f"got {x.shape}")
        y = self.head(x)
        for block in self.blocks:
            y = block(y)
        return self.embedding(y)

    def load_state(self, state: dict) -> None:
        """Assign every tensor by name; all names and shapes must match exactly."""
        own = dict(self.named_tensors())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise CheckpointError(f"checkpoint mismatch: missing={missing} extra={extra}")
        bad = [f"{k}: {tuple(state[k].shape)} != {own[k].shape}" for k in own
               if tuple(state[k].shape) != own[k].shape]
        if bad:
            raise CheckpointError("shape mismatch: " + "; ".join(bad))
        for k, t in own.items():
            t.data = np.array(state[k], dtype=t.dtype)


def build(config: NetworkConfig, seed: int = 0) -> Network:
    return Network(config, seed)


def thread_count(env: Optional[str] = None) -> int:
    raw = os.environ.get("MFN_THREADS", "1") if env is None else env
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"MFN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"MFN_THREADS must be a positive integer, got {raw!r}")
    return n


def forward(net: Network, batch, threads: Optional[int] = None) -> np.ndarray:
    """Inference-mode embeddings, shape (n, embed_dim).

    Samples are evaluated one at a time so each row is bitwise independent of
    batch composition and of the number of worker threads.
    """
    x = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    if x.ndim != 4:
        raise ShapeError(f"forward expects a 4-d batch, got shape {x.shape}")
    if net.training:
        net.eval()
    threads = thread_count() if threads is None else threads
    x = x.astype(net.head.conv.weight.dtype, copy=False)

    def one(i):
        return net(Tensor(x[i:i + 1])).data[0]

    if threads == 1 or len(x) < 2:
        rows = [one(i) for i in range(len(x))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(len(x))))
    if not rows:
        return np.zeros((0, net.embed_dim), dtype=x.dtype)
    return np.stack(rows)


def _pack_entry(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"entry name too long ({len(raw)} bytes)")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_checkpoint(net: Network, path) -> None:
    meta = {
        "config_name": net.config.name,
        "config": cfgmod.to_text(net.config),
    }
    entries = [(f"{META_PREFIX}{k}={v}", np.zeros(0, dtype=np.float32)) for k, v in meta.items()]
    entries += [(name, t.data) for name, t in net.named_tensors()]
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(entries)))
        for name, arr in entries:
            f.write(_pack_entry(name, arr))


def read_checkpoint(path) -> tuple:
    """Parse a checkpoint file into (tensors, metadata) without building a network."""
    with open(path, "rb") as f:
        buf = f.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes for {what} at offset {pos}, "
                                  f"file has {len(buf)}")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a MFNW checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
    tensors, meta = {}, {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"entry {i} name length"))
        name = take(nlen, f"entry {i} name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"entry {i} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"entry {i} dims"))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * size, f"entry {name!r} data"), dtype="<f4").astype(np.float32)
        if name.startswith(META_PREFIX):
            key, _, value = name[len(META_PREFIX):].partition("=")
            meta[key] = value
            continue
        if name in tensors:
            raise CheckpointError(f"duplicate entry {name!r}")
        tensors[name] = arr.reshape(dims)
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last entry")
    return tensors, meta


def load_checkpoint(path, config: Optional[NetworkConfig] = None) -> Network:
    tensors, meta = read_checkpoint(path)
    if config is None:
        if "config" not in meta:
            raise CheckpointError("checkpoint carries no config; pass one explicitly")
        config = cfgmod.from_text(meta["config"])
    net = Network(config)
    net.load_state(tensors)
    return net.eval()


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("cannot normalize a zero embedding")
    return v / n


def compare(a, b, metric: str = "euclidean") -> float:
    """Distance (euclidean metrics, lower is closer) or cosine similarity."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"embedding dims differ: {a.shape[0]} vs {b.shape[0]}")
    if metric == "euclidean":
        return float(np.linalg.norm(a - b))
    if metric == "euclidean_normalized":
        return float(np.linalg.norm(_unit(a) - _unit(b)))
    if metric == "cosine":
        return float(np.dot(_unit(a), _unit(b)))
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def similarity(a, b, metric: str = "euclidean") -> float:
    """Uniform polarity: higher means more similar (negated distances)."""
    s = compare(a, b, metric)
    return s if metric == "cosine" else -s


def similarity_matrix(A, B, metric: str = "euclidean") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"embedding dims differ: {A.shape[1]} vs {B.shape[1]}")
    if metric == "cosine":
        return _unit(A) @ _unit(B).T
    if metric == "euclidean_normalized":
        A, B = _unit(A), _unit(B)
    elif metric != "euclidean":
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return -np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(-1))
