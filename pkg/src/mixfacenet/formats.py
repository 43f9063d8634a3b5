"""On-disk formats: MFTN tensors, binary PPM images, id manifests.

MFTN layout (little-endian)::

    b"MFTN" | u32 version=1 | u8 rank=4 | u32 dims[4] | u8 dtype=1 (float32) | payload

Lower-rank arrays (e.g. (n, d) embeddings) are stored with trailing unit
dims, so (n, d) is written as (n, d, 1, 1).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MFTN_MAGIC = b"MFTN"
MFTN_VERSION = 1
MFTN_RANK = 4
DTYPE_F32 = 1
_HEADER = struct.Struct("<4sIB4IB")


class FormatError(ValueError):
    pass


def write_tensor(path, arr) -> None:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim > MFTN_RANK:
        raise FormatError(f"MFTN holds at most {MFTN_RANK} dims, got shape {arr.shape}")
    dims = arr.shape + (1,) * (MFTN_RANK - arr.ndim)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MFTN_MAGIC, MFTN_VERSION, MFTN_RANK, *dims, DTYPE_F32))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated MFTN header")
    magic, version, rank, *dims, dtype = _HEADER.unpack_from(buf)
    if magic != MFTN_MAGIC:
        raise FormatError(f"{path}: not an MFTN file")
    if version != MFTN_VERSION:
        raise FormatError(f"{path}: unsupported MFTN version {version}")
    if rank != MFTN_RANK:
        raise FormatError(f"{path}: rank must be {MFTN_RANK}, got {rank}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype tag {dtype}")
    count = int(np.prod(dims))
    payload = buf[_HEADER.size:]
    if len(payload) != 4 * count:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)


def read_embeddings(path) -> np.ndarray:
    arr = read_tensor(path)
    if arr.shape[2:] != (1, 1):
        raise FormatError(f"{path}: embedding file must have shape (n, d, 1, 1), got {arr.shape}")
    return arr.reshape(arr.shape[:2])


def _ppm_tokens(buf: bytes, count: int):
    """First ``count`` whitespace-separated header tokens and the payload offset."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def read_ppm(path) -> np.ndarray:
    """Binary P6 image with maxval 255 as a uint8 array (h, w, 3)."""
    buf = Path(path).read_bytes()
    tokens, offset = _ppm_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    raster = buf[offset:offset + w * h * 3]
    if len(raster) != w * h * 3:
        raise FormatError(f"{path}: raster has {len(raster)} bytes, expected {w * h * 3}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)


def write_ppm(path, img) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM images are (h, w, 3), got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())


def normalize_pixels(img: np.ndarray) -> np.ndarray:
    """uint8 (h, w, 3) -> float32 (3, h, w) with (p - 127.5) / 128."""
    img = np.asarray(img)
    return ((img.astype(np.float32) - np.float32(127.5)) / np.float32(128.0)).transpose(2, 0, 1).copy()


def load_image(path, size=(112, 112)) -> np.ndarray:
    """Load a PPM or MFTN image as a normalized (3, h, w) float32 array; no resizing."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == MFTN_MAGIC:
        arr = read_tensor(path)
        if arr.shape[0] != 1:
            raise FormatError(f"{path}: expected a single image tensor (1, 3, h, w), got {arr.shape}")
        arr = arr[0]
    elif magic[:2] == b"P6":
        arr = normalize_pixels(read_ppm(path))
    else:
        raise FormatError(f"{path}: unrecognized image format (expected P6 PPM or MFTN)")
    if arr.shape != (3,) + tuple(size):
        raise FormatError(f"{path}: image is {arr.shape[1]}x{arr.shape[2]}x{arr.shape[0]}, "
                          f"expected {size[0]}x{size[1]}x3")
    return arr


def write_ids(path, ids) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def read_ids(path) -> list:
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def ids_path(embedding_path) -> Path:
    return Path(str(embedding_path) + ".ids")
