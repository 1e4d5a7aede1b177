"""Bit-exact binary tensor files and a PGM export for quick eyeballing.

Layout: magic "RTEN", version u32, rank u32, dims as rank u64 values, dtype
u32 (0 = float32), then the raw little-endian payload in C order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

RTEN_MAGIC = b"RTEN"
RTEN_VERSION = 1
RTEN_DTYPE_F32 = 0


def write_rten(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim < 1:
        raise ValueError("rank must be >= 1")
    with open(path, "wb") as f:
        f.write(RTEN_MAGIC)
        f.write(struct.pack("<I", RTEN_VERSION))
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(struct.pack("<I", RTEN_DTYPE_F32))
        f.write(arr.tobytes())


def read_rten(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != RTEN_MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != RTEN_VERSION:
            raise ValueError(f"unsupported version {version} in {path}")
        (rank,) = struct.unpack("<I", f.read(4))
        if rank < 1:
            raise ValueError("rank must be >= 1")
        dims = struct.unpack(f"<{rank}Q", f.read(8 * rank))
        (dtype,) = struct.unpack("<I", f.read(4))
        if dtype != RTEN_DTYPE_F32:
            raise ValueError(f"unsupported dtype code {dtype}")
        count = int(np.prod(dims))
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"truncated payload in {path}")
        return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def write_pgm(path, channel: np.ndarray) -> None:
    """Export one (H, W) channel, mapping [-1, 1] to [0, 255] with clamping."""
    if channel.ndim != 2:
        raise ValueError(f"expected a single (H, W) channel, got {channel.shape}")
    scaled = np.clip((channel.astype(np.float64) + 1.0) / 2.0, 0.0, 1.0)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def export_pgm_channels(base_path, array: np.ndarray) -> list[Path]:
    """Write one PGM per channel of a (C, H, W) array; returns the paths."""
    base = Path(base_path)
    paths = []
    for c in range(array.shape[0]):
        p = base.with_name(f"{base.stem}_c{c}.pgm")
        write_pgm(p, array[c])
        paths.append(p)
    return paths
