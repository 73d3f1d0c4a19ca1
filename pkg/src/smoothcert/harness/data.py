"""Dataset container, the SCDS1 binary format, and the synthetic generator.

File layout (little-endian)::

    b"SCDS1\\0"
    u32 count, channels, height, width, num_classes
    f32 pixels[count * channels * height * width]
    u16 labels[count]
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..numerics import RngStream

MAGIC = b"SCDS1\0"
_HEADER = struct.Struct("<5I")


class DatasetFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)


def dumps_dataset(ds: Dataset) -> bytes:
    n, c, h, w = ds.images.shape
    return b"".join([
        MAGIC,
        _HEADER.pack(n, c, h, w, ds.num_classes),
        ds.images.astype("<f4").tobytes(),
        ds.labels.astype("<u2").tobytes(),
    ])


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dumps_dataset(ds))


def loads_dataset(buf: bytes) -> Dataset:
    if buf[:len(MAGIC)] != MAGIC:
        raise DatasetFormatError("bad magic, expected SCDS1", 0)
    off = len(MAGIC)
    if len(buf) < off + _HEADER.size:
        raise DatasetFormatError("truncated header", len(buf))
    n, c, h, w, k = _HEADER.unpack_from(buf, off)
    off += _HEADER.size
    if k > 65536:
        raise DatasetFormatError(f"num_classes={k} does not fit u16 labels", off - 4)
    npix = n * c * h * w
    expected = off + 4 * npix + 2 * n
    if len(buf) != expected:
        raise DatasetFormatError(f"size mismatch: expected {expected} bytes, found {len(buf)}",
                                 min(len(buf), expected))
    pixels = np.frombuffer(buf, dtype="<f4", count=npix, offset=off).reshape(n, c, h, w)
    bad = np.flatnonzero(~((pixels >= 0) & (pixels <= 1)).ravel())
    if bad.size:
        raise DatasetFormatError("pixel outside [0, 1]", off + 4 * int(bad[0]))
    off += 4 * npix
    labels = np.frombuffer(buf, dtype="<u2", count=n, offset=off)
    bad = np.flatnonzero(labels >= k)
    if bad.size:
        raise DatasetFormatError(f"label {labels[bad[0]]} >= num_classes {k}", off + 2 * int(bad[0]))
    return Dataset(pixels.astype(np.float32), labels.astype(np.int64), int(k))


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_bytes())


def make_synthetic(seed: int, count: int, size: int = 16, num_classes: int = 2, channels: int = 1,
                   amplitude: tuple[float, float] = (0.12, 0.24), clutter: float = 0.06) -> Dataset:
    """Class-conditional stripe images.

    Class ``c`` is a horizontal grating with ``c + 1`` cycles per image,
    with random tilt, phase jitter, amplitude, brightness and pixel clutter
    (channels are copies).
    The class is invariant under horizontal flips. Labels are balanced
    (round-robin) and the result is deterministic in ``seed``.
    """
    if count < num_classes:
        raise ValueError(f"count={count} < num_classes={num_classes}")
    rng = RngStream(seed, 0x5C5D)
    labels = np.arange(count) % num_classes
    u = rng.uniform(4 * count).reshape(count, 4)
    amp = amplitude[0] + (amplitude[1] - amplitude[0]) * u[:, 0]
    phase = (u[:, 1] - 0.5) * (math.pi / 2)
    tilt = (u[:, 2] - 0.5) * 0.3
    offset = (u[:, 3] - 0.5) * 0.2
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    freq = (labels + 1).astype(np.float64)
    arg = 2 * math.pi * freq[:, None, None] * (yy[None] + tilt[:, None, None] * (xx[None] - 0.5)) + phase[:, None, None]
    img = 0.5 + offset[:, None, None] + amp[:, None, None] * np.cos(arg)
    img = img[:, None].repeat(channels, axis=1)
    img = img + clutter * rng.uniform(img.size).reshape(img.shape) * 2 - clutter
    return Dataset(np.clip(img, 0.0, 1.0).astype(np.float32), labels, num_classes)
