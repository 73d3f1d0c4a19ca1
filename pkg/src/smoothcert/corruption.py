"""Patch grids, random patch masks and the noise-then-mask corruption."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, gaussian_sample


@dataclass
class PatchSequence:
    """Flattened patches of one image, in row-major grid order.

    ``indices`` gives each row's position in the full grid; for a visible
    subset it keeps the original positions so positional encodings line up.
    """

    values: np.ndarray  # (num_patches, patch_dim)
    grid_shape: tuple[int, int]
    patch_size: int
    channels: int
    indices: np.ndarray = None

    def __post_init__(self):
        if self.indices is None:
            self.indices = np.arange(self.values.shape[0])

    @property
    def num_patches(self) -> int:
        return self.values.shape[0]

    @property
    def patch_dim(self) -> int:
        return self.values.shape[1]

    @property
    def total(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]


@dataclass
class MaskPattern:
    masked_indices: np.ndarray  # sorted, distinct
    total: int

    @property
    def visible_indices(self) -> np.ndarray:
        keep = np.ones(self.total, dtype=bool)
        keep[self.masked_indices] = False
        return np.flatnonzero(keep)


@dataclass(frozen=True)
class CorruptionSpec:
    sigma: float = 0.25
    mask_ratio: float = 0.75
    patch_size: int = 4

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be positive, got {self.patch_size}")


def grid_for(height: int, width: int, patch_size: int) -> tuple[int, int]:
    if height % patch_size or width % patch_size or height <= 0 or width <= 0:
        raise ValueError(f"image {height}x{width} is not tiled by {patch_size}x{patch_size} patches")
    return height // patch_size, width // patch_size


def patchify(image: np.ndarray, patch_size: int) -> PatchSequence:
    """Split a (C, H, W) image into row-major patches.

    Each patch is flattened channel-major, then row-major inside the patch.
    """
    c, h, w = image.shape
    rows, cols = grid_for(h, w, patch_size)
    p = patch_size
    x = image.reshape(c, rows, p, cols, p).transpose(1, 3, 0, 2, 4)
    return PatchSequence(x.reshape(rows * cols, c * p * p), (rows, cols), p, c)


def unpatchify(patches: PatchSequence) -> np.ndarray:
    rows, cols = patches.grid_shape
    p, c = patches.patch_size, patches.channels
    if patches.num_patches != rows * cols or patches.patch_dim != c * p * p:
        raise ValueError(
            f"patch metadata inconsistent: {patches.values.shape} vs grid {rows}x{cols}, "
            f"{c} channels, patch size {p}")
    if not np.array_equal(patches.indices, np.arange(rows * cols)):
        raise ValueError("unpatchify needs the full grid in order")
    x = patches.values.reshape(rows, cols, c, p, p).transpose(2, 0, 3, 1, 4)
    return x.reshape(c, rows * p, cols * p)


def mask_count(total: int, ratio: float) -> int:
    # round half up; only determinism matters here
    return min(total, int(math.floor(ratio * total + 0.5)))


def sample_mask(rng: RngStream, total: int, ratio: float) -> MaskPattern:
    """Uniform random subset of ``round(ratio * total)`` patch indices."""
    if total < 1 or not 0.0 <= ratio <= 1.0:
        raise ValueError(f"bad mask request total={total}, ratio={ratio}")
    k = mask_count(total, ratio)
    order = np.argsort(rng.uniform(total), kind="stable")
    return MaskPattern(np.sort(order[:k]), total)


def corrupt(image: np.ndarray, spec: CorruptionSpec, rng: RngStream):
    """Noise every pixel, then mask patches.

    Returns ``(visible, mask, target)`` where ``visible`` holds the noisy
    unmasked patches with their grid indices and ``target`` is the clean
    full patch sequence. Noise is drawn before the mask from the same stream.
    """
    clean = patchify(image, spec.patch_size)
    noise = gaussian_sample(rng, image.size, spec.sigma).reshape(image.shape)
    noisy = patchify(image + noise, spec.patch_size)
    mask = sample_mask(rng, clean.total, spec.mask_ratio)
    vis = mask.visible_indices
    visible = PatchSequence(noisy.values[vis], noisy.grid_shape, spec.patch_size,
                            noisy.channels, indices=vis)
    return visible, mask, clean
