"""Multi-resolution operators: block-mean downsampling, replication upsampling.

Downsampling averages each 2x2 block; upsampling replicates each pixel into a
2x2 block. Because the mean of four equal IEEE values is exact, the pair
satisfies downsample(upsample(x)) == x bit-for-bit, and the composite
P = upsample . downsample is a bit-exact idempotent projection. Detail layers
(differences of successive projections embedded at the finest grid) are
mutually orthogonal up to rounding, so image energy splits across levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import ImageTensor, ShapeError


class LevelUnderflowError(ValueError):
    """Raised when downsampling below level 1."""


# Array-level kernels; public operations wrap these with level bookkeeping.


def downsample_array(a: np.ndarray) -> np.ndarray:
    """Mean-pool 2x2 blocks of a (..., H, W) array. H and W must be even."""
    h, w = a.shape[-2], a.shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(f"cannot halve odd dimensions {(h, w)}")
    blocks = a.reshape(*a.shape[:-2], h // 2, 2, w // 2, 2)
    # Sum of 4 equal floats then /4 is exact, which the inverse property needs.
    return (blocks.sum(axis=(-3, -1)) / 4.0).astype(a.dtype, copy=False)


def upsample_array(a: np.ndarray) -> np.ndarray:
    """Replicate each pixel of a (..., H, W) array into a 2x2 block."""
    return np.repeat(np.repeat(a, 2, axis=-2), 2, axis=-1)


def project_array(a: np.ndarray) -> np.ndarray:
    """P = upsample . downsample at the input resolution."""
    return upsample_array(downsample_array(a))


def downsample(x: ImageTensor) -> ImageTensor:
    """One pyramid step down: half the spatial size, level decremented."""
    if x.level <= 1:
        raise LevelUnderflowError(f"cannot downsample below level 1 (level={x.level})")
    return ImageTensor(downsample_array(x.data), x.level - 1)


def upsample(x: ImageTensor) -> ImageTensor:
    """One pyramid step up: double the spatial size, level incremented."""
    return ImageTensor(upsample_array(x.data), x.level + 1)


def composite_downsample(x: ImageTensor, target_level: int) -> ImageTensor:
    """Iterated downsampling to target_level; identity when already there."""
    if target_level > x.level:
        raise ValueError(f"target level {target_level} above input level {x.level}")
    out = x
    while out.level > target_level:
        out = downsample(out)
    return out


@dataclass(frozen=True)
class DetailDecomposition:
    """Per-level detail layers, all embedded at the input resolution.

    details[k] holds the content added between the (k)th and (k-1)th
    projections, with the level-0 projection taken as zero, so the layers
    telescope back to the input: sum(details) == reconstructed.
    """

    details: list[ImageTensor]
    reconstructed: ImageTensor

    def energies(self) -> np.ndarray:
        """Squared L2 norm of each detail layer (float64 accumulation)."""
        return np.array(
            [float(np.sum(d.data.astype(np.float64) ** 2)) for d in self.details]
        )


def detail_decompose(x: ImageTensor, levels: int) -> DetailDecomposition:
    """Split x into `levels` orthogonal detail layers at full resolution."""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    factor = 2 ** (levels - 1)
    if x.height % factor or x.width % factor:
        raise ShapeError(
            f"dimensions {(x.height, x.width)} not divisible by 2^{levels - 1}"
        )
    # Successive coarse approximations embedded back at the input grid.
    approximations = [x.data]
    coarse = x.data
    for _ in range(levels - 1):
        coarse = downsample_array(coarse)
        embedded = coarse
        while embedded.shape[-1] < x.width:
            embedded = upsample_array(embedded)
        approximations.append(embedded)
    approximations.append(np.zeros_like(x.data))  # level-0 projection
    details = []
    for k in range(levels, 0, -1):
        idx = levels - k  # approximations[0] is the finest
        layer = approximations[idx] - approximations[idx + 1]
        details.append(ImageTensor(layer, x.level))
    details.reverse()
    return DetailDecomposition(details=details, reconstructed=x)
