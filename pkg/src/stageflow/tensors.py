"""Core image container shared by every module.

Images are dense float32 grids in channel-major (C, H, W) order with an
explicit pyramid level attached. Level 1 is the coarsest resolution; each
level up doubles both spatial sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor dimensions violate an operation's precondition."""


@dataclass(frozen=True)
class ImageTensor:
    """A (channels, height, width) float32 grid pinned to a pyramid level."""

    data: np.ndarray
    level: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeError(f"expected (C, H, W) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ShapeError(f"all dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite entries")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def pixel_count(self) -> int:
        """Total dimension d = C * H * W."""
        return self.data.size

    def with_data(self, data: np.ndarray, level: int | None = None) -> "ImageTensor":
        return ImageTensor(data, self.level if level is None else level)


def zeros_like(x: ImageTensor) -> ImageTensor:
    return ImageTensor(np.zeros_like(x.data), x.level)


def check_same_shape(a: ImageTensor, b: ImageTensor, what: str = "tensors") -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{what} disagree in shape: {a.data.shape} vs {b.data.shape}")
    if a.level != b.level:
        raise ShapeError(f"{what} disagree in level: {a.level} vs {b.level}")
