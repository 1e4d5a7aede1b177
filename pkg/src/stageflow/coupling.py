"""Training-pair construction and the inference-time stage handoff.

Stage 1 pairs an image with an independent Gaussian source. Later stages
build the source from the target itself: project to the coarse grid and back,
then add a small stage-scaled noise. The same project-and-noise map, applied
to the previous stage's output, seeds each refinement stage at inference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .pyramid import composite_downsample, project_array, upsample_array
from .schedule import StageSchedule
from .tensors import ImageTensor, ShapeError, check_same_shape


@dataclass(frozen=True)
class CouplingSample:
    """One training tuple: endpoints, interpolation point, and regression target."""

    stage: int
    x0: ImageTensor
    x1: ImageTensor
    tau: float
    interpolant: ImageTensor
    target_velocity: ImageTensor
    condition: Optional[int] = None


def make_stage_target(x_full: ImageTensor, k: int) -> ImageTensor:
    """Ground-truth image at stage k: composite downsample of the full image."""
    return composite_downsample(x_full, k)


def make_source(
    x1_k: ImageTensor, k: int, noise: np.ndarray, schedule: StageSchedule
) -> ImageTensor:
    """Coupled source for stage k.

    Stage 1 ignores the target and returns sigma * noise. Stages k >= 2
    return project(x1_k) + sigma_k * noise.
    """
    if noise.shape != x1_k.data.shape:
        raise ShapeError(f"noise shape {noise.shape} != target shape {x1_k.data.shape}")
    s_k = schedule.sigma_at(k)
    if k == 1:
        return ImageTensor(s_k * noise, level=1)
    return x1_k.with_data(project_array(x1_k.data) + s_k * noise.astype(np.float32))


def draw_training_sample(
    x_full: ImageTensor,
    t: float,
    noise: np.ndarray,
    schedule: StageSchedule,
    condition: Optional[int] = None,
    drop: bool = False,
) -> CouplingSample:
    """Build the coupling sample for global time t.

    `noise` must match the stage-k shape implied by t. When `drop` is set the
    condition is replaced by the null token (None).
    """
    k, tau = schedule.locate(t)
    x1 = make_stage_target(x_full, k)
    x0 = make_source(x1, k, noise, schedule)
    interp = (1.0 - tau) * x0.data + tau * x1.data
    velocity = x1.data - x0.data
    return CouplingSample(
        stage=k,
        x0=x0,
        x1=x1,
        tau=tau,
        interpolant=ImageTensor(interp, k),
        target_velocity=ImageTensor(velocity, k),
        condition=None if drop else condition,
    )


def handoff_prior(
    prev_output: ImageTensor, k: int, noise: np.ndarray, schedule: StageSchedule
) -> ImageTensor:
    """Initial state for stage k >= 2: upsample the previous output, add noise."""
    if k < 2:
        raise ValueError(f"handoff applies to stages >= 2, got {k}")
    if prev_output.level != k - 1:
        raise ShapeError(
            f"previous output at level {prev_output.level}, expected {k - 1}"
        )
    up = upsample_array(prev_output.data)
    if noise.shape != up.shape:
        raise ShapeError(f"noise shape {noise.shape} != stage shape {up.shape}")
    s_k = schedule.sigma_at(k)
    return ImageTensor(up + s_k * noise.astype(np.float32), k)
