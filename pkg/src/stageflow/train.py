"""End-to-end training: sample times, build coupled pairs, Adam updates, EMA.

Each step draws batch_size (image, t, noise, dropout) tuples from a single
seeded stream, so runs with equal seeds reproduce loss traces bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coupling import draw_training_sample
from .model import VelocityModel, init_velocity_model, loss_and_grad
from .schedule import StageSchedule
from .tensors import ImageTensor


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 32
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    adam_eps: float = 1e-6
    grad_clip: float = 1.0
    ema_decay: float = 0.9999
    p_drop: float = 0.1
    seed: int = 0
    loss_reduction: str = "per_pixel_mean"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.grad_clip <= 0:
            raise ValueError("rates must be positive")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError(f"p_drop must lie in [0, 1), got {self.p_drop}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")


class AdamState:
    """Plain Adam with bias correction; one slot pair per parameter array."""

    def __init__(self, params: list[np.ndarray]):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, params: list[np.ndarray], grads: list[np.ndarray], cfg: TrainConfig):
        self.t += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale grads in place so the global L2 norm is at most max_norm."""
    sq = sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)
    norm = float(np.sqrt(sq))
    if norm > max_norm:
        scale = np.float32(max_norm / norm)
        for g in grads:
            g *= scale
    return norm


def ema_update(ema: list[np.ndarray], params: list[np.ndarray], decay: float) -> None:
    for e, p in zip(ema, params):
        e *= decay
        e += (1.0 - decay) * p


def train(
    dataset: Sequence[tuple[ImageTensor, Optional[int]]],
    schedule: StageSchedule,
    config: TrainConfig,
    model: Optional[VelocityModel] = None,
    hidden_channels: int = 64,
    depth: int = 6,
    embed_dim: int = 64,
    num_classes: Optional[int] = None,
    step_callback: Optional[Callable[[int, float, VelocityModel, VelocityModel], None]] = None,
) -> tuple[VelocityModel, VelocityModel, list[float]]:
    """Run the optimizer and return (raw model, EMA copy, loss trace).

    The dataset holds full-resolution images (level K) with optional labels.
    A fresh model is initialized unless one is passed in. `step_callback`
    fires after every step with (step, loss, model, ema_model).
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    expected = schedule.shape_at(schedule.K)
    for img, _ in dataset:
        if img.data.shape != expected:
            raise ValueError(
                f"dataset image shape {img.data.shape} != schedule shape {expected}"
            )
    seed_root = np.random.SeedSequence(config.seed)
    init_ss, data_ss = seed_root.spawn(2)
    if num_classes is None:
        labels = [lab for _, lab in dataset if lab is not None]
        num_classes = (max(labels) + 1) if labels else 1
    if model is None:
        model = init_velocity_model(
            channels=schedule.channels,
            num_classes=num_classes,
            base_height=schedule.base_height,
            hidden_channels=hidden_channels,
            depth=depth,
            embed_dim=embed_dim,
            rng=np.random.default_rng(init_ss),
        )
    ema_model = model.copy()
    params = model.param_arrays()
    ema_params = ema_model.param_arrays()
    adam = AdamState(params)
    rng = np.random.default_rng(data_ss)
    trace: list[float] = []
    n = len(dataset)
    for step in range(config.steps):
        batch = []
        for _ in range(config.batch_size):
            idx = int(rng.integers(n))
            t = float(rng.random())
            k, _ = schedule.locate(t)
            noise = rng.standard_normal(schedule.shape_at(k)).astype(np.float32)
            drop = bool(rng.random() < config.p_drop)
            img, label = dataset[idx]
            batch.append(
                draw_training_sample(img, t, noise, schedule, label, drop)
            )
        loss, grads = loss_and_grad(batch, model, reduction=config.loss_reduction)
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite loss {loss} at step {step}")
        clip_global_norm(grads, config.grad_clip)
        adam.update(params, grads, config)
        ema_update(ema_params, params, config.ema_decay)
        trace.append(loss)
        if step_callback is not None:
            step_callback(step, loss, model, ema_model)
    return model, ema_model, trace
