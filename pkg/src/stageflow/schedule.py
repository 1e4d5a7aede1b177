"""Stage bookkeeping: time partition of [0,1], rescaled time, noise levels.

Global time t in [0,1] is split into K contiguous stage intervals. Inside
stage k, t is rescaled to tau in [0,1]. The per-stage coupling noise decays
geometrically: sigma_k = gamma^-(k-1) * sigma.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StageSchedule:
    """Immutable description of a K-stage generation run."""

    K: int
    base_height: int
    base_width: int
    channels: int = 1
    sigma: float = 1.0
    gamma: float = 2.0
    boundaries: tuple[float, ...] = ()
    steps: tuple[int, ...] = ()

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        bounds = self.boundaries or tuple(k / self.K for k in range(self.K + 1))
        if len(bounds) != self.K + 1:
            raise ValueError(f"need K+1 boundaries, got {len(bounds)}")
        if bounds[0] != 0.0 or bounds[-1] != 1.0:
            raise ValueError("boundaries must start at 0 and end at 1")
        if any(b1 <= b0 for b0, b1 in zip(bounds, bounds[1:])):
            raise ValueError("boundaries must be strictly increasing")
        steps = self.steps or tuple([24] * self.K)
        if len(steps) != self.K:
            raise ValueError(f"need K step counts, got {len(steps)}")
        if any(n < 1 for n in steps):
            raise ValueError("step counts must be positive")
        object.__setattr__(self, "boundaries", tuple(float(b) for b in bounds))
        object.__setattr__(self, "steps", tuple(int(n) for n in steps))

    @property
    def sigma_k(self) -> tuple[float, ...]:
        return tuple(self.sigma_at(k) for k in range(1, self.K + 1))

    def sigma_at(self, k: int) -> float:
        """Coupling noise scale at stage k (geometric decay from sigma)."""
        self._check_stage(k)
        if k == 1:
            return self.sigma
        return self.gamma ** (-(k - 1)) * self.sigma

    def locate(self, t: float) -> tuple[int, float]:
        """Map global time t to (stage, rescaled tau).

        Interior boundaries belong to the later stage (tau = 0); t = 1 maps
        to (K, 1).
        """
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        if t == 1.0:
            return self.K, 1.0
        k = int(np.searchsorted(self.boundaries, t, side="right"))
        t0, t1 = self.boundaries[k - 1], self.boundaries[k]
        return k, (t - t0) / (t1 - t0)

    def height_at(self, k: int) -> int:
        self._check_stage(k)
        return self.base_height * 2 ** (k - 1)

    def width_at(self, k: int) -> int:
        self._check_stage(k)
        return self.base_width * 2 ** (k - 1)

    def shape_at(self, k: int) -> tuple[int, int, int]:
        return (self.channels, self.height_at(k), self.width_at(k))

    def dim_at(self, k: int) -> int:
        """True tensor dimension d_k = C * H_k * W_k."""
        c, h, w = self.shape_at(k)
        return c * h * w

    def interval_at(self, k: int) -> tuple[float, float]:
        self._check_stage(k)
        return self.boundaries[k - 1], self.boundaries[k]

    def _check_stage(self, k: int) -> None:
        if not 1 <= k <= self.K:
            raise ValueError(f"stage {k} outside [1, {self.K}]")


def locate(schedule: StageSchedule, t: float) -> tuple[int, float]:
    return schedule.locate(t)


def sigma_at(schedule: StageSchedule, k: int) -> float:
    return schedule.sigma_at(k)
