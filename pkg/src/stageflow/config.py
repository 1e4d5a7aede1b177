"""key=value run configuration: parsing, validation, checkpoint echo."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(Exception):
    """Invalid configuration; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass
class RunConfig:
    K: int = 3
    base_size: int = 8
    channels: int = 1
    sigma: float = 1.0
    gamma: float = 2.0
    steps_per_stage: list[int] = field(default_factory=list)  # empty -> 24 each
    batch_size: int = 32
    train_steps: int = 1000
    lr: float = 1e-4
    p_drop: float = 0.1
    seed: int = 0
    loss_reduction: str = "per_pixel_mean"
    data_dir: str = ""
    out_dir: str = ""
    # Model-size and bookkeeping extensions beyond the core key set.
    hidden_channels: int = 64
    depth: int = 6
    embed_dim: int = 64
    ema_decay: float = 0.9999
    grad_clip: float = 1.0
    checkpoint_interval: int = 0  # 0 -> final checkpoint only
    num_classes: int = 0  # 0 -> infer from the manifest

    def resolved_steps(self) -> list[int]:
        if not self.steps_per_stage:
            return [24] * self.K
        if len(self.steps_per_stage) != self.K:
            raise ConfigError(
                f"steps_per_stage has {len(self.steps_per_stage)} entries, need K={self.K}"
            )
        return list(self.steps_per_stage)

    def image_size(self) -> int:
        return self.base_size * 2 ** (self.K - 1)

    def to_echo(self) -> str:
        """Serialize as key=value lines (the checkpoint's config echo)."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "steps_per_stage":
                v = ",".join(str(s) for s in self.resolved_steps())
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_INT_KEYS = {
    "K", "base_size", "channels", "batch_size", "train_steps", "seed",
    "hidden_channels", "depth", "embed_dim", "checkpoint_interval", "num_classes",
}
_FLOAT_KEYS = {"sigma", "gamma", "lr", "p_drop", "ema_decay", "grad_clip"}
_STR_KEYS = {"loss_reduction", "data_dir", "out_dir"}
_LIST_KEYS = {"steps_per_stage"}
ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _LIST_KEYS


def parse_config_text(text: str) -> RunConfig:
    cfg = RunConfig()
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        try:
            if key in _INT_KEYS:
                setattr(cfg, key, int(value))
            elif key in _FLOAT_KEYS:
                setattr(cfg, key, float(value))
            elif key in _LIST_KEYS:
                setattr(cfg, key, [int(p) for p in value.split(",") if p.strip()])
            else:
                setattr(cfg, key, value)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {e}", lineno) from None
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.K < 1:
        raise ConfigError(f"K must be >= 1, got {cfg.K}")
    if cfg.base_size < 1:
        raise ConfigError(f"base_size must be positive, got {cfg.base_size}")
    if cfg.sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {cfg.sigma}")
    if cfg.gamma < 1:
        raise ConfigError(f"gamma must be >= 1, got {cfg.gamma}")
    if not 0 <= cfg.p_drop < 1:
        raise ConfigError(f"p_drop must lie in [0, 1), got {cfg.p_drop}")
    if cfg.loss_reduction not in ("per_pixel_mean", "sum"):
        raise ConfigError(f"loss_reduction must be per_pixel_mean or sum, got {cfg.loss_reduction!r}")
    cfg.resolved_steps()


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"))
