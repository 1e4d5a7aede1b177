"""Coarse-to-fine pixel-space flow matching with coupled stages."""

from .analysis import (
    CostReport,
    GammaSweepRow,
    Theorem1Check,
    TimingReport,
    check_theorem1,
    estimate_costs,
    gamma_sweep,
    noise_load_closed_forms,
    noise_load_monte_carlo,
    per_stage_marginal_check,
    sliced_wasserstein,
    time_inference,
)
from .coupling import (
    CouplingSample,
    draw_training_sample,
    handoff_prior,
    make_source,
    make_stage_target,
)
from .model import (
    VelocityModel,
    embed,
    forward,
    init_velocity_model,
    loss_and_grad,
    read_checkpoint,
    save_checkpoint,
)
from .pyramid import (
    DetailDecomposition,
    composite_downsample,
    detail_decompose,
    downsample,
    upsample,
)
from .sampler import (
    GaussianStageOracle,
    SampleConfig,
    euler_stage,
    oracle_cascade,
    oracle_velocity,
    sample,
)
from .schedule import StageSchedule
from .tensors import ImageTensor
from .train import TrainConfig, train

__all__ = [
    "CostReport",
    "CouplingSample",
    "DetailDecomposition",
    "GammaSweepRow",
    "GaussianStageOracle",
    "ImageTensor",
    "SampleConfig",
    "StageSchedule",
    "Theorem1Check",
    "TimingReport",
    "TrainConfig",
    "VelocityModel",
    "check_theorem1",
    "composite_downsample",
    "detail_decompose",
    "downsample",
    "draw_training_sample",
    "embed",
    "estimate_costs",
    "euler_stage",
    "forward",
    "gamma_sweep",
    "handoff_prior",
    "init_velocity_model",
    "loss_and_grad",
    "make_source",
    "make_stage_target",
    "noise_load_closed_forms",
    "noise_load_monte_carlo",
    "oracle_cascade",
    "oracle_velocity",
    "per_stage_marginal_check",
    "read_checkpoint",
    "sample",
    "save_checkpoint",
    "sliced_wasserstein",
    "time_inference",
    "train",
    "upsample",
]
