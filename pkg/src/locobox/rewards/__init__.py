"""Reward kernels: multiplicative tracking, smoothness rows, goal shaping."""

from .finetune import finetune_reward
from .smoothness import (SMOOTH_WEIGHTS, smoothness_penalties,
                         smoothness_total)
from .tracking import (box_surface_points, sim_view, tracking_factors,
                       tracking_reward)
from .types import (FinetuneCoeffs, GoalTargets, RefFrame, RewardBreakdown,
                    SimView, SmoothnessConfig, TrackingCoeffs, gather_frame)

__all__ = [
    "FinetuneCoeffs",
    "GoalTargets",
    "RefFrame",
    "RewardBreakdown",
    "SMOOTH_WEIGHTS",
    "SimView",
    "SmoothnessConfig",
    "TrackingCoeffs",
    "box_surface_points",
    "finetune_reward",
    "gather_frame",
    "sim_view",
    "smoothness_penalties",
    "smoothness_total",
    "tracking_factors",
    "tracking_reward",
]
