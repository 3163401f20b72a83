"""Mediation analysis synthetic control.

Synthetic-control estimates of an intervention's total effect, split into a
direct part and a part transmitted through an observed mediator, with
placebo and resampling inference and donor-pool sensitivity checks.
"""

from .estimator import (
    EffectSeries,
    EstimationOptions,
    MascResult,
    SyntheticSeries,
    check_decomposition,
    estimate,
    estimate_counterfactual_mediator,
    estimate_delta1,
    estimate_direct,
    estimate_indirect,
    estimate_total,
)
from .inference import placebo_test, ratio_statistic, resampling_inference, rmspe
from .panel import PanelDataset, load_panel, validate
from .predictors import MediatorMode, PredictorSpec
from .robustness import leave_one_out
from .solver import solve_simplex_wls

__all__ = [
    "EffectSeries",
    "EstimationOptions",
    "MascResult",
    "MediatorMode",
    "PanelDataset",
    "PredictorSpec",
    "SyntheticSeries",
    "check_decomposition",
    "estimate",
    "estimate_counterfactual_mediator",
    "estimate_delta1",
    "estimate_direct",
    "estimate_indirect",
    "estimate_total",
    "leave_one_out",
    "load_panel",
    "placebo_test",
    "ratio_statistic",
    "resampling_inference",
    "rmspe",
    "solve_simplex_wls",
    "validate",
]
