"""Structured logistic recalibration of probabilistic classifiers."""

from .calibrators import (
    CalibratorParams,
    Calibrator,
    FitOptions,
    Method,
    apply,
    fit,
    fit_binary,
    fit_structured,
    fit_temperature,
)
from .metrics import brier, evaluate, logloss, relative_improvement
from .penalties import Family, PenaltySpec, effective_weights
from .probcore import CLIP_LO, binary_logit, logits_from_probs, sigmoid, softmax_rows
from .saga import SolverConfig

__all__ = [
    "CLIP_LO",
    "Calibrator",
    "CalibratorParams",
    "Family",
    "FitOptions",
    "Method",
    "PenaltySpec",
    "SolverConfig",
    "apply",
    "binary_logit",
    "brier",
    "effective_weights",
    "evaluate",
    "fit",
    "fit_binary",
    "fit_structured",
    "fit_temperature",
    "logits_from_probs",
    "logloss",
    "relative_improvement",
    "sigmoid",
    "softmax_rows",
]
