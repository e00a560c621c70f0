"""Positive-unlabeled objectness risk estimation on a synthetic detection world."""

from pudet.errors import (
    ConfigurationError,
    InvalidBatchError,
    InvalidInputError,
    PudetError,
    TrainingDivergenceError,
    UndefinedMetricError,
)
from pudet.riskcore import (
    LossFunction,
    RiskBatch,
    RiskBreakdown,
    loss,
    nn_pu_risk,
    pn_risk,
    pu_risk_unclamped,
    risk_score_gradients,
)
from pudet.prior import PriorEstimate, effective_prior, update_prior

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "InvalidBatchError",
    "InvalidInputError",
    "LossFunction",
    "PriorEstimate",
    "PudetError",
    "RiskBatch",
    "RiskBreakdown",
    "TrainingDivergenceError",
    "UndefinedMetricError",
    "effective_prior",
    "loss",
    "nn_pu_risk",
    "pn_risk",
    "pu_risk_unclamped",
    "risk_score_gradients",
    "update_prior",
]
