"""Running estimate of the positive-class prior from objectness scores."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from pudet.errors import ConfigurationError


@dataclass(frozen=True)
class PriorEstimate:
    value: float = 0.01
    momentum: float = 0.9
    confidence_threshold: float = 0.5
    mode: str = "estimated"
    fixed_value: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ConfigurationError(f"prior value {self.value} outside [0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum {self.momentum} outside [0, 1)")
        if not 0.0 < self.confidence_threshold < 1.0:
            raise ConfigurationError("confidence_threshold must lie in (0, 1)")
        if self.mode not in ("estimated", "fixed"):
            raise ConfigurationError(f"unknown prior mode {self.mode!r}")
        if self.fixed_value is not None and not 0.0 <= self.fixed_value <= 1.0:
            raise ConfigurationError(f"fixed prior {self.fixed_value} outside [0, 1]")


def confident_fraction(scores, threshold: float = 0.5) -> float:
    """Share of proposals scored at or above ``threshold``."""
    scores = np.asarray(scores, dtype=float)
    return float(np.count_nonzero(scores >= threshold)) / scores.size


def update_prior(state: PriorEstimate, proposal_scores) -> PriorEstimate:
    """One EMA step: ``gamma * old + (1 - gamma) * fraction_confident``.

    Fixed-mode states and empty score lists leave the state untouched.
    """
    scores = np.asarray(proposal_scores, dtype=float).reshape(-1)
    if state.mode == "fixed" or scores.size == 0:
        return state
    frac = confident_fraction(scores, state.confidence_threshold)
    new = state.momentum * state.value + (1.0 - state.momentum) * frac
    # float rounding can leave new a hair outside [min(old, f), max(old, f)]
    new = min(max(new, min(state.value, frac)), max(state.value, frac))
    return replace(state, value=new)


def effective_prior(state: PriorEstimate) -> float:
    if state.mode == "fixed":
        if state.fixed_value is None:
            raise ConfigurationError("fixed prior mode needs a fixed_value")
        return state.fixed_value
    return state.value
