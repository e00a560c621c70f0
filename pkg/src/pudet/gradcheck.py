"""Randomized finite-difference checks of the end-to-end risk gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pudet.model import Classifier, forward_batch, grad_check, n_parameters
from pudet.riskcore import RiskBatch, nn_pu_risk

ARCHS = ("linear", "mlp-1-hidden")
MODES = ("pn", "pu_unclamped", "nn_pu")
TOLERANCE = 1e-5
# keeps +-h perturbations from crossing the max(0, .) kink
CLAMP_MARGIN = 1e-3


@dataclass
class CheckCase:
    architecture: str
    mode: str
    index: int
    input_dim: int
    hidden_dim: int
    n_positive: int
    n_other: int
    prior: float | None
    clamp_active: bool
    error: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _random_case(rng, arch, mode, want_clamp):
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        h = int(rng.integers(1, 7)) if arch == "mlp-1-hidden" else 0
        model = Classifier(arch, d, h, rng.uniform(-1.5, 1.5, n_parameters(arch, d, h)))
        n_pos = int(rng.integers(1, 6))
        n_other = int(rng.integers(1, 9))
        pos = rng.normal(0.0, 1.0, (n_pos, d))
        other = rng.normal(0.0, 1.0, (n_other, d))
        if mode == "pn":
            prior = None if rng.random() < 0.5 else float(rng.uniform(0.05, 0.95))
            return model, pos, other, prior, False
        prior = float(rng.uniform(0.05, 0.95))
        if mode == "pu_unclamped":
            return model, pos, other, prior, False
        rb = RiskBatch(forward_batch(model, pos), forward_batch(model, other))
        risk = nn_pu_risk(rb, prior)
        correction = risk.r_other_minus - prior * risk.r_p_minus
        if abs(correction) > CLAMP_MARGIN and risk.clamp_active == want_clamp:
            return model, pos, other, prior, risk.clamp_active
    raise RuntimeError("could not draw a configuration away from the clamp boundary")


def run_gradcheck(n_configs: int = 100, h: float = 1e-6, seed: int = 0) -> list[CheckCase]:
    """``n_configs`` random cases for every (architecture, mode) pair.

    Half of the ``nn_pu`` cases are drawn with the clamp active.
    """
    rng = np.random.default_rng(seed)
    cases = []
    for arch in ARCHS:
        for mode in MODES:
            for i in range(n_configs):
                model, pos, other, prior, clamp = _random_case(rng, arch, mode, want_clamp=(i % 2 == 0))
                err = grad_check(model, pos, other, mode, h=h, pi_p=prior)
                cases.append(
                    CheckCase(arch, mode, i, model.input_dim, model.hidden_dim, len(pos), len(other), prior, clamp, err)
                )
    return cases
