"""Cross-entropy loss and the PN / PU / non-negative PU empirical risks.

All empirical terms are arithmetic means over their score lists.  Scores are
clipped to ``[eps, 1 - eps]`` before the loss is taken, so every risk is
finite even for saturated classifiers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pudet.errors import InvalidBatchError, InvalidInputError

MODES = ("pn", "pu_unclamped", "nn_pu")
CLAMP_POLICIES = ("hard-zero", "defensive")


@dataclass(frozen=True)
class LossFunction:
    kind: str = "cross-entropy"
    clip_epsilon: float = 1e-7

    def __post_init__(self):
        if self.kind != "cross-entropy":
            raise InvalidInputError(f"unsupported loss kind {self.kind!r}")
        if not 0.0 < self.clip_epsilon <= 1e-3:
            raise InvalidInputError("clip_epsilon must lie in (0, 1e-3]")


DEFAULT_LOSS = LossFunction()


@dataclass(frozen=True)
class RiskBatch:
    """Scores of labeled positives plus the remaining scores.

    ``interpretation`` says how ``other_scores`` is read: ``"negative"`` for
    the PN risk, ``"unlabeled"`` for the PU risks.
    """

    positive_scores: np.ndarray
    other_scores: np.ndarray
    interpretation: str = "unlabeled"

    def __post_init__(self):
        pos = np.asarray(self.positive_scores, dtype=float).reshape(-1)
        other = np.asarray(self.other_scores, dtype=float).reshape(-1)
        if pos.size == 0 and other.size == 0:
            raise InvalidBatchError("both score lists are empty")
        if self.interpretation not in ("negative", "unlabeled"):
            raise InvalidInputError(f"unknown interpretation {self.interpretation!r}")
        _check_finite(pos)
        _check_finite(other)
        object.__setattr__(self, "positive_scores", pos)
        object.__setattr__(self, "other_scores", other)

    @property
    def n_positive(self) -> int:
        return self.positive_scores.size

    @property
    def n_other(self) -> int:
        return self.other_scores.size


@dataclass(frozen=True)
class RiskBreakdown:
    r_p_plus: float
    r_p_minus: float
    r_other_minus: float
    clamp_active: bool
    total: float
    prior: float = field(default=float("nan"))


def _check_finite(values):
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("scores must be finite")


def _clip(t, lf):
    return np.clip(t, lf.clip_epsilon, 1.0 - lf.clip_epsilon)


def loss(t, y, lf: LossFunction = DEFAULT_LOSS):
    """Cross-entropy H(t, y) of score ``t`` against label ``y`` in {+1, -1}.

    Works elementwise on arrays; returns a float for scalar input.
    """
    arr = np.asarray(t, dtype=float)
    _check_finite(arr)
    c = _clip(arr, lf)
    if y == 1:
        out = -np.log(c)
    elif y == -1:
        out = -np.log1p(-c)
    else:
        raise InvalidInputError(f"label must be +1 or -1, got {y!r}")
    return float(out) if out.ndim == 0 else out


def _terms(batch, lf):
    # scores were validated when the batch was built, so clip once and reuse
    eps = lf.clip_epsilon
    r_p_plus = r_p_minus = r_other_minus = 0.0
    if batch.positive_scores.size:
        c = np.minimum(np.maximum(batch.positive_scores, eps), 1.0 - eps)
        r_p_plus = float(-np.log(c).sum()) / c.size
        r_p_minus = float(-np.log1p(-c).sum()) / c.size
    if batch.other_scores.size:
        c = np.minimum(np.maximum(batch.other_scores, eps), 1.0 - eps)
        r_other_minus = float(-np.log1p(-c).sum()) / c.size
    return r_p_plus, r_p_minus, r_other_minus


def counted_priors(batch: RiskBatch) -> tuple[float, float]:
    n = batch.n_positive + batch.n_other
    return batch.n_positive / n, batch.n_other / n


def _check_prior(pi_p):
    if not (np.isfinite(pi_p) and 0.0 <= pi_p <= 1.0):
        raise InvalidInputError(f"prior must lie in [0, 1], got {pi_p!r}")


def pn_risk(batch: RiskBatch, priors=None, lf: LossFunction = DEFAULT_LOSS) -> RiskBreakdown:
    """Positive-negative risk ``pi_p R_p^+ + pi_n R_n^-``.

    With ``priors=None`` the priors are the batch proportions.  An empty side
    contributes nothing (its prior is treated as zero).
    """
    if priors is None:
        pi_p, pi_n = counted_priors(batch)
    else:
        pi_p, pi_n = (float(p) for p in priors)
        _check_prior(pi_p)
        _check_prior(pi_n)
        if abs(pi_p + pi_n - 1.0) > 1e-9:
            raise InvalidInputError("priors must sum to one")
    r_p_plus, r_p_minus, r_n_minus = _terms(batch, lf)
    if batch.n_positive == 0:
        pi_p = 0.0
    if batch.n_other == 0:
        pi_n = 0.0
    total = pi_p * r_p_plus + pi_n * r_n_minus
    return RiskBreakdown(r_p_plus, r_p_minus, r_n_minus, False, total, pi_p)


def combine_pu(pi_p: float, r_p_plus: float, r_u_minus: float, r_p_minus: float) -> float:
    """Unbiased PU combination of the three mean losses."""
    return pi_p * r_p_plus + r_u_minus - pi_p * r_p_minus


def combine_nn_pu(pi_p: float, r_p_plus: float, r_u_minus: float, r_p_minus: float) -> tuple[float, bool]:
    """Non-negative PU combination; returns ``(total, clamp_active)``."""
    correction = r_u_minus - pi_p * r_p_minus
    if correction < 0.0:
        return pi_p * r_p_plus, True
    return pi_p * r_p_plus + correction, False


def pu_risk_unclamped(batch: RiskBatch, pi_p: float, lf: LossFunction = DEFAULT_LOSS) -> RiskBreakdown:
    """Unbiased PU risk ``pi_p R_p^+ + R_u^- - pi_p R_p^-``; may be negative."""
    _check_prior(pi_p)
    r_p_plus, r_p_minus, r_u_minus = _terms(batch, lf)
    total = combine_pu(pi_p, r_p_plus, r_u_minus, r_p_minus)
    return RiskBreakdown(r_p_plus, r_p_minus, r_u_minus, False, total, pi_p)


def nn_pu_risk(batch: RiskBatch, pi_p: float, lf: LossFunction = DEFAULT_LOSS) -> RiskBreakdown:
    """Non-negative PU risk ``pi_p R_p^+ + max(0, R_u^- - pi_p R_p^-)``."""
    _check_prior(pi_p)
    r_p_plus, r_p_minus, r_u_minus = _terms(batch, lf)
    total, clamp = combine_nn_pu(pi_p, r_p_plus, r_u_minus, r_p_minus)
    return RiskBreakdown(r_p_plus, r_p_minus, r_u_minus, clamp, total, pi_p)


def compute_risk(batch, pi_p, lf=DEFAULT_LOSS, mode="nn_pu") -> RiskBreakdown:
    """Dispatch on ``mode``; for ``pn`` a ``pi_p`` of None means counted priors."""
    if mode == "pn":
        priors = None if pi_p is None else (pi_p, 1.0 - pi_p)
        return pn_risk(batch, priors, lf)
    if mode == "pu_unclamped":
        return pu_risk_unclamped(batch, pi_p, lf)
    if mode == "nn_pu":
        return nn_pu_risk(batch, pi_p, lf)
    raise InvalidInputError(f"unknown risk mode {mode!r}")


def _dloss(scores, y, lf):
    # zero outside the clip interval, where the clipped loss is constant
    inside = (scores > lf.clip_epsilon) & (scores < 1.0 - lf.clip_epsilon)
    c = _clip(scores, lf)
    d = -1.0 / c if y == 1 else 1.0 / (1.0 - c)
    return np.where(inside, d, 0.0)


def risk_score_gradients(
    batch: RiskBatch,
    pi_p,
    lf: LossFunction = DEFAULT_LOSS,
    mode: str = "nn_pu",
    clamp_policy: str = "hard-zero",
):
    """Gradient of the chosen risk with respect to every score.

    Returns ``(grad_positive, grad_other)`` aligned with the batch lists.
    Under ``nn_pu`` with an active clamp, ``hard-zero`` keeps only the
    ``pi_p R_p^+`` gradient, while ``defensive`` returns the gradient of
    ``-(R_u^- - pi_p R_p^-)`` alone, stepping the negative correction back
    towards zero.
    """
    if mode not in MODES:
        raise InvalidInputError(f"unknown risk mode {mode!r}")
    if clamp_policy not in CLAMP_POLICIES:
        raise InvalidInputError(f"unknown clamp policy {clamp_policy!r}")
    pos, other = batch.positive_scores, batch.other_scores
    n_p, n_o = max(pos.size, 1), max(other.size, 1)

    if mode == "pn":
        if pi_p is None:
            w_p, w_n = counted_priors(batch)
        else:
            w_p, w_n = pi_p, 1.0 - pi_p
        g_pos = w_p / n_p * _dloss(pos, 1, lf)
        g_other = w_n / n_o * _dloss(other, -1, lf)
        return g_pos, g_other

    _check_prior(pi_p)
    g_plus = pi_p / n_p * _dloss(pos, 1, lf)
    g_corr_pos = -pi_p / n_p * _dloss(pos, -1, lf)
    g_corr_other = _dloss(other, -1, lf) / n_o

    if mode == "nn_pu" and nn_pu_risk(batch, pi_p, lf).clamp_active:
        if clamp_policy == "hard-zero":
            return g_plus, np.zeros_like(other)
        return -g_corr_pos, -g_corr_other
    return g_plus + g_corr_pos, g_corr_other
