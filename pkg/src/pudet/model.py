"""Small binary objectness classifiers with hand-written backpropagation.

Parameters live in one flat vector so that SGD, finite differences and the
snapshot format all work on the same layout:

* ``linear``:        ``w (d)``, ``b``
* ``mlp-1-hidden``:  ``W1 (h x d, row-major)``, ``b1 (h)``, ``w2 (h)``, ``b2``
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from pudet.errors import ConfigurationError, InvalidInputError, TrainingDivergenceError
from pudet.riskcore import DEFAULT_LOSS, RiskBatch, compute_risk, risk_score_gradients

ARCHITECTURES = ("linear", "mlp-1-hidden")
SNAPSHOT_MAGIC = "pudet-classifier v1"

# keeps scores strictly inside (0, 1) even for huge logits
_SCORE_LO = np.finfo(float).tiny
_SCORE_HI = np.nextafter(1.0, 0.0)


def n_parameters(architecture: str, input_dim: int, hidden_dim: int = 0) -> int:
    if architecture == "linear":
        return input_dim + 1
    if architecture == "mlp-1-hidden":
        return hidden_dim * input_dim + 2 * hidden_dim + 1
    raise ConfigurationError(f"unknown architecture {architecture!r}")


@dataclass(frozen=True)
class Classifier:
    architecture: str
    input_dim: int
    hidden_dim: int
    params: np.ndarray

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be positive")
        if self.architecture == "mlp-1-hidden" and self.hidden_dim < 1:
            raise ConfigurationError("mlp needs a positive hidden_dim")
        hidden = self.hidden_dim if self.architecture == "mlp-1-hidden" else 0
        object.__setattr__(self, "hidden_dim", hidden)
        params = np.array(self.params, dtype=float).reshape(-1)
        expected = n_parameters(self.architecture, self.input_dim, hidden)
        if params.size != expected:
            raise InvalidInputError(f"expected {expected} parameters, got {params.size}")
        params.flags.writeable = False
        object.__setattr__(self, "params", params)

    def unpack(self):
        p, d, h = self.params, self.input_dim, self.hidden_dim
        if self.architecture == "linear":
            return {"w": p[:d], "b": p[d]}
        return {
            "W1": p[: h * d].reshape(h, d),
            "b1": p[h * d : h * d + h],
            "w2": p[h * d + h : h * d + 2 * h],
            "b2": p[-1],
        }


@dataclass(frozen=True)
class OptimizerState:
    learning_rate: float = 0.05
    step_count: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")


def init_classifier(architecture="linear", input_dim=8, hidden_dim=16, rng=None, scale=0.1):
    """Parameters uniform in ``[-scale, scale]``."""
    rng = np.random.default_rng(rng)
    hidden = hidden_dim if architecture == "mlp-1-hidden" else 0
    size = n_parameters(architecture, input_dim, hidden)
    return Classifier(architecture, input_dim, hidden, rng.uniform(-scale, scale, size))


def zero_classifier(architecture="linear", input_dim=8, hidden_dim=16):
    hidden = hidden_dim if architecture == "mlp-1-hidden" else 0
    return Classifier(architecture, input_dim, hidden, np.zeros(n_parameters(architecture, input_dim, hidden)))


def _as_matrix(model, features):
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InvalidInputError(f"features must have {model.input_dim} columns, got shape {np.shape(features)}")
    return X


def _forward(model, X):
    """Returns (scores, hidden activations or None)."""
    p = model.unpack()
    if model.architecture == "linear":
        z = X @ p["w"] + p["b"]
        hidden = None
    else:
        hidden = np.tanh(X @ p["W1"].T + p["b1"])
        z = hidden @ p["w2"] + p["b2"]
    return np.clip(expit(z), _SCORE_LO, _SCORE_HI), hidden


def forward_batch(model: Classifier, features) -> np.ndarray:
    X = _as_matrix(model, features)
    return _forward(model, X)[0]


def forward(model: Classifier, features) -> float:
    x = np.asarray(features, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("forward takes a single feature vector")
    return float(forward_batch(model, x)[0])


def backward(model: Classifier, features, score_grads) -> np.ndarray:
    """Chain per-sample ``d risk / d score`` back to the flat parameter vector."""
    X = _as_matrix(model, features)
    g = np.asarray(score_grads, dtype=float).reshape(-1)
    if g.size != X.shape[0]:
        raise InvalidInputError("one score gradient per feature row is required")
    scores, hidden = _forward(model, X)
    dz = g * scores * (1.0 - scores)
    if model.architecture == "linear":
        return np.concatenate([X.T @ dz, [dz.sum()]])
    p = model.unpack()
    grad_w2 = hidden.T @ dz
    dh = np.outer(dz, p["w2"]) * (1.0 - hidden**2)
    grad_W1 = dh.T @ X
    return np.concatenate([grad_W1.reshape(-1), dh.sum(axis=0), grad_w2, [dz.sum()]])


def sgd_step(model: Classifier, gradients, opt: OptimizerState):
    grads = np.asarray(gradients, dtype=float).reshape(-1)
    if grads.shape != model.params.shape:
        raise InvalidInputError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergenceError(
            "non-finite gradient", {"step": opt.step_count, "n_nonfinite": int(np.sum(~np.isfinite(grads)))}
        )
    new = replace(model, params=model.params - opt.learning_rate * grads)
    return new, replace(opt, step_count=opt.step_count + 1)


def batch_objective(model, pos_features, other_features, mode, pi_p, lf=DEFAULT_LOSS):
    """End-to-end risk of ``model`` on a featurized batch."""
    batch = RiskBatch(
        forward_batch(model, pos_features) if len(pos_features) else np.empty(0),
        forward_batch(model, other_features) if len(other_features) else np.empty(0),
        "negative" if mode == "pn" else "unlabeled",
    )
    return compute_risk(batch, pi_p, lf, mode)


def batch_gradient(model, pos_features, other_features, mode, pi_p, lf=DEFAULT_LOSS, clamp_policy="hard-zero"):
    """Analytic parameter gradient of ``batch_objective``."""
    pos_features = np.asarray(pos_features, dtype=float).reshape(-1, model.input_dim)
    other_features = np.asarray(other_features, dtype=float).reshape(-1, model.input_dim)
    X = np.vstack([pos_features, other_features])
    scores = forward_batch(model, X)
    n_p = len(pos_features)
    batch = RiskBatch(scores[:n_p], scores[n_p:], "negative" if mode == "pn" else "unlabeled")
    g_pos, g_other = risk_score_gradients(batch, pi_p, lf, mode, clamp_policy)
    return backward(model, X, np.concatenate([g_pos, g_other]))


def grad_check(model, pos_features, other_features, mode, h=1e-6, pi_p=None, lf=DEFAULT_LOSS, clamp_policy="hard-zero"):
    """Max relative error between analytic and central-difference gradients.

    The error for each parameter is ``|a - n| / max(1, |a|, |n|)``.
    """
    analytic = batch_gradient(model, pos_features, other_features, mode, pi_p, lf, clamp_policy)
    numeric = np.empty_like(analytic)
    base = model.params
    for i in range(base.size):
        up, down = base.copy(), base.copy()
        up[i] += h
        down[i] -= h
        f_up = batch_objective(replace(model, params=up), pos_features, other_features, mode, pi_p, lf).total
        f_down = batch_objective(replace(model, params=down), pos_features, other_features, mode, pi_p, lf).total
        numeric[i] = (f_up - f_down) / (2.0 * h)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_snapshot(model: Classifier, path) -> None:
    lines = [
        SNAPSHOT_MAGIC,
        f"architecture {model.architecture}",
        f"input_dim {model.input_dim}",
        f"hidden_dim {model.hidden_dim}",
        f"n_params {model.params.size}",
    ]
    lines += [_fmt(v) for v in model.params]
    Path(path).write_text("\n".join(lines) + "\n")


def load_snapshot(path) -> Classifier:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SNAPSHOT_MAGIC:
        raise InvalidInputError(f"{path}: not a classifier snapshot")
    header = dict(line.split(" ", 1) for line in lines[1:5])
    n = int(header["n_params"])
    values = [float(v) for v in lines[5 : 5 + n]]
    if len(values) != n:
        raise InvalidInputError(f"{path}: truncated parameter list")
    return Classifier(header["architecture"], int(header["input_dim"]), int(header["hidden_dim"]), np.array(values))
