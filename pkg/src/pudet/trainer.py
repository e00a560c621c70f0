"""Training loop for the objectness classifier under PN or PU objectives.

One scene per step.  Each step samples a minibatch of anchors, scores it,
updates the prior estimate (PU only), evaluates the objective, and applies
one SGD step.  Detection of every ground-truth object in the scene is checked
on all anchors directly before and after the step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pudet.errors import ConfigurationError, TrainingDivergenceError
from pudet.model import (
    Classifier,
    OptimizerState,
    backward,
    forward_batch,
    init_classifier,
    sgd_step,
)
from pudet.prior import PriorEstimate, confident_fraction, effective_prior, update_prior
from pudet.riskcore import DEFAULT_LOSS, RiskBatch, RiskBreakdown, nn_pu_risk, pn_risk, risk_score_gradients
from pudet.scenegen import Dataset, ProposalSet, Scene, build_proposals, iou_matrix


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "pu"
    prior_mode: str = "estimated"
    prior_init: float = 0.01
    fixed_prior: float | None = None
    momentum: float = 0.9
    confidence_threshold: float = 0.5
    prior_update: str = "before"
    clamp_policy: str = "hard-zero"
    epochs: int = 10
    learning_rate: float = 0.05
    batch_size: int = 64
    max_positive_fraction: float = 0.5
    architecture: str = "linear"
    hidden_dim: int = 16
    seed: int = 0
    detect_iou: float = 0.5
    detect_confidence: float = 0.8
    track_forgetting: bool = True

    def __post_init__(self):
        if self.objective not in ("pn", "pu"):
            raise ConfigurationError(f"unknown objective {self.objective!r}")
        if self.prior_update not in ("before", "after"):
            raise ConfigurationError("prior_update must be 'before' or 'after'")
        if self.clamp_policy not in ("hard-zero", "defensive"):
            raise ConfigurationError(f"unknown clamp policy {self.clamp_policy!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.max_positive_fraction <= 1:
            raise ConfigurationError("max_positive_fraction must lie in (0, 1]")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.prior_mode == "fixed" and self.fixed_prior is None:
            raise ConfigurationError("prior_mode=fixed needs fixed_prior")
        self.initial_prior()

    def initial_prior(self) -> PriorEstimate:
        return PriorEstimate(
            value=self.prior_init,
            momentum=self.momentum,
            confidence_threshold=self.confidence_threshold,
            mode=self.prior_mode,
            fixed_value=self.fixed_prior,
        )


@dataclass(frozen=True)
class PreparedScene:
    """A scene with its featurized anchors and the anchor/object overlap mask."""

    scene: Scene
    proposals: ProposalSet
    covers: np.ndarray  # (n_objects, n_anchors): IoU >= detection threshold

    @classmethod
    def build(cls, scene, world, detect_iou=0.5):
        proposals = build_proposals(scene, world)
        if scene.objects:
            covers = iou_matrix(scene.boxes(), proposals.boxes) >= detect_iou
        else:
            covers = np.zeros((0, len(proposals)), dtype=bool)
        return cls(scene, proposals, covers)


def prepare_dataset(dataset: Dataset, detect_iou: float = 0.5) -> list[PreparedScene]:
    return [PreparedScene.build(s, dataset.world, detect_iou) for s in dataset.scenes]


@dataclass(frozen=True)
class TrainingBatch:
    positive_idx: np.ndarray
    other_idx: np.ndarray
    interpretation: str

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate([self.positive_idx, self.other_idx])

    def risk_batch(self, scores) -> RiskBatch:
        """Split scores aligned with :attr:`indices` into a RiskBatch."""
        n_p = len(self.positive_idx)
        return RiskBatch(scores[:n_p], scores[n_p:], self.interpretation)


def sample_training_batch(proposals: ProposalSet, config: TrainConfig, rng) -> TrainingBatch | None:
    """Up to ``batch_size`` anchors with labeled positives capped; None if nothing to sample."""
    if len(proposals) == 0:
        return None
    pos = np.flatnonzero(proposals.labeled_positive)
    other = np.flatnonzero(~proposals.labeled_positive)
    n_pos = min(len(pos), int(math.floor(config.max_positive_fraction * config.batch_size)))
    n_other = min(len(other), config.batch_size - n_pos)
    pos_idx = rng.choice(pos, size=n_pos, replace=False) if n_pos else np.empty(0, dtype=np.int64)
    other_idx = rng.choice(other, size=n_other, replace=False) if n_other else np.empty(0, dtype=np.int64)
    interpretation = "negative" if config.objective == "pn" else "unlabeled"
    return TrainingBatch(pos_idx, other_idx, interpretation)


@dataclass(frozen=True)
class StepRecord:
    step: int
    epoch: int
    scene_id: int
    objective: float
    r_p_plus: float
    r_p_minus: float
    r_other_minus: float
    clamp_active: bool
    pi_hat: float  # estimate entering the step
    pi_used: float  # prior weighting this step's loss
    confident_fraction: float


LOG_COLUMNS = (
    "step",
    "epoch",
    "scene_id",
    "objective",
    "r_p_plus",
    "r_p_minus",
    "r_other_minus",
    "clamp_active",
    "pi_hat",
    "pi_used",
    "confident_fraction",
)


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)
    skipped_scenes: list[int] = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def epoch_means(self, name) -> dict[int, float]:
        out = {}
        for epoch in sorted({r.epoch for r in self.records}):
            out[epoch] = float(np.mean([getattr(r, name) for r in self.records if r.epoch == epoch]))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.records:
                w.writerow([_cell(getattr(r, c)) for c in LOG_COLUMNS])


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return format(v, ".17g")
    return v


@dataclass
class ForgettingTracker:
    """Detection indicators of every ground-truth object per epoch.

    ``before[e, k]`` / ``after[e, k]`` hold whether object ``k`` was detected
    directly before / after its scene's training step in epoch ``e``.
    """

    object_keys: list[tuple[int, int]]
    labeled: np.ndarray
    before: np.ndarray
    after: np.ndarray

    @classmethod
    def empty(cls, prepared: Sequence[PreparedScene], epochs: int):
        keys, labeled = [], []
        for p in prepared:
            for k, obj in enumerate(p.scene.objects):
                keys.append((p.scene.id, k))
                labeled.append(obj.labeled)
        n = len(keys)
        return cls(keys, np.array(labeled, dtype=bool), np.zeros((epochs, n), bool), np.zeros((epochs, n), bool))

    def stratum_mask(self, stratum: str) -> np.ndarray:
        return self.labeled if stratum == "labeled" else ~self.labeled


def detection_rate_curves(tracker: ForgettingTracker) -> dict[tuple[str, str], list[float] | None]:
    """Per-epoch detection percentages for {labeled, unlabeled} x {before, after}.

    A stratum without objects maps to ``None`` rather than zeros.
    """
    out = {}
    for stratum in ("labeled", "unlabeled"):
        mask = tracker.stratum_mask(stratum)
        for phase in ("before", "after"):
            if not mask.any():
                out[(stratum, phase)] = None
                continue
            flags = getattr(tracker, phase)[:, mask]
            out[(stratum, phase)] = [100.0 * float(v) for v in flags.mean(axis=1)]
    return out


def write_rate_curves(tracker: ForgettingTracker, path) -> None:
    curves = detection_rate_curves(tracker)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "stratum", "phase", "rate"])
        for (stratum, phase), series in curves.items():
            if series is None:
                continue
            for epoch, rate in enumerate(series):
                w.writerow([epoch, stratum, phase, format(rate, ".17g")])


def objects_detected(model: Classifier, prepared: PreparedScene, config: TrainConfig) -> np.ndarray:
    """Detection flag per ground-truth object, using every anchor of the scene."""
    if prepared.covers.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    confident = forward_batch(model, prepared.proposals.features) >= config.detect_confidence
    return (prepared.covers & confident[None, :]).any(axis=1)


def is_detected(model: Classifier, obj, proposals: ProposalSet, iou_threshold=0.5, confidence=0.8) -> bool:
    overlaps = iou_matrix(obj.box.as_array(), proposals.boxes)[0]
    near = overlaps >= iou_threshold
    if not near.any():
        return False
    return bool(np.any(forward_batch(model, proposals.features[near]) >= confidence))


def train_step(
    model: Classifier,
    prepared: PreparedScene,
    prior: PriorEstimate,
    opt: OptimizerState,
    config: TrainConfig,
    rng,
    epoch: int = 0,
    lf=DEFAULT_LOSS,
):
    """One update on one scene.  Returns ``(model, prior, opt, record)``.

    ``record`` is None when the scene has nothing to sample.
    """
    batch = sample_training_batch(prepared.proposals, config, rng)
    if batch is None:
        return model, prior, opt, None
    X = prepared.proposals.features[batch.indices]
    scores = forward_batch(model, X)
    risk_batch = batch.risk_batch(scores)
    frac = confident_fraction(scores, prior.confidence_threshold)
    pi_start = effective_prior(prior)

    if config.objective == "pn":
        breakdown: RiskBreakdown = pn_risk(risk_batch, None, lf)
        g_pos, g_other = risk_score_gradients(risk_batch, None, lf, "pn")
        pi_used = breakdown.prior
    else:
        if config.prior_update == "before":
            prior = update_prior(prior, scores)
        pi_used = effective_prior(prior)
        breakdown = nn_pu_risk(risk_batch, pi_used, lf)
        g_pos, g_other = risk_score_gradients(risk_batch, pi_used, lf, "nn_pu", config.clamp_policy)
        if config.prior_update == "after":
            prior = update_prior(prior, scores)

    record = StepRecord(
        step=opt.step_count,
        epoch=epoch,
        scene_id=prepared.scene.id,
        objective=breakdown.total,
        r_p_plus=breakdown.r_p_plus,
        r_p_minus=breakdown.r_p_minus,
        r_other_minus=breakdown.r_other_minus,
        clamp_active=breakdown.clamp_active,
        pi_hat=float(pi_start),
        pi_used=float(pi_used),
        confident_fraction=frac,
    )
    if not math.isfinite(breakdown.total):
        raise TrainingDivergenceError("non-finite objective", record)
    grads = backward(model, X, np.concatenate([g_pos, g_other]))
    try:
        model, opt = sgd_step(model, grads, opt)
    except TrainingDivergenceError as exc:
        raise TrainingDivergenceError(str(exc), record) from exc
    return model, prior, opt, record


@dataclass
class TrainResult:
    model: Classifier
    log: TrainLog
    tracker: ForgettingTracker
    prior: PriorEstimate


def run_training(
    dataset: Dataset | Sequence[PreparedScene],
    config: TrainConfig,
    model: Classifier | None = None,
    lf=DEFAULT_LOSS,
) -> TrainResult:
    """``epochs`` passes over the scenes in a seeded shuffled order."""
    prepared = prepare_dataset(dataset, config.detect_iou) if isinstance(dataset, Dataset) else list(dataset)
    if not prepared:
        raise ConfigurationError("cannot train on an empty dataset")
    dim = prepared[0].proposals.features.shape[1]
    if model is None:
        model = init_classifier(config.architecture, dim, config.hidden_dim, np.random.default_rng([config.seed, 3]))
    rng = np.random.default_rng([config.seed, 7])
    prior = config.initial_prior()
    opt = OptimizerState(config.learning_rate)
    log = TrainLog()
    tracker = ForgettingTracker.empty(prepared, config.epochs)
    offsets = np.cumsum([0] + [len(p.scene.objects) for p in prepared])

    for epoch in range(config.epochs):
        for i in rng.permutation(len(prepared)):
            p = prepared[i]
            track = config.track_forgetting and len(p.scene.objects) > 0
            if track:
                tracker.before[epoch, offsets[i] : offsets[i + 1]] = objects_detected(model, p, config)
            model, prior, opt, record = train_step(model, p, prior, opt, config, rng, epoch, lf)
            if record is None:
                log.skipped_scenes.append(p.scene.id)
            else:
                log.records.append(record)
            if track:
                tracker.after[epoch, offsets[i] : offsets[i + 1]] = objects_detected(model, p, config)
    return TrainResult(model, log, tracker, prior)
