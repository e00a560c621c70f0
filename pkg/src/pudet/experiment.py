"""Grid experiments comparing PN, Full-PN and PU training across missingness.

Every cell ``(setting, rho, seed)`` trains on its own label view of one fixed
training set and is scored on one fixed, fully labeled test split.  Cells are
independent, write only their own files, and can run in a process pool.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from pudet.errors import ConfigurationError, PudetError
from pudet.metrics import (
    AP_INTERPOLATION,
    Detections,
    EvalResult,
    average_precision,
    froc_curve,
    recall_at_k,
    sensitivity_vs_iou,
)
from pudet.model import Classifier, forward_batch
from pudet.scenegen import (
    Dataset,
    MissingnessSpec,
    WorldConfig,
    discard_labels,
    iou_matrix,
    generate_scenes,
    generate_test_split,
    make_full_pn_subset,
    scene_to_line,
)
from pudet.trainer import PreparedScene, TrainConfig, TrainResult, prepare_dataset, run_training

log = logging.getLogger(__name__)

SETTINGS = ("pn", "full-pn", "pu")
METRICS = ("ap", "recall", "froc", "sensitivity_iou")

# stream tags for per-cell generators
_DISCARD_STREAM = 11
_SUBSET_STREAM = 12


@dataclass(frozen=True)
class MetricSpec:
    metrics: tuple[str, ...] = METRICS
    ap_thresholds: tuple[float, ...] = (0.25, 0.5, 0.75)
    recall_k: int = 64
    recall_iou: float = 0.5
    fp_grid: tuple[float, ...] = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    iou_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    fp_allowance: float = 4.0

    def __post_init__(self):
        if not self.metrics:
            raise ConfigurationError("no metrics requested")
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ConfigurationError(f"unknown metrics {sorted(bad)}")


@dataclass(frozen=True)
class ExperimentSpec:
    rho_grid: tuple[float, ...] = (0.0, 0.1, 0.3, 0.5, 0.7)
    settings: tuple[str, ...] = SETTINGS
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_train: int = 1000
    n_test: int = 200
    hand_tuned_priors: tuple[float, ...] = ()
    world: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricSpec = field(default_factory=MetricSpec)

    def __post_init__(self):
        if not self.rho_grid or not self.settings or not self.seeds:
            raise ConfigurationError("rho grid, settings and seeds must be non-empty")
        bad = set(self.settings) - set(SETTINGS)
        if bad:
            raise ConfigurationError(f"unknown settings {sorted(bad)}")
        for rho in self.rho_grid:
            MissingnessSpec(rho)
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigurationError("n_train and n_test must be positive")


def config_hash(spec) -> str:
    text = repr(asdict(spec)).encode()
    return hashlib.sha256(text).hexdigest()[:16]


def dataset_hash(dataset: Dataset) -> str:
    h = hashlib.sha256(repr(asdict(dataset.world)).encode())
    for s in dataset.scenes:
        h.update(scene_to_line(s).encode())
    return h.hexdigest()[:16]


def training_view(scenes, setting: str, rho: float, seed: int) -> list:
    """Label view for one cell.

    ``pn`` and ``pu`` share the per-annotation discard drawn from
    ``(seed, rho)``; ``full-pn`` keeps a random subset of whole scenes.
    """
    key = int(round(rho * 1e6))
    if setting == "full-pn":
        return make_full_pn_subset(scenes, rho, np.random.default_rng([seed, _SUBSET_STREAM, key]))
    return discard_labels(scenes, MissingnessSpec(rho), np.random.default_rng([seed, _DISCARD_STREAM, key]))


def score_scenes(model: Classifier, prepared: Sequence[PreparedScene]):
    """All anchors as detections, plus the complete ground truth per scene."""
    parts, gt = [], {}
    for p in prepared:
        scores = forward_batch(model, p.proposals.features)
        parts.append(Detections(np.full(len(scores), p.scene.id), p.proposals.boxes, scores))
        gt[p.scene.id] = p.scene.boxes(labeled_only=False)
    return Detections.concat(parts), gt


def evaluate(model: Classifier, prepared: Sequence[PreparedScene], spec: MetricSpec = MetricSpec()) -> list[EvalResult]:
    dets, gt = score_scenes(model, prepared)
    n_images = len(prepared)
    out = []
    if "ap" in spec.metrics:
        values = [average_precision(dets, gt, t) for t in spec.ap_thresholds]
        out.append(EvalResult("ap", list(spec.ap_thresholds), values))
    if "recall" in spec.metrics:
        out.append(EvalResult(f"recall@{spec.recall_k}", [spec.recall_iou], [recall_at_k(dets, gt, spec.recall_k, spec.recall_iou)]))
    if "froc" in spec.metrics:
        out.append(EvalResult("froc", list(spec.fp_grid), froc_curve(dets, gt, spec.fp_grid, 0.5, n_images)))
    if "sensitivity_iou" in spec.metrics:
        values = sensitivity_vs_iou(dets, gt, spec.iou_grid, spec.fp_allowance, n_images)
        out.append(EvalResult(f"sensitivity_iou@fp{spec.fp_allowance:g}", list(spec.iou_grid), values))
    return out


@dataclass(frozen=True)
class Cell:
    setting: str
    rho: float
    seed: int
    fixed_prior: float | None = None

    @property
    def label(self) -> str:
        name = self.setting if self.fixed_prior is None else f"pu-fixed{self.fixed_prior:g}"
        return f"{name}_rho{self.rho:g}_seed{self.seed}"

    @property
    def setting_name(self) -> str:
        return self.setting if self.fixed_prior is None else f"pu-fixed-{self.fixed_prior:g}"


def cell_train_config(spec: ExperimentSpec, cell: Cell) -> TrainConfig:
    objective = "pu" if cell.setting == "pu" else "pn"
    cfg = replace(spec.train, objective=objective, seed=cell.seed)
    if cell.fixed_prior is not None:
        cfg = replace(cfg, prior_mode="fixed", fixed_prior=cell.fixed_prior)
    return cfg


def build_cells(spec: ExperimentSpec) -> list[Cell]:
    cells = [Cell(s, r, seed) for r in spec.rho_grid for s in spec.settings for seed in spec.seeds]
    for prior in spec.hand_tuned_priors:
        cells += [Cell("pu", r, seed, prior) for r in spec.rho_grid for seed in spec.seeds]
    return cells


@dataclass
class CellOutcome:
    cell: Cell
    rows: list[tuple]
    error: str | None = None
    train: TrainResult | None = None


_cache: dict = {}


def _base_data(spec: ExperimentSpec):
    """Training scenes and the prepared test split, cached per process."""
    key = (spec.world, spec.n_train, spec.n_test, spec.train.detect_iou)
    if key not in _cache:
        _cache.clear()
        scenes = generate_scenes(spec.world, spec.n_train)
        test = prepare_dataset(Dataset(spec.world, generate_test_split(spec.world, spec.n_test)), spec.train.detect_iou)
        base = {s.id: PreparedScene.build(s, spec.world, spec.train.detect_iou) for s in scenes}
        _cache[key] = (scenes, base, test)
    return _cache[key]


def _relabel(base: PreparedScene, scene, world) -> PreparedScene:
    # geometry and features are shared, only roles change with the label view
    if scene.objects == base.scene.objects:
        return base
    props = base.proposals
    flags = scene.labeled_flags
    if flags.any():
        max_labeled = iou_matrix(props.boxes, scene.boxes(labeled_only=True)).max(axis=1)
    else:
        max_labeled = np.zeros(len(props))
    props = replace(props, max_iou_labeled=max_labeled, labeled_positive=max_labeled >= world.positive_iou)
    return replace(base, scene=scene, proposals=props)


def run_cell(spec: ExperimentSpec, cell: Cell, keep_train: bool = False) -> CellOutcome:
    scenes, base, test = _base_data(spec)
    try:
        view = training_view(scenes, cell.setting, cell.rho, cell.seed)
        prepared = [_relabel(base[s.id], s, spec.world) for s in view]
        cfg = cell_train_config(spec, cell)
        result = run_training(prepared, cfg)
        evals = evaluate(result.model, test, spec.metrics)
    except PudetError as exc:
        return CellOutcome(cell, [], f"{type(exc).__name__}: {exc}")
    rows = [(cell.setting_name, cell.rho, cell.seed, m, t, v) for res in evals for (m, t, v) in res.rows()]
    return CellOutcome(cell, rows, None, result if keep_train else None)


RESULT_COLUMNS = ("setting", "rho", "seed", "metric", "threshold", "value", "config_hash", "dataset_hash")


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def write_rows(path, rows, chash, dhash):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in row] + [chash, dhash])


def _run_cell_files(args):
    spec, cell, out_dir, chash, dhash = args
    outcome = run_cell(spec, cell, keep_train=cell.setting == "pu")
    cells_dir = Path(out_dir) / "cells"
    if outcome.error is None:
        write_rows(cells_dir / f"{cell.label}.csv", outcome.rows, chash, dhash)
        if cell.setting == "pu":
            outcome.train.log.write_csv(cells_dir / f"{cell.label}_trainlog.csv")
            _write_pi_hat(outcome.train.log, Path(out_dir) / "pi_hat" / f"{cell.label}.csv")
    outcome.train = None
    return outcome


def _write_pi_hat(train_log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "pi_hat"])
        for r in train_log.records:
            w.writerow([r.step, r.epoch, format(r.pi_hat, ".17g")])


def run_experiment(spec: ExperimentSpec, out_dir, jobs: int | None = None) -> tuple[list[tuple], list[tuple[Cell, str]]]:
    """Run every cell, then write ``results.csv`` and ``failed_cells.csv``.

    Returns ``(rows, failures)``; rows are sorted so output does not depend
    on execution order.
    """
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    (out / "pi_hat").mkdir(parents=True, exist_ok=True)
    chash = config_hash(spec)
    scenes, _, _ = _base_data(spec)
    dhash = dataset_hash(Dataset(spec.world, scenes))
    cells = build_cells(spec)
    args = [(spec, c, str(out), chash, dhash) for c in cells]
    jobs = jobs or os.cpu_count() or 1
    if jobs == 1:
        outcomes = [_run_cell_files(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell_files, args))

    rows = sorted((r for o in outcomes for r in o.rows), key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
    failures = sorted(((o.cell, o.error) for o in outcomes if o.error), key=lambda x: x[0].label)
    write_rows(out / "results.csv", rows, chash, dhash)
    with open(out / "failed_cells.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "error"])
        for cell, err in failures:
            w.writerow([cell.label, err])
    (out / "provenance.txt").write_text(
        f"config_hash {chash}\ndataset_hash {dhash}\nap_interpolation {AP_INTERPOLATION}\n"
        f"spec {asdict(spec)!r}\n"
    )
    for cell, err in failures:
        log.warning("cell %s failed: %s", cell.label, err)
    return rows, failures


def median_metric(rows, setting, rho, metric="ap", threshold=0.5) -> float:
    vals = [r[5] for r in rows if r[0] == setting and r[1] == rho and r[3] == metric and abs(r[4] - threshold) < 1e-12]
    if not vals:
        raise KeyError((setting, rho, metric, threshold))
    return float(np.median(vals))
