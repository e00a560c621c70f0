import logging

import numpy as np
import pytest

from pudet.errors import InvalidInputError, UndefinedMetricError
from pudet.metrics import (
    Detection,
    Detections,
    EvalResult,
    average_precision,
    froc_curve,
    greedy_match,
    recall_at_k,
    sensitivity_vs_iou,
    write_results,
)
from pudet.scenegen import Box

from oracles import bf_ap, bf_froc, bf_optimal_matches, bf_ranked, bf_tp_flags, random_instance

log = logging.getLogger(__name__)

GT2 = {0: [[0, 0, 10, 10], [20, 20, 30, 30]]}


def dets(rows):
    """rows of (scene, x0, y0, x1, y1, score)"""
    return Detections.from_list([Detection(r[0], Box(*r[1:5]), r[5]) for r in rows])


def as_dets(rows):
    if not rows:
        return Detections(np.empty(0), np.empty((0, 4)), np.empty(0))
    return Detections([r[0] for r in rows], [r[1:5] for r in rows], [r[5] for r in rows])


INSTANCES = [random_instance(np.random.default_rng(s)) for s in range(300)]


# -- hand examples -----------------------------------------------------------


class TestAP:
    def test_single_match(self):
        assert average_precision(dets([(0, 0, 0, 10, 10, 0.9)]), {0: [[0, 0, 10, 10]]}) == 1.0

    def test_all_disjoint(self):
        assert average_precision(dets([(0, 50, 50, 60, 60, 0.9)]), {0: [[0, 0, 10, 10]]}) == 0.0

    def test_tp_fp_tp(self):
        d = dets([(0, 0, 0, 10, 10, 0.9), (0, 50, 50, 60, 60, 0.8), (0, 20, 20, 30, 30, 0.7)])
        assert average_precision(d, GT2) == pytest.approx(0.5 + 0.5 * 2 / 3, abs=1e-12)

    def test_no_ground_truth(self):
        with pytest.raises(UndefinedMetricError):
            average_precision(dets([(0, 0, 0, 1, 1, 0.5)]), {0: []})

    def test_no_detections(self):
        assert average_precision(dets([]), GT2) == 0.0

    def test_duplicate_is_false_positive(self):
        d = dets([(0, 0, 0, 10, 10, 0.9), (0, 0, 0, 10, 10, 0.8)])
        assert average_precision(d, {0: [[0, 0, 10, 10]]}) == 1.0
        assert average_precision(d, {0: [[0, 0, 10, 10], [40, 40, 50, 50]]}) == 0.5

    def test_unlabeled_objects_count(self):
        # evaluation uses all objects, so a missed second object halves recall
        d = dets([(0, 0, 0, 10, 10, 0.9)])
        assert average_precision(d, GT2) == 0.5


def test_greedy_takes_best_overlap():
    gt = np.array([[0, 0, 10, 10], [2, 0, 12, 10]], float)
    assert list(greedy_match(np.array([[2, 0, 12, 10]], float), gt, 0.5)) == [1]


class TestRecall:
    def test_full_coverage(self):
        d = dets([(0, 0, 0, 10, 10, 0.1), (0, 20, 20, 30, 30, 0.2), (0, 60, 60, 70, 70, 0.3)])
        assert recall_at_k(d, GT2, 10) == 1.0

    def test_top_one_disjoint(self):
        d = dets([(0, 60, 60, 70, 70, 0.9), (0, 0, 0, 10, 10, 0.1)])
        assert recall_at_k(d, GT2, 1) == 0.0

    def test_two_of_three(self):
        gt = {0: [[0, 0, 10, 10], [20, 20, 30, 30], [40, 40, 50, 50]]}
        d = dets([(0, 0, 0, 10, 10, 0.9), (0, 20, 20, 30, 30, 0.8), (0, 40, 40, 50, 50, 0.1)])
        assert recall_at_k(d, gt, 2) == pytest.approx(2 / 3, abs=1e-15)

    def test_k_per_scene(self):
        gt = {0: [[0, 0, 10, 10]], 1: [[0, 0, 10, 10]]}
        d = dets([(0, 0, 0, 10, 10, 0.9), (0, 50, 50, 60, 60, 0.95), (1, 0, 0, 10, 10, 0.1)])
        assert recall_at_k(d, gt, 1) == 0.5

    def test_bad_k(self):
        with pytest.raises(InvalidInputError):
            recall_at_k(dets([]), GT2, 0)


class TestFROC:
    grid = [0.125, 0.25, 0.5, 1, 2, 4, 8]

    def test_perfect(self):
        d = dets([(0, 0, 0, 10, 10, 0.9), (0, 20, 20, 30, 30, 0.8)])
        assert froc_curve(d, GT2, self.grid) == [1.0] * len(self.grid)

    def test_nothing(self):
        assert froc_curve(dets([]), GT2, self.grid) == [0.0] * len(self.grid)

    def test_two_scene_hand(self):
        # ranked: TP(s0) .9, FP(s1) .8, TP(s0) .7, FP(s0) .6, TP(s1) .5; 3 objects, 2 images
        gt = {0: [[0, 0, 10, 10], [20, 20, 30, 30]], 1: [[0, 0, 10, 10]]}
        d = dets(
            [
                (0, 0, 0, 10, 10, 0.9),
                (1, 50, 50, 60, 60, 0.8),
                (0, 20, 20, 30, 30, 0.7),
                (0, 60, 60, 70, 70, 0.6),
                (1, 0, 0, 10, 10, 0.5),
            ]
        )
        # cuts: (1,0) (1,1) (2,1) (2,2) (3,2); FP/img 0, .5, .5, 1, 1
        assert froc_curve(d, gt, [0.25, 0.5, 1.0]) == [1 / 3, 2 / 3, 1.0]

    def test_tied_scores_enter_together(self):
        d = dets([(0, 0, 0, 10, 10, 0.5), (0, 50, 50, 60, 60, 0.5)])
        # the TP cannot be taken without its tied FP
        assert froc_curve(d, {0: [[0, 0, 10, 10]]}, [0.5, 1.0]) == [0.0, 1.0]

    def test_bad_grid(self):
        with pytest.raises(InvalidInputError):
            froc_curve(dets([]), GT2, [1.0, 0.5])


class TestSensitivityIoU:
    def test_identical(self):
        d = dets([(0, 0, 0, 10, 10, 0.9), (0, 20, 20, 30, 30, 0.8)])
        assert sensitivity_vs_iou(d, GT2, [0.1, 0.5, 0.9, 1.0], 1.0) == [1.0] * 4

    def test_step_at_point_six(self):
        d = dets([(0, 0, 0, 10, 6, 0.9)])
        out = sensitivity_vs_iou(d, {0: [[0, 0, 10, 10]]}, [0.5, 0.6, 0.61, 0.9], 1.0)
        assert out == [1.0, 1.0, 0.0, 0.0]


# -- brute-force agreement ---------------------------------------------------


@pytest.mark.parametrize("thr", [0.25, 0.5, 0.75])
def test_ap_matches_brute_force(thr):
    for gt, rows in INSTANCES:
        assert average_precision(as_dets(rows), gt, thr) == pytest.approx(bf_ap(rows, gt, thr), abs=1e-12)


@pytest.mark.parametrize("thr", [0.3, 0.5])
def test_froc_matches_brute_force(thr):
    grid = [0.125, 0.25, 0.5, 1, 2, 4, 8]
    for gt, rows in INSTANCES:
        n = len(gt)
        assert froc_curve(as_dets(rows), gt, grid, thr, n) == pytest.approx(bf_froc(rows, gt, grid, thr, n), abs=1e-12)


def test_sensitivity_matches_brute_force():
    iou_grid = [0.1, 0.3, 0.5, 0.7, 0.9]
    for gt, rows in INSTANCES:
        n = len(gt)
        expected = [bf_froc(rows, gt, [1.0], t, n)[0] for t in iou_grid]
        assert sensitivity_vs_iou(as_dets(rows), gt, iou_grid, 1.0, n) == pytest.approx(expected, abs=1e-12)


def test_greedy_vs_optimal_matching():
    # greedy never beats the optimal assignment; the gap is logged, not asserted
    gaps = 0
    for gt, rows in INSTANCES:
        greedy = sum(bf_tp_flags(bf_ranked(rows), gt, 0.5))
        optimal = bf_optimal_matches(rows, gt, 0.5)
        assert greedy <= optimal
        gaps += greedy < optimal
    log.info("greedy below optimal on %d of %d instances", gaps, len(INSTANCES))


# -- monotonicity on random inputs ---------------------------------------------


def test_monotonicity():
    rng = np.random.default_rng(123)
    fp_grid = [0.125, 0.25, 0.5, 1, 2, 4, 8]
    iou_grid = np.linspace(0.1, 0.9, 9)
    for _ in range(1000):
        gt, rows = random_instance(rng)
        d = as_dets(rows)
        froc = froc_curve(d, gt, fp_grid, 0.5, len(gt))
        assert all(a <= b for a, b in zip(froc, froc[1:]))
        sens = sensitivity_vs_iou(d, gt, iou_grid, 1.0, len(gt))
        assert all(a >= b for a, b in zip(sens, sens[1:]))
        ap = [average_precision(d, gt, t) for t in (0.25, 0.5, 0.75)]
        assert all(0.0 <= a <= 1.0 for a in ap)
        rec = [recall_at_k(d, gt, k) for k in (1, 2, 4, 8)]
        assert all(a <= b for a, b in zip(rec, rec[1:]))


def test_write_results(tmp_path):
    res = [EvalResult("ap", [0.5], [0.25]), EvalResult("recall", [64], [1 / 3])]
    write_results(res, tmp_path / "r.csv", {"dataset_hash": "abc"})
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "metric,threshold,value,dataset_hash"
    assert lines[2] == "recall,64,0.33333333333333331,abc"
