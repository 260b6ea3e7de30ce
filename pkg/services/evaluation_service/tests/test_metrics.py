"""Tests for discretization and interval metrics."""
import random

import numpy as np
import pytest
from pydantic import ValidationError

from services.evaluation_service.app.metrics import (
    LabelSequence,
    confusion,
    discretize,
    interval_accuracy,
    macro_f1,
    per_class_scores,
    score,
    score_logs,
)
from services.shared.domain import ActivityInterval, ActivityLog
from services.shared.errors import HorizonTooShort, ShapeMismatch

ORACLE_CASES = 200


def seq(labels, resolution=1.0):
    return LabelSequence(resolution=resolution, horizon=len(labels) * resolution, labels=tuple(labels))


def log_of(*intervals):
    return ActivityLog(video_id="v", intervals=tuple(ActivityInterval.of(*i) for i in intervals))


def brute_force(gt, pred):
    """Counting oracle over unit-weight steps."""
    n = len(gt)
    matrix = [[0] * 9 for _ in range(9)]
    for g, p in zip(gt, pred):
        matrix[g][p] += 1
    accuracy = sum(1 for g, p in zip(gt, pred) if g == p) / n
    f1s = {}
    for c in range(9):
        tp = sum(1 for g, p in zip(gt, pred) if g == c and p == c)
        fp = sum(1 for g, p in zip(gt, pred) if g != c and p == c)
        fn = sum(1 for g, p in zip(gt, pred) if g == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        f1s[c] = (precision, recall, f1, tp + fn, tp + fp)
    present = [f1s[c][2] for c in range(9) if f1s[c][3] or f1s[c][4]]
    return accuracy, f1s, sum(present) / len(present), matrix


class TestDiscretize:
    def test_two_intervals(self):
        labels = discretize(log_of((0, 2, 0), (2, 4, 1)), 1.0, 4).labels
        assert labels == (0, 0, 1, 1)

    def test_empty_log_is_others(self):
        assert discretize(log_of(), 1.0, 3).labels == (8, 8, 8)

    def test_boundary_midpoint_goes_to_later_interval(self):
        assert discretize(log_of((0, 1.5, 0), (1.5, 3, 2)), 1.0, 3).labels == (0, 2, 2)

    def test_horizon_too_short(self):
        with pytest.raises(HorizonTooShort):
            discretize(log_of((0, 10, 0)), 1.0, 5)

    def test_partial_last_step(self):
        sequence = discretize(log_of((0, 3.5, 7)), 1.0, 3.5)
        assert sequence.labels == (7, 7, 7, 7)
        assert sequence.weights.tolist() == [1.0, 1.0, 1.0, 0.5]

    def test_uncovered_gap_is_others(self):
        assert discretize(log_of((0, 1, 0), (2, 3, 1)), 1.0, 3).labels == (0, 8, 1)

    def test_label_count_invariant(self):
        with pytest.raises(ValidationError):
            LabelSequence(resolution=1.0, horizon=3.0, labels=(0, 0))


class TestMajorityOracle:
    @staticmethod
    def random_segments(rng, step_ms):
        """Contiguous segments of at least one step each; label 8 marks an uncovered gap."""
        segments, start = [], int(rng.integers(0, 2)) * int(rng.integers(step_ms, 2 * step_ms))
        for _ in range(int(rng.integers(1, 8))):
            length = int(rng.integers(step_ms, 4 * step_ms))
            label = 8 if rng.random() < 0.2 else int(rng.integers(0, 8))
            segments.append((start, start + length, label))
            start += length
        if segments[-1][2] == 8:
            segments[-1] = segments[-1][:2] + (int(rng.integers(0, 8)),)
        return segments

    @staticmethod
    def majority_labels(segments, end_ms, step_ms):
        """Most frequent label per step over a per-millisecond timeline; None on a tie."""
        timeline = np.full(end_ms, 8, dtype=np.int64)
        for start, stop, label in segments:
            timeline[start:stop] = label
        labels = []
        for first in range(0, end_ms, step_ms):
            counts = np.bincount(timeline[first : first + step_ms], minlength=9)
            winners = np.flatnonzero(counts == counts.max())
            if winners.size > 1:
                return None
            labels.append(int(winners[0]))
        return tuple(labels)

    def test_midpoint_rule_matches_majority(self):
        rng = np.random.default_rng(41)
        checked = 0
        for _ in range(ORACLE_CASES):
            step_ms = int(rng.choice([250, 500, 1000, 2000]))
            segments = self.random_segments(rng, step_ms)
            end_ms = segments[-1][1]
            expected = self.majority_labels(segments, end_ms, step_ms)
            if expected is None:
                continue
            log = ActivityLog(
                video_id="v",
                intervals=tuple(
                    ActivityInterval.of(start / 1000, stop / 1000, label)
                    for start, stop, label in segments
                    if label != 8
                ),
            )
            sequence = discretize(log, step_ms / 1000)
            assert sequence.labels == expected
            assert sequence.weights.sum() == pytest.approx(end_ms / 1000)
            checked += 1
        assert checked > ORACLE_CASES // 2

    def test_partial_last_step_takes_its_majority(self):
        log = log_of((0, 2.0, 1), (2.0, 2.3, 4), (2.3, 2.4, 5))
        sequence = discretize(log, 1.0)
        assert sequence.labels == (1, 1, 4)
        assert sequence.weights.tolist() == pytest.approx([1.0, 1.0, 0.4])
        assert self.majority_labels([(0, 2000, 1), (2000, 2300, 4), (2300, 2400, 5)], 2400, 1000) == (1, 1, 4)


class TestAccuracy:
    def test_identical(self):
        assert interval_accuracy(seq([0, 1, 2]), seq([0, 1, 2])) == 1.0

    def test_disjoint(self):
        assert interval_accuracy(seq([0, 0]), seq([1, 1])) == 0.0

    def test_three_of_four(self):
        assert interval_accuracy(seq([0, 1, 2, 3]), seq([0, 1, 2, 4])) == 0.75

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            interval_accuracy(seq([0, 1]), seq([0, 1, 2]))


class TestMacroF1:
    def test_identical_three_classes(self):
        assert macro_f1(seq([0, 1, 2, 2]), seq([0, 1, 2, 2])) == 1.0

    def test_all_one_class_prediction(self):
        gt = seq([0, 0, 1, 1])
        pred = seq([0, 0, 0, 0])
        assert macro_f1(gt, pred) == pytest.approx(1 / 3)
        scores = per_class_scores(gt, pred)
        assert scores[0].f1 == pytest.approx(2 / 3)
        assert scores[1].f1 == 0.0

    def test_absent_class_excluded(self):
        gt = seq([0, 0, 1, 1])
        pred = seq([0, 0, 1, 1])
        assert macro_f1(gt, pred, classes=[0, 1, 5]) == 1.0

    def test_no_requested_class_present(self):
        assert macro_f1(seq([0, 0]), seq([0, 0]), classes=[4]) == 0.0


class TestConfusion:
    def test_identical_is_diagonal(self):
        matrix = confusion(seq([0, 1, 1, 2]), seq([0, 1, 1, 2]))
        assert np.count_nonzero(matrix - np.diag(np.diag(matrix))) == 0

    def test_all_wrong(self):
        matrix = confusion(seq([0] * 10), seq([1] * 10))
        assert matrix[0, 1] == 10
        assert matrix.sum() == 10

    def test_sum_equals_horizon(self):
        gt = LabelSequence(resolution=0.5, horizon=2.25, labels=(0, 1, 1, 2, 2))
        pred = LabelSequence(resolution=0.5, horizon=2.25, labels=(0, 0, 1, 2, 8))
        assert confusion(gt, pred).sum() == pytest.approx(2.25)


class TestOracleEquivalence:
    def test_random_sequences_match_counting_oracle(self):
        rng = random.Random(2024)
        for _ in range(ORACLE_CASES):
            n = rng.randint(1, 60)
            palette = rng.sample(range(9), rng.randint(1, 9))
            gt = [rng.choice(palette) for _ in range(n)]
            pred = [rng.choice(palette) if rng.random() < 0.7 else rng.randrange(9) for _ in range(n)]
            accuracy, f1s, macro, matrix = brute_force(gt, pred)

            report = score(seq(gt), seq(pred))
            assert report.accuracy == pytest.approx(accuracy, abs=1e-12)
            assert report.macro_f1 == pytest.approx(macro, abs=1e-12)
            assert report.confusion == [[float(v) for v in row] for row in matrix]
            for cls, (precision, recall, f1, _, _) in f1s.items():
                assert report.per_class[cls].precision == pytest.approx(precision, abs=1e-12)
                assert report.per_class[cls].recall == pytest.approx(recall, abs=1e-12)
                assert report.per_class[cls].f1 == pytest.approx(f1, abs=1e-12)

    def test_accuracy_is_trace_over_total(self):
        rng = random.Random(5)
        for _ in range(50):
            n = rng.randint(1, 30)
            gt = seq([rng.randrange(9) for _ in range(n)])
            pred = seq([rng.randrange(9) for _ in range(n)])
            matrix = confusion(gt, pred)
            assert interval_accuracy(gt, pred) == pytest.approx(np.trace(matrix) / matrix.sum())

    def test_label_bijection_invariance(self):
        rng = random.Random(9)
        mapping = list(range(9))
        rng.shuffle(mapping)
        gt_labels = [rng.randrange(9) for _ in range(40)]
        pred_labels = [rng.randrange(9) for _ in range(40)]
        original = score(seq(gt_labels), seq(pred_labels))
        permuted = score(seq([mapping[g] for g in gt_labels]), seq([mapping[p] for p in pred_labels]))
        assert permuted.accuracy == pytest.approx(original.accuracy)
        assert permuted.macro_f1 == pytest.approx(original.macro_f1)


class TestScoreLogs:
    def test_identical_logs(self):
        log = log_of((0, 41, 0), (41, 45, 1), (45, 60, 2))
        report = score_logs(log, log)
        assert report.accuracy == 1.0
        assert report.macro_f1 == 1.0
        assert report.to_row("prompt_a") == {
            "video_id": "v",
            "system": "prompt_a",
            "accuracy": 100.0,
            "f1": 100.0,
        }

    def test_exclude_others_from_macro(self):
        gt = log_of((0, 5, 8), (5, 10, 0))
        pred = log_of((0, 5, 0), (5, 10, 0))
        with_others = score_logs(gt, pred)
        without_others = score_logs(gt, pred, exclude_others=True)
        assert with_others.macro_f1 == pytest.approx(1 / 3)
        assert without_others.macro_f1 == pytest.approx(2 / 3)
