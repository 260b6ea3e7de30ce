"""Interval-based recognition metrics.

Logs are discretized on a fixed time grid; every metric weighs a step by the
seconds it covers, so the confusion matrix is in seconds and its total equals
the horizon. All full steps weigh ``resolution``; the last step of a horizon
that is not a multiple of the resolution weighs the remainder.
"""
import logging
import math
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from services.shared.domain import ActivityClass, ActivityLog
from services.shared.errors import DegenerateInput, HorizonTooShort, ShapeMismatch

logger = logging.getLogger(__name__)

NUM_CLASSES = len(ActivityClass)
ALL_CLASSES = tuple(int(activity) for activity in ActivityClass)
DEFAULT_RESOLUTION = 1.0
_GRID_EPS = 1e-9


def step_count(horizon: float, resolution: float) -> int:
    """ceil(horizon / resolution), tolerant to float noise."""
    return max(0, math.ceil(horizon / resolution - _GRID_EPS))


class LabelSequence(BaseModel):
    """One class id per time step of ``resolution`` seconds."""

    model_config = ConfigDict(frozen=True)

    resolution: float = Field(..., gt=0)
    horizon: float = Field(..., ge=0)
    labels: Tuple[int, ...]

    @model_validator(mode="after")
    def validate_shape(self) -> "LabelSequence":
        expected = step_count(self.horizon, self.resolution)
        if len(self.labels) != expected:
            raise ValueError(f"Expected {expected} labels for horizon {self.horizon}, got {len(self.labels)}")
        if any(not 0 <= int(label) < NUM_CLASSES for label in self.labels):
            raise ValueError("Labels must be class ids 0-8")
        return self

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    @property
    def weights(self) -> np.ndarray:
        """Seconds covered by each step."""
        n = len(self.labels)
        weights = np.full(n, self.resolution, dtype=float)
        if n:
            weights[-1] = self.horizon - (n - 1) * self.resolution
        return weights


class ClassScores(BaseModel):
    precision: float
    recall: float
    f1: float
    support_seconds: float
    predicted_seconds: float


class MetricsReport(BaseModel):
    """Scores of one predicted log against its ground truth."""

    video_id: str = ""
    resolution: float
    horizon: float
    accuracy: float
    macro_f1: float
    per_class: Dict[int, ClassScores]
    confusion: List[List[float]]

    def to_row(self, system: str = "") -> dict:
        """Flat CSV row (percent values, matching the results table)."""
        return {
            "video_id": self.video_id,
            "system": system,
            "accuracy": round(100.0 * self.accuracy, 4),
            "f1": round(100.0 * self.macro_f1, 4),
        }


def discretize(
    log: ActivityLog, resolution: float = DEFAULT_RESOLUTION, horizon: Optional[float] = None
) -> LabelSequence:
    """Sample the log at each step's midpoint; uncovered time is Others (8).

    A midpoint on a shared boundary belongs to the later interval.

    Raises:
        HorizonTooShort: horizon ends before the last stop
        DegenerateInput: resolution is not positive
    """
    if resolution <= 0:
        raise DegenerateInput(f"Resolution must be positive, got {resolution}")
    horizon = log.end_s if horizon is None else float(horizon)
    if horizon + _GRID_EPS < log.end_s:
        raise HorizonTooShort(
            f"Horizon {horizon} s ends before the last stop {log.end_s} s of {log.video_id}"
        )
    n = step_count(horizon, resolution)
    starts = np.arange(n) * resolution
    stops = np.minimum(starts + resolution, horizon)
    midpoints = (starts + stops) / 2.0

    labels = np.full(n, int(ActivityClass.OTHERS), dtype=np.int64)
    for interval in log.intervals:
        covered = (midpoints >= interval.start_s) & (midpoints < interval.stop_s)
        labels[covered] = int(interval.activity_class)
    return LabelSequence(resolution=resolution, horizon=horizon, labels=tuple(labels.tolist()))


def _check_aligned(gt: LabelSequence, pred: LabelSequence) -> None:
    if (
        len(gt.labels) != len(pred.labels)
        or not math.isclose(gt.resolution, pred.resolution)
        or not math.isclose(gt.horizon, pred.horizon, abs_tol=_GRID_EPS)
    ):
        raise ShapeMismatch(
            f"Sequences differ: {len(gt.labels)} steps @ {gt.resolution} s / {gt.horizon} s "
            f"vs {len(pred.labels)} steps @ {pred.resolution} s / {pred.horizon} s"
        )


def confusion(gt: LabelSequence, pred: LabelSequence) -> np.ndarray:
    """9×9 matrix; cell (i, j) is the seconds with GT=i and prediction=j."""
    _check_aligned(gt, pred)
    matrix = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=float)
    np.add.at(matrix, (gt.array, pred.array), gt.weights)
    return matrix


def interval_accuracy(gt: LabelSequence, pred: LabelSequence) -> float:
    """Fraction of time where the predicted label matches the ground truth."""
    _check_aligned(gt, pred)
    weights = gt.weights
    total = weights.sum()
    if total == 0:
        return 1.0
    return float(weights[gt.array == pred.array].sum() / total)


def _scores_from_confusion(matrix: np.ndarray) -> Dict[int, ClassScores]:
    scores: Dict[int, ClassScores] = {}
    for cls in ALL_CLASSES:
        true_positive = matrix[cls, cls]
        support = matrix[cls, :].sum()
        predicted = matrix[:, cls].sum()
        precision = true_positive / predicted if predicted > 0 else 0.0
        recall = true_positive / support if support > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        scores[cls] = ClassScores(
            precision=float(precision),
            recall=float(recall),
            f1=float(f1),
            support_seconds=float(support),
            predicted_seconds=float(predicted),
        )
    return scores


def per_class_scores(gt: LabelSequence, pred: LabelSequence) -> Dict[int, ClassScores]:
    return _scores_from_confusion(confusion(gt, pred))


def _macro(scores: Dict[int, ClassScores], classes: Iterable[int]) -> float:
    present = [
        scores[int(cls)].f1
        for cls in classes
        if scores[int(cls)].support_seconds > 0 or scores[int(cls)].predicted_seconds > 0
    ]
    return float(np.mean(present)) if present else 0.0


def macro_f1(
    gt: LabelSequence, pred: LabelSequence, classes: Optional[Iterable[int]] = None
) -> float:
    """Unweighted mean F1 over ``classes`` (default all nine).

    Classes absent from both sequences are left out of the mean; 0.0 if none
    of the requested classes occurs.
    """
    classes = ALL_CLASSES if classes is None else tuple(classes)
    if not classes:
        raise DegenerateInput("macro_f1 needs at least one class")
    return _macro(per_class_scores(gt, pred), classes)


def score(
    gt: LabelSequence,
    pred: LabelSequence,
    video_id: str = "",
    exclude_others: bool = False,
) -> MetricsReport:
    matrix = confusion(gt, pred)
    scores = _scores_from_confusion(matrix)
    classes = [c for c in ALL_CLASSES if not (exclude_others and c == int(ActivityClass.OTHERS))]
    total = matrix.sum()
    report = MetricsReport(
        video_id=video_id,
        resolution=gt.resolution,
        horizon=gt.horizon,
        accuracy=float(np.trace(matrix) / total) if total > 0 else 1.0,
        macro_f1=_macro(scores, classes),
        per_class=scores,
        confusion=matrix.tolist(),
    )
    logger.info(
        f"Scored {video_id or 'log'}: accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f}"
    )
    return report


def score_logs(
    gt: ActivityLog,
    pred: ActivityLog,
    resolution: float = DEFAULT_RESOLUTION,
    horizon: Optional[float] = None,
    exclude_others: bool = False,
) -> MetricsReport:
    """Discretize both logs on a shared horizon (default: the later end) and score."""
    horizon = max(gt.end_s, pred.end_s) if horizon is None else horizon
    return score(
        discretize(gt, resolution, horizon),
        discretize(pred, resolution, horizon),
        video_id=gt.video_id,
        exclude_others=exclude_others,
    )
