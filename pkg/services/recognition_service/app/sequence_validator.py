"""Validate activity logs against the golden-rule procedure grammar.

Business Rules (per round, class 8 is transparent everywhere):
1. Classes follow {0} < {1} < {2} < {3} < {4,5} < {6} < {7}      → OrderInversion
2. Positioning (6) only after all cleanup (4, 5)                  → PositioningBeforeCleanup (warning)
3. Auscultation (7) is the last clinical action                   → AuscultationNotLast
4. Cleanup follows 4 → 5, with at most one extra 4 after 5        → CleanupOrder
5. Every required class (all but 6) appears                       → MissingStep
6. The log holds model.rounds rounds                              → MissingRound / RoundCountMismatch

Violations are data: validation never aborts early.
"""
import logging
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, computed_field

from services.shared.domain import ActivityClass, ActivityLog, ProcedureModel
from services.shared.errors import NoRoundsFound

logger = logging.getLogger(__name__)


class ViolationKind(str, Enum):
    """Kinds of grammar violation."""

    ORDER_INVERSION = "OrderInversion"
    POSITIONING_BEFORE_CLEANUP = "PositioningBeforeCleanup"
    AUSCULTATION_NOT_LAST = "AuscultationNotLast"
    CLEANUP_ORDER = "CleanupOrder"
    MISSING_STEP = "MissingStep"
    MISSING_ROUND = "MissingRound"
    ROUND_COUNT_MISMATCH = "RoundCountMismatch"


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


SEVERITIES: Dict[ViolationKind, Severity] = {
    ViolationKind.POSITIONING_BEFORE_CLEANUP: Severity.WARNING,
}


class RoundRange(BaseModel):
    """Half-open range of interval indices [start_index, stop_index)."""

    start_index: int
    stop_index: int


class Violation(BaseModel):
    kind: ViolationKind
    interval_index: Optional[int] = None
    message: str
    round_index: Optional[int] = None
    severity: Severity = Severity.ERROR


class ValidationReport(BaseModel):
    """Round segmentation plus every violation found."""

    video_id: str = ""
    rounds: List[RoundRange] = []
    violations: List[Violation] = []

    @computed_field
    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def error_count(self) -> int:
        return sum(1 for v in self.violations if v.severity == Severity.ERROR)


def segment_rounds(log: ActivityLog, model: Optional[ProcedureModel] = None) -> List[RoundRange]:
    """Split a sorted log into procedure rounds.

    Round 1 starts at the first non-filler interval. A later opening-class (0)
    interval starts a new round when the interval right before it is the
    terminal class (7) or filler (8) and the open round already progressed
    past preparation. Each round ends at its last non-filler interval, so
    leading/trailing filler belongs to no round.

    Raises:
        NoRoundsFound: The log holds no opening-class interval
    """
    model = model or ProcedureModel.golden_rule()
    classes = [interval.activity_class for interval in log.intervals]
    if model.opening_class not in classes:
        raise NoRoundsFound(f"No {model.opening_class.canonical_name} interval in {log.video_id}")

    boundaries = (model.terminal_class, model.filler_class)
    starts: List[int] = []
    progressed = False
    for index, activity in enumerate(classes):
        if activity == model.filler_class:
            continue
        if not starts:
            starts.append(index)
            progressed = activity != model.opening_class
            continue
        if activity == model.opening_class and progressed and classes[index - 1] in boundaries:
            starts.append(index)
            progressed = False
            continue
        if activity != model.opening_class:
            progressed = True

    rounds: List[RoundRange] = []
    for position, start in enumerate(starts):
        limit = starts[position + 1] if position + 1 < len(starts) else len(classes)
        last = max(i for i in range(start, limit) if classes[i] != model.filler_class)
        rounds.append(RoundRange(start_index=start, stop_index=last + 1))
    return rounds


def _violation(
    kind: ViolationKind,
    message: str,
    interval_index: Optional[int] = None,
    round_index: Optional[int] = None,
) -> Violation:
    return Violation(
        kind=kind,
        interval_index=interval_index,
        message=message,
        round_index=round_index,
        severity=SEVERITIES.get(kind, Severity.ERROR),
    )


def _check_round(
    steps: List[Tuple[int, ActivityClass]], model: ProcedureModel, round_index: int
) -> List[Violation]:
    """Apply rules 1-5 to the clinical (non-filler) steps of one round."""
    violations: List[Violation] = []
    ranks = model.step_ranks()
    cleanup = model.cleanup_classes
    optional = model.optional_classes
    terminal = model.terminal_class
    label = f"round {round_index + 1}"

    # Rule 1: rank inversions; 6-vs-cleanup and anything-vs-7 belong to rules 2/3
    for position, (index, activity) in enumerate(steps):
        if activity == terminal:
            continue
        earlier = [
            ranks[previous]
            for _, previous in steps[:position]
            if previous != terminal
            and not (activity in cleanup and previous in optional)
            and not (activity in optional and previous in cleanup)
        ]
        if earlier and max(earlier) > ranks[activity]:
            violations.append(
                _violation(
                    ViolationKind.ORDER_INVERSION,
                    f"{activity.canonical_name} ({int(activity)}) occurs after a later step in {label}",
                    index,
                    round_index,
                )
            )

    # Rule 2: positioning before cleanup is finished
    for position, (index, activity) in enumerate(steps):
        if activity in optional and any(later in cleanup for _, later in steps[position + 1 :]):
            violations.append(
                _violation(
                    ViolationKind.POSITIONING_BEFORE_CLEANUP,
                    f"{activity.canonical_name} ({int(activity)}) precedes cleanup in {label}",
                    index,
                    round_index,
                )
            )

    # Rule 3: auscultation must be last
    for position, (index, activity) in enumerate(steps):
        if activity == terminal and any(later != terminal for _, later in steps[position + 1 :]):
            violations.append(
                _violation(
                    ViolationKind.AUSCULTATION_NOT_LAST,
                    f"{activity.canonical_name} ({int(activity)}) is followed by other steps in {label}",
                    index,
                    round_index,
                )
            )

    # Rule 4: cleanup pattern must be a subsequence of 4 -> 5 -> 4
    pattern: List[Tuple[int, ActivityClass]] = []
    for index, activity in steps:
        if activity in cleanup and (not pattern or pattern[-1][1] != activity):
            pattern.append((index, activity))
    allowed = [
        model.recurring_class,
        *sorted(cleanup - {model.recurring_class}),
        model.recurring_class,
    ]
    cursor = 0
    for index, activity in pattern:
        while cursor < len(allowed) and allowed[cursor] != activity:
            cursor += 1
        if cursor == len(allowed):
            violations.append(
                _violation(
                    ViolationKind.CLEANUP_ORDER,
                    f"Unexpected repeat of {activity.canonical_name} ({int(activity)}) in {label}",
                    index,
                    round_index,
                )
            )
            break
        cursor += 1

    # Rule 5: required steps present
    present = {activity for _, activity in steps}
    for missing in sorted(model.required_classes - present):
        violations.append(
            _violation(
                ViolationKind.MISSING_STEP,
                f"{missing.canonical_name} ({int(missing)}) missing from {label}",
                None,
                round_index,
            )
        )
    return violations


def validate(log: ActivityLog, model: Optional[ProcedureModel] = None) -> ValidationReport:
    """Validate a log against the procedure grammar.

    Returns:
        ValidationReport; ``ok`` is True iff no violations were found
    """
    model = model or ProcedureModel.golden_rule()
    try:
        rounds = segment_rounds(log, model)
    except NoRoundsFound as e:
        logger.info(f"{log.video_id}: {e.message}")
        rounds = []

    violations: List[Violation] = []
    for round_index, round_range in enumerate(rounds):
        steps = [
            (index, log.intervals[index].activity_class)
            for index in range(round_range.start_index, round_range.stop_index)
            if log.intervals[index].activity_class != model.filler_class
        ]
        violations.extend(_check_round(steps, model, round_index))

    # Rule 6: round count
    if len(rounds) < model.rounds:
        violations.append(
            _violation(
                ViolationKind.MISSING_ROUND,
                f"Found {len(rounds)} rounds, expected {model.rounds}",
            )
        )
    elif len(rounds) > model.rounds:
        violations.append(
            _violation(
                ViolationKind.ROUND_COUNT_MISMATCH,
                f"Found {len(rounds)} rounds, expected {model.rounds}",
            )
        )

    report = ValidationReport(video_id=log.video_id, rounds=rounds, violations=violations)
    logger.info(
        f"Validated {log.video_id}: {len(rounds)} rounds, {len(violations)} violations, ok={report.ok}"
    )
    return report
