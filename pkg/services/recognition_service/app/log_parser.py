"""Parse LLM recognition output into ActivityLog.

Handles both response formats:
- Prompt A: ``start_seconds, (start_mm:ss), stop_seconds, (stop_mm:ss), class_name, class_id``
- Prompt B: ``[start (m:ss)] - [stop (m:ss)]: Class Name - Justification: text``

The mm:ss field is authoritative: when the raw-seconds field disagrees by more
than SECONDS_TOLERANCE the mm:ss value is used and a repair is recorded.
Unparseable lines (preamble, prose) are dropped and reported, never fatal.
"""
import logging
import re
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, ValidationError

from services.shared.domain import (
    CONTINUITY_TOLERANCE,
    ActivityClass,
    ActivityInterval,
    ActivityLog,
    LogSource,
    TimeStamp,
    class_from_id,
    class_from_name,
    mmss_to_seconds,
)
from services.shared.errors import (
    ClassMismatch,
    DiscontinuousLog,
    EmptyLog,
    MalformedLine,
    MalformedTimestamp,
    PipelineError,
    UnknownClassName,
)

logger = logging.getLogger(__name__)

SECONDS_TOLERANCE = 0.5

_LINE_PREFIX = re.compile(r"^\s*(?:[-*•]\s+|\d+[.)]\s+)")
_PAREN = re.compile(r"^\(\s*(.*?)\s*\)$")
_LINE_B = re.compile(
    r"^\[\s*(?P<start_s>\d+(?:\.\d+)?)\s*\(\s*(?P<start_mmss>[^)]*?)\s*\)\s*\]"
    r"\s*-\s*"
    r"\[\s*(?P<stop_s>\d+(?:\.\d+)?)\s*\(\s*(?P<stop_mmss>[^)]*?)\s*\)\s*\]"
    r"\s*:\s*(?P<name>.+?)"
    r"(?:\s+-\s+Justification\s*:\s*(?P<justification>.*))?$",
    re.IGNORECASE,
)


class LogFormat(str, Enum):
    """Response format of the recognition prompt."""

    A = "A"
    B = "B"


class Continuity(str, Enum):
    """How gaps between consecutive intervals are treated."""

    REQUIRE = "require"
    STITCH = "stitch"
    ALLOW_GAPS = "allow_gaps"


class RepairRule(str, Enum):
    """Named rules a repair can cite."""

    MMSS_AUTHORITATIVE = "mmss_authoritative"
    CLASS_FROM_ID = "class_from_id"
    CLASS_FROM_NAME = "class_from_name"
    REORDERED = "reordered"
    OVERLAP_MIDPOINT = "overlap_midpoint"
    GAP_STITCHED = "gap_stitched"


class Repair(BaseModel):
    """One change applied to the raw LLM output."""

    line_no: int
    field: str
    raw_value: str
    repaired_value: str
    rule: RepairRule


class DroppedLine(BaseModel):
    """A line that could not be parsed."""

    line_no: int
    reason: str
    text: str = ""


class ParseReport(BaseModel):
    """Parsed log plus every repair and dropped line."""

    log: ActivityLog
    repairs: List[Repair] = []
    dropped_lines: List[DroppedLine] = []

    def repairs_document(self) -> dict:
        """Sidecar JSON for the repairs and dropped lines."""
        return {
            "video_id": self.log.video_id,
            "repairs": [repair.model_dump(mode="json") for repair in self.repairs],
            "dropped_lines": [line.model_dump(mode="json") for line in self.dropped_lines],
        }


def repair_timestamp(seconds_field: float, mmss_field: TimeStamp) -> Tuple[TimeStamp, bool]:
    """Reconcile the raw-seconds field with its mm:ss rendering.

    Returns:
        (timestamp, repaired): the mm:ss value with repaired=True when the two
        differ by more than SECONDS_TOLERANCE, otherwise the seconds field.
    """
    if abs(seconds_field - mmss_field.seconds) > SECONDS_TOLERANCE:
        return mmss_field, True
    return TimeStamp(seconds=seconds_field), False


def _clean(text: str) -> str:
    text = _LINE_PREFIX.sub("", text.strip())
    return text.strip().strip("`").strip()


def _unparen(field: str) -> str:
    match = _PAREN.match(field.strip())
    return match.group(1) if match else field.strip()


def _parse_seconds(raw: str, line_no: int) -> float:
    try:
        return float(raw.strip())
    except ValueError as e:
        raise MalformedLine(f"Line {line_no}: seconds field {raw!r} is not a number") from e


def _reconcile(
    raw_seconds: str,
    raw_mmss: str,
    field: str,
    line_no: int,
    repairs: List[Repair],
) -> TimeStamp:
    seconds = _parse_seconds(raw_seconds, line_no)
    try:
        mmss = mmss_to_seconds(raw_mmss)
    except MalformedTimestamp as e:
        raise MalformedLine(f"Line {line_no}: {e.message}") from e
    timestamp, repaired = repair_timestamp(seconds, mmss)
    if repaired:
        logger.warning(
            f"Line {line_no}: {field} seconds {seconds} disagrees with {raw_mmss!r}; using {mmss.seconds}"
        )
        repairs.append(
            Repair(
                line_no=line_no,
                field=field,
                raw_value=raw_seconds.strip(),
                repaired_value=repr(timestamp.seconds),
                rule=RepairRule.MMSS_AUTHORITATIVE,
            )
        )
    return timestamp


def _build_interval(
    start: TimeStamp,
    stop: TimeStamp,
    activity: ActivityClass,
    justification: Optional[str],
    line_no: int,
) -> ActivityInterval:
    if not start.seconds < stop.seconds:
        raise MalformedLine(
            f"Line {line_no}: start {start.seconds} is not before stop {stop.seconds}"
        )
    return ActivityInterval(
        start=start, stop=stop, activity_class=activity, justification=justification
    )


def _resolve_class(
    raw_name: str, raw_id: str, line_no: int, repairs: List[Repair]
) -> ActivityClass:
    """Resolve by id, cross-checked against the name.

    A field that does not resolve is repaired from the other; two resolvable
    fields that disagree are a ClassMismatch.
    """
    by_name: Optional[ActivityClass] = None
    by_id: Optional[ActivityClass] = None
    try:
        by_name = class_from_name(raw_name)
    except UnknownClassName:
        by_name = None
    try:
        by_id = class_from_id(int(raw_id.strip()))
    except (UnknownClassName, ValueError):
        by_id = None

    if by_id is not None and by_name is not None:
        if by_id != by_name:
            raise ClassMismatch(
                f"Line {line_no}: class name {raw_name!r} ({int(by_name)}) "
                f"disagrees with id {raw_id.strip()}"
            )
        return by_id
    if by_id is not None:
        repairs.append(
            Repair(
                line_no=line_no,
                field="class_name",
                raw_value=raw_name,
                repaired_value=by_id.canonical_name,
                rule=RepairRule.CLASS_FROM_ID,
            )
        )
        return by_id
    if by_name is not None:
        repairs.append(
            Repair(
                line_no=line_no,
                field="class_id",
                raw_value=raw_id.strip(),
                repaired_value=str(int(by_name)),
                rule=RepairRule.CLASS_FROM_NAME,
            )
        )
        return by_name
    raise ClassMismatch(
        f"Line {line_no}: neither class name {raw_name!r} nor id {raw_id.strip()!r} resolves"
    )


def parse_line_a(
    text: str, line_no: int = 0, repairs: Optional[List[Repair]] = None
) -> ActivityInterval:
    """Parse one Prompt A line.

    Args:
        text: ``start_s, (m:ss), stop_s, (m:ss), class_name, class_id``
        line_no: Line number used in messages and repairs
        repairs: Optional list that receives the repairs applied to this line

    Raises:
        MalformedLine: Wrong arity, unparseable numbers or zero-length interval
        ClassMismatch: Class name and id disagree and neither is repairable
    """
    repairs = repairs if repairs is not None else []
    fields = [field.strip() for field in _clean(text).split(",")]
    if len(fields) != 6:
        raise MalformedLine(f"Line {line_no}: expected 6 comma-separated fields, got {len(fields)}")
    raw_start, raw_start_mmss, raw_stop, raw_stop_mmss, raw_name, raw_id = fields
    start = _reconcile(raw_start, _unparen(raw_start_mmss), "start", line_no, repairs)
    stop = _reconcile(raw_stop, _unparen(raw_stop_mmss), "stop", line_no, repairs)
    activity = _resolve_class(raw_name, raw_id, line_no, repairs)
    return _build_interval(start, stop, activity, None, line_no)


def parse_line_b(
    text: str, line_no: int = 0, repairs: Optional[List[Repair]] = None
) -> ActivityInterval:
    """Parse one Prompt B line; the justification is kept verbatim.

    Raises:
        MalformedLine: Line does not match the format or is zero-length
        UnknownClassName: Class name is not registered
    """
    repairs = repairs if repairs is not None else []
    match = _LINE_B.match(_clean(text))
    if not match:
        raise MalformedLine(f"Line {line_no}: does not match the Prompt B format")
    start = _reconcile(match["start_s"], match["start_mmss"], "start", line_no, repairs)
    stop = _reconcile(match["stop_s"], match["stop_mmss"], "stop", line_no, repairs)
    activity = class_from_name(match["name"])
    justification = match["justification"]
    if justification is not None:
        justification = justification.strip()
    return _build_interval(start, stop, activity, justification, line_no)


def render_line_a(interval: ActivityInterval) -> str:
    """Inverse of parse_line_a."""
    return (
        f"{_number(interval.start_s)}, ({interval.start.to_mmss()}), "
        f"{_number(interval.stop_s)}, ({interval.stop.to_mmss()}), "
        f"{interval.activity_class.canonical_name}, {int(interval.activity_class)}"
    )


def render_line_b(interval: ActivityInterval) -> str:
    """Inverse of parse_line_b."""
    line = (
        f"[{_number(interval.start_s)} ({interval.start.to_mmss()})] - "
        f"[{_number(interval.stop_s)} ({interval.stop.to_mmss()})]: "
        f"{interval.activity_class.canonical_name}"
    )
    if interval.justification is not None:
        line += f" - Justification: {interval.justification}"
    return line


def render_log(log: ActivityLog, log_format: LogFormat) -> str:
    render = render_line_a if log_format == LogFormat.A else render_line_b
    return "\n".join(render(interval) for interval in log.intervals) + "\n"


def _number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def _replace(
    interval: ActivityInterval, start: Optional[float] = None, stop: Optional[float] = None
) -> ActivityInterval:
    return ActivityInterval(
        start=TimeStamp(seconds=interval.start_s if start is None else start),
        stop=TimeStamp(seconds=interval.stop_s if stop is None else stop),
        activity_class=interval.activity_class,
        justification=interval.justification,
    )


def _resolve_overlaps(
    intervals: List[Tuple[int, ActivityInterval]], repairs: List[Repair]
) -> List[Tuple[int, ActivityInterval]]:
    """Truncate overlaps at their midpoint, earliest pair first.

    A cut moves a start forward, which can break ordering against a nested
    interval, so the list is re-sorted after every cut.
    """
    resolved = sorted(intervals, key=lambda item: item[1].start_s)
    for _ in range(4 * len(resolved) * len(resolved)):
        k = _first_overlap(resolved)
        if k is None:
            break
        line_a, first = resolved[k]
        line_b, second = resolved[k + 1]
        overlap_end = min(first.stop_s, second.stop_s)
        midpoint = (second.start_s + overlap_end) / 2.0
        logger.warning(
            f"Lines {line_a}/{line_b}: overlap [{second.start_s}, {overlap_end}) cut at {midpoint}"
        )
        repairs.append(
            Repair(
                line_no=line_a,
                field="stop",
                raw_value=repr(first.stop_s),
                repaired_value=repr(midpoint),
                rule=RepairRule.OVERLAP_MIDPOINT,
            )
        )
        repairs.append(
            Repair(
                line_no=line_b,
                field="start",
                raw_value=repr(second.start_s),
                repaired_value=repr(midpoint),
                rule=RepairRule.OVERLAP_MIDPOINT,
            )
        )
        resolved[k] = (line_a, _replace(first, stop=midpoint))
        resolved[k + 1] = (line_b, _replace(second, start=midpoint))
        resolved.sort(key=lambda item: item[1].start_s)
    return resolved


def _first_overlap(intervals: List[Tuple[int, ActivityInterval]]) -> Optional[int]:
    for k in range(len(intervals) - 1):
        if intervals[k][1].stop_s - intervals[k + 1][1].start_s > CONTINUITY_TOLERANCE:
            return k
    return None


def _apply_continuity(
    intervals: List[Tuple[int, ActivityInterval]],
    continuity: Continuity,
    repairs: List[Repair],
) -> List[Tuple[int, ActivityInterval]]:
    stitched = list(intervals)
    for k in range(len(stitched) - 1):
        line_a, first = stitched[k]
        line_b, second = stitched[k + 1]
        gap = second.start_s - first.stop_s
        if gap <= CONTINUITY_TOLERANCE:
            continue
        if continuity == Continuity.REQUIRE:
            raise DiscontinuousLog(
                f"Gap of {gap:.3f} s between line {line_a} and line {line_b}",
                detail=f"stop={first.stop_s} start={second.start_s}",
            )
        if continuity == Continuity.STITCH:
            repairs.append(
                Repair(
                    line_no=line_a,
                    field="stop",
                    raw_value=repr(first.stop_s),
                    repaired_value=repr(second.start_s),
                    rule=RepairRule.GAP_STITCHED,
                )
            )
            stitched[k] = (line_a, _replace(first, stop=second.start_s))
    return stitched


def parse_log(
    text: str,
    log_format: LogFormat,
    continuity: Continuity = Continuity.STITCH,
    video_id: str = "unknown",
    source: Optional[LogSource] = None,
) -> ParseReport:
    """Parse a full LLM response into a ParseReport.

    Steps: parse every non-blank line (dropping failures), sort by start,
    cut overlaps at their midpoint, then apply the continuity policy.

    Raises:
        EmptyLog: No line could be parsed
        DiscontinuousLog: A gap remains under Continuity.REQUIRE
    """
    log_format = LogFormat(log_format)
    continuity = Continuity(continuity)
    parse_line = parse_line_a if log_format == LogFormat.A else parse_line_b
    if source is None:
        source = LogSource.LLM_PROMPT_A if log_format == LogFormat.A else LogSource.LLM_PROMPT_B

    repairs: List[Repair] = []
    dropped: List[DroppedLine] = []
    parsed: List[Tuple[int, ActivityInterval]] = []

    for line_no, line in enumerate(text.splitlines(), start=1):
        if not _clean(line):
            continue
        line_repairs: List[Repair] = []
        try:
            interval = parse_line(line, line_no, line_repairs)
        except (PipelineError, ValidationError) as e:
            reason = e.message if isinstance(e, PipelineError) else str(e)
            logger.debug(f"Dropping line {line_no}: {reason}")
            dropped.append(DroppedLine(line_no=line_no, reason=reason, text=line.strip()))
            continue
        repairs.extend(line_repairs)
        parsed.append((line_no, interval))

    if not parsed:
        raise EmptyLog(f"No parseable activity lines in {video_id}", detail=f"{len(dropped)} dropped")

    ordered = sorted(parsed, key=lambda item: item[1].start_s)
    if ordered != parsed:
        for position, (line_no, interval) in enumerate(ordered):
            if parsed[position][0] != line_no:
                repairs.append(
                    Repair(
                        line_no=line_no,
                        field="position",
                        raw_value=str(next(i for i, p in enumerate(parsed) if p[0] == line_no)),
                        repaired_value=str(position),
                        rule=RepairRule.REORDERED,
                    )
                )

    resolved = _resolve_overlaps(ordered, repairs)
    final = _apply_continuity(resolved, continuity, repairs)

    log = ActivityLog(
        video_id=video_id,
        source=source,
        intervals=tuple(interval for _, interval in final),
        continuous=continuity != Continuity.ALLOW_GAPS,
    )
    logger.info(
        f"Parsed {video_id}: {len(log.intervals)} intervals, {len(repairs)} repairs, "
        f"{len(dropped)} dropped lines"
    )
    return ParseReport(log=log, repairs=repairs, dropped_lines=dropped)


def parse_file(
    path: Path,
    log_format: LogFormat,
    continuity: Continuity = Continuity.STITCH,
    video_id: Optional[str] = None,
) -> ParseReport:
    """Parse a UTF-8 response file; errors carry the file path as context."""
    path = Path(path)
    try:
        return parse_log(
            path.read_text(encoding="utf-8"),
            log_format,
            continuity,
            video_id=video_id or path.stem,
        )
    except PipelineError as e:
        raise e.with_context(str(path)) from None
