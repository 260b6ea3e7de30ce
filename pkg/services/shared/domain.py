"""Domain types shared by every pipeline service.

Defines:
- ActivityClass: the nine endotracheal-suctioning labels (0-8)
- TimeStamp: non-negative real seconds with mm:ss rendering/parsing
- ActivityInterval / ActivityLog: timestamped, class-labelled intervals of one video
- ProcedureModel: the golden-rule phase grammar used by the sequence validator

All models are frozen after construction and safe to share across threads.
"""
import json
import math
import re
from enum import Enum, IntEnum
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DiscontinuousLog, MalformedTimestamp, UnknownClassName

CONTINUITY_TOLERANCE = 1e-9  # seconds
SYNONYMS_PATH = Path(__file__).parent / "data" / "activity_classes.json"

_MMSS_PATTERN = re.compile(r"^\s*(\d+):([0-5]\d)\s*$")
_NAME_STRIP = " \t\"'`*[]().:;,"


class ActivityClass(IntEnum):
    """The nine activity labels of the suctioning procedure."""

    CATHETER_PREPARATION = 0
    AIRWAY_REMOVAL = 1
    PHLEGM_SUCTIONING = 2
    AIRWAY_REFITTING = 3
    CATHETER_DISINFECTION = 4
    GLOVE_DISCARD = 5
    POSITIONING = 6
    AUSCULTATION = 7
    OTHERS = 8

    @property
    def canonical_name(self) -> str:
        return CANONICAL_NAMES[self]


CANONICAL_NAMES: Dict[ActivityClass, str] = {
    ActivityClass.CATHETER_PREPARATION: "Catheter preparation",
    ActivityClass.AIRWAY_REMOVAL: "Temporal removal of the artificial airway",
    ActivityClass.PHLEGM_SUCTIONING: "Suctioning phlegm",
    ActivityClass.AIRWAY_REFITTING: "Refitting the artificial airway",
    ActivityClass.CATHETER_DISINFECTION: "Catheter disinfection",
    ActivityClass.GLOVE_DISCARD: "Discarding gloves",
    ActivityClass.POSITIONING: "Positioning",
    ActivityClass.AUSCULTATION: "Auscultation",
    ActivityClass.OTHERS: "Others",
}


def normalize_name(name: str) -> str:
    """Casefold, trim decoration and collapse inner whitespace."""
    return " ".join(name.strip(_NAME_STRIP).casefold().split())


@lru_cache(maxsize=8)
def load_synonym_table(path: Path = SYNONYMS_PATH) -> Dict[str, ActivityClass]:
    """Load the data-driven name table (canonical names + synonyms).

    Args:
        path: JSON file with ``{"classes": [{"id", "name", "synonyms"}]}``

    Returns:
        Mapping from normalized name to ActivityClass
    """
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    table: Dict[str, ActivityClass] = {}
    for entry in document["classes"]:
        activity = ActivityClass(int(entry["id"]))
        for name in [entry["name"], *entry.get("synonyms", [])]:
            table[normalize_name(name)] = activity
    # canonical names always resolve, whatever the file says
    for activity, name in CANONICAL_NAMES.items():
        table.setdefault(normalize_name(name), activity)
    return table


def class_from_name(name: str, synonyms_path: Path = SYNONYMS_PATH) -> ActivityClass:
    """Resolve a class name or registered synonym, case-insensitively.

    Raises:
        UnknownClassName: If the name matches no canonical name or synonym
    """
    table = load_synonym_table(synonyms_path)
    key = normalize_name(name)
    if key not in table:
        raise UnknownClassName(f"Unknown activity class name: {name!r}", detail=key)
    return table[key]


def class_from_id(value: int) -> ActivityClass:
    """Resolve a numeric class id (0-8)."""
    try:
        return ActivityClass(int(value))
    except (TypeError, ValueError) as e:
        raise UnknownClassName(f"Unknown activity class id: {value!r}") from e


class TimeStamp(BaseModel):
    """A point in video time, in seconds."""

    model_config = ConfigDict(frozen=True)

    seconds: float = Field(..., ge=0.0, description="Seconds from the start of the video")

    @field_validator("seconds")
    @classmethod
    def validate_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("TimeStamp must be finite")
        return v

    @classmethod
    def from_mmss(cls, text: str) -> "TimeStamp":
        return mmss_to_seconds(text)

    def to_mmss(self) -> str:
        """Render as ``m:ss`` (whole seconds, zero-padded)."""
        minutes, secs = divmod(int(round(self.seconds)), 60)
        return f"{minutes}:{secs:02d}"


def mmss_to_seconds(text: str) -> TimeStamp:
    """Parse ``m+:ss`` (ss in 00..59) into seconds.

    Raises:
        MalformedTimestamp: If text does not match the format
    """
    match = _MMSS_PATTERN.match(text)
    if not match:
        raise MalformedTimestamp(f"Malformed mm:ss timestamp: {text!r}")
    minutes, secs = int(match.group(1)), int(match.group(2))
    return TimeStamp(seconds=float(60 * minutes + secs))


class ActivityInterval(BaseModel):
    """One labelled, half-open span [start, stop) of video time."""

    model_config = ConfigDict(frozen=True)

    start: TimeStamp
    stop: TimeStamp
    activity_class: ActivityClass
    justification: Optional[str] = None

    @model_validator(mode="after")
    def validate_order(self) -> "ActivityInterval":
        if not self.start.seconds < self.stop.seconds:
            raise ValueError(
                f"Interval start {self.start.seconds} must be before stop {self.stop.seconds}"
            )
        return self

    @classmethod
    def of(
        cls,
        start_s: float,
        stop_s: float,
        activity_class: int,
        justification: Optional[str] = None,
    ) -> "ActivityInterval":
        return cls(
            start=TimeStamp(seconds=start_s),
            stop=TimeStamp(seconds=stop_s),
            activity_class=ActivityClass(activity_class),
            justification=justification,
        )

    @property
    def start_s(self) -> float:
        return self.start.seconds

    @property
    def stop_s(self) -> float:
        return self.stop.seconds

    @property
    def duration(self) -> float:
        return self.stop.seconds - self.start.seconds


class LogSource(str, Enum):
    """Where an activity log came from."""

    GROUND_TRUTH = "ground_truth"
    LLM_PROMPT_A = "llm_prompt_a"
    LLM_PROMPT_B = "llm_prompt_b"
    BASELINE = "baseline"


class ActivityLog(BaseModel):
    """Ordered activity intervals for one video.

    With ``continuous`` set, each stop must equal the next start (within
    CONTINUITY_TOLERANCE); the first interval need not start at 0.
    """

    model_config = ConfigDict(frozen=True)

    video_id: str
    intervals: Tuple[ActivityInterval, ...] = ()
    source: LogSource = LogSource.GROUND_TRUTH
    continuous: bool = False

    @model_validator(mode="after")
    def validate_ordering(self) -> "ActivityLog":
        starts = [interval.start_s for interval in self.intervals]
        if starts != sorted(starts):
            raise ValueError("Intervals must be sorted by start")
        if self.continuous:
            gap = first_discontinuity(self.intervals)
            if gap is not None:
                index, stop, start = gap
                raise DiscontinuousLog(
                    f"Interval {index} stops at {stop} but interval {index + 1} starts at {start}"
                )
        return self

    def is_continuous(self) -> bool:
        return first_discontinuity(self.intervals) is None

    @property
    def end_s(self) -> float:
        return self.intervals[-1].stop_s if self.intervals else 0.0

    def total_duration(self) -> float:
        return sum(interval.duration for interval in self.intervals)

    def class_durations(self) -> Dict[ActivityClass, float]:
        durations: Dict[ActivityClass, float] = {}
        for interval in self.intervals:
            durations[interval.activity_class] = (
                durations.get(interval.activity_class, 0.0) + interval.duration
            )
        return durations

    def to_canonical_dict(self) -> dict:
        """Canonical JSON document: video_id, source, continuous, intervals."""
        return {
            "video_id": self.video_id,
            "source": self.source.value,
            "continuous": self.continuous,
            "intervals": [
                {
                    "start_s": interval.start_s,
                    "stop_s": interval.stop_s,
                    "class_id": int(interval.activity_class),
                    "justification": interval.justification,
                }
                for interval in self.intervals
            ],
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_canonical_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_canonical_dict(cls, document: dict) -> "ActivityLog":
        return cls(
            video_id=document["video_id"],
            source=LogSource(document.get("source", LogSource.GROUND_TRUTH.value)),
            continuous=bool(document.get("continuous", False)),
            intervals=tuple(
                ActivityInterval.of(
                    float(item["start_s"]),
                    float(item["stop_s"]),
                    int(item["class_id"]),
                    item.get("justification"),
                )
                for item in document["intervals"]
            ),
        )

    @classmethod
    def read_json(cls, path: Path) -> "ActivityLog":
        return cls.from_canonical_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def write_json(self, path: Path) -> None:
        Path(path).write_text(self.to_json_text(), encoding="utf-8")


def first_discontinuity(
    intervals: Tuple[ActivityInterval, ...],
) -> Optional[Tuple[int, float, float]]:
    """Return (index, stop, next_start) of the first break in continuity, if any."""
    for index in range(len(intervals) - 1):
        stop = intervals[index].stop_s
        start = intervals[index + 1].start_s
        if abs(stop - start) > CONTINUITY_TOLERANCE:
            return index, stop, start
    return None


class PhaseGroup(BaseModel):
    """A named phase of the procedure.

    ``ordered`` groups require their classes in listed order; unordered groups
    (cleanup) share one rank and are checked by a dedicated pattern rule.
    """

    model_config = ConfigDict(frozen=True)

    name: str
    classes: Tuple[ActivityClass, ...]
    ordered: bool = True


class ProcedureModel(BaseModel):
    """Golden-rule grammar of one procedure round."""

    model_config = ConfigDict(frozen=True)

    phases: Tuple[PhaseGroup, ...]
    optional_classes: FrozenSet[ActivityClass] = frozenset({ActivityClass.POSITIONING})
    rounds: int = Field(2, ge=1)
    terminal_class: ActivityClass = ActivityClass.AUSCULTATION
    recurring_class: ActivityClass = ActivityClass.CATHETER_DISINFECTION
    filler_class: ActivityClass = ActivityClass.OTHERS

    @model_validator(mode="after")
    def validate_coverage(self) -> "ProcedureModel":
        seen = [activity for phase in self.phases for activity in phase.classes]
        expected = sorted(a for a in ActivityClass if a != self.filler_class)
        if sorted(seen) != expected:
            raise ValueError(
                f"Phase groups must cover classes {[int(a) for a in expected]} exactly once, "
                f"got {[int(a) for a in seen]}"
            )
        return self

    @classmethod
    def golden_rule(cls, rounds: int = 2) -> "ProcedureModel":
        """Preparation [0], Intervention [1,2,3], Cleanup [4,5], Post-procedure [6,7]."""
        return cls(
            phases=(
                PhaseGroup(name="Preparation", classes=(ActivityClass.CATHETER_PREPARATION,)),
                PhaseGroup(
                    name="Intervention",
                    classes=(
                        ActivityClass.AIRWAY_REMOVAL,
                        ActivityClass.PHLEGM_SUCTIONING,
                        ActivityClass.AIRWAY_REFITTING,
                    ),
                ),
                PhaseGroup(
                    name="Cleanup",
                    classes=(ActivityClass.CATHETER_DISINFECTION, ActivityClass.GLOVE_DISCARD),
                    ordered=False,
                ),
                PhaseGroup(
                    name="Post-procedure",
                    classes=(ActivityClass.POSITIONING, ActivityClass.AUSCULTATION),
                ),
            ),
            rounds=rounds,
        )

    @property
    def opening_class(self) -> ActivityClass:
        return self.phases[0].classes[0]

    @property
    def required_classes(self) -> FrozenSet[ActivityClass]:
        return frozenset(
            activity
            for phase in self.phases
            for activity in phase.classes
            if activity not in self.optional_classes
        )

    @property
    def cleanup_classes(self) -> FrozenSet[ActivityClass]:
        return frozenset(
            activity for phase in self.phases if not phase.ordered for activity in phase.classes
        )

    def step_ranks(self) -> Dict[ActivityClass, int]:
        """Rank of every grammar class; unordered groups share a rank."""
        ranks: Dict[ActivityClass, int] = {}
        rank = 0
        for phase in self.phases:
            if phase.ordered:
                for activity in phase.classes:
                    ranks[activity] = rank
                    rank += 1
            else:
                for activity in phase.classes:
                    ranks[activity] = rank
                rank += 1
        return ranks

    def phase_of(self, activity: ActivityClass) -> Optional[str]:
        for phase in self.phases:
            if activity in phase.classes:
                return phase.name
        return None
