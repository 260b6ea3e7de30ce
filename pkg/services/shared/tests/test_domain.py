"""Tests for the shared domain types.

Covers:
- class name lookup (canonical names, synonyms, rejection)
- mm:ss parsing and rendering
- interval/log invariants and canonical JSON
- the golden-rule procedure grammar
"""
import pytest
from pydantic import ValidationError

from services.shared.domain import (
    ActivityClass,
    ActivityInterval,
    ActivityLog,
    LogSource,
    PhaseGroup,
    ProcedureModel,
    TimeStamp,
    class_from_id,
    class_from_name,
    mmss_to_seconds,
)
from services.shared.errors import MalformedTimestamp, UnknownClassName

# Test constants
AUSCULTATION_ID = 7
OTHERS_ID = 8
SUCTIONING_ID = 2


class TestClassFromName:
    """Name and synonym resolution."""

    def test_canonical_name(self):
        """Canonical names resolve to their id."""
        assert class_from_name("Auscultation") == AUSCULTATION_ID

    def test_lowercase_others(self):
        """Lookup is case-insensitive."""
        assert class_from_name("others") == OTHERS_ID

    def test_synonym_phlegm_suctioning(self):
        """Registered synonym spellings resolve."""
        assert class_from_name("Phlegm suctioning") == SUCTIONING_ID
        assert class_from_name("Temporal removal of an artificial airway") == 1
        assert class_from_name("  refitting THE airway ") == 3

    def test_ambiguous_fragment_rejected(self):
        """A fragment that is not a registered synonym is rejected."""
        with pytest.raises(UnknownClassName):
            class_from_name("Suctioning")

    def test_all_canonical_names_round_trip(self):
        """Every member resolves from its own canonical name."""
        for activity in ActivityClass:
            assert class_from_name(activity.canonical_name) is activity

    def test_nine_bijective_members(self):
        """Exactly nine classes with ids 0..8."""
        assert [int(a) for a in ActivityClass] == list(range(9))
        assert len({a.canonical_name for a in ActivityClass}) == 9

    def test_class_from_id_rejects_out_of_range(self):
        with pytest.raises(UnknownClassName):
            class_from_id(9)


class TestTimeStamp:
    """mm:ss handling."""

    @pytest.mark.parametrize(
        ("text", "seconds"),
        [("1:23", 83.0), ("0:00", 0.0), ("10:05", 605.0), ("123:59", 7439.0)],
    )
    def test_mmss_to_seconds(self, text, seconds):
        assert mmss_to_seconds(text).seconds == seconds

    @pytest.mark.parametrize("text", ["1:60", "1:5", "83", "a:bc", "", "-1:00", "1:23:45"])
    def test_malformed(self, text):
        with pytest.raises(MalformedTimestamp):
            mmss_to_seconds(text)

    @pytest.mark.parametrize(
        ("text", "normalized"), [("1:23", "1:23"), ("01:05", "1:05"), ("0:00", "0:00")]
    )
    def test_round_trip_normalizes(self, text, normalized):
        """render(mmss_to_seconds(t)) == normalized t."""
        assert mmss_to_seconds(text).to_mmss() == normalized

    def test_rejects_negative_and_non_finite(self):
        with pytest.raises(ValidationError):
            TimeStamp(seconds=-1.0)
        with pytest.raises(ValidationError):
            TimeStamp(seconds=float("inf"))


class TestActivityLog:
    """Interval and log invariants."""

    def test_interval_requires_start_before_stop(self):
        with pytest.raises(ValidationError):
            ActivityInterval.of(5.0, 5.0, 8)

    def test_unsorted_intervals_rejected(self):
        with pytest.raises(ValidationError):
            ActivityLog(
                video_id="v",
                intervals=(ActivityInterval.of(5, 6, 0), ActivityInterval.of(0, 5, 8)),
            )

    def test_continuous_flag_enforces_internal_continuity(self):
        """Gaps are rejected when continuous is set; first start need not be 0."""
        ActivityLog(
            video_id="v",
            continuous=True,
            intervals=(ActivityInterval.of(3, 5, 0), ActivityInterval.of(5, 9, 1)),
        )
        with pytest.raises(ValidationError):
            ActivityLog(
                video_id="v",
                continuous=True,
                intervals=(ActivityInterval.of(0, 4, 0), ActivityInterval.of(5, 9, 1)),
            )

    def test_continuity_tolerance(self):
        log = ActivityLog(
            video_id="v",
            continuous=True,
            intervals=(ActivityInterval.of(0, 4, 0), ActivityInterval.of(4 + 1e-10, 9, 1)),
        )
        assert log.is_continuous()

    def test_canonical_json_round_trip(self):
        log = ActivityLog(
            video_id="N03T1",
            source=LogSource.LLM_PROMPT_B,
            intervals=(
                ActivityInterval.of(0, 41, 0, "hands at supplies"),
                ActivityInterval.of(41, 45, 1),
            ),
            continuous=True,
        )
        document = log.to_canonical_dict()
        assert set(document) >= {"video_id", "source", "intervals"}
        assert document["intervals"][0] == {
            "start_s": 0.0,
            "stop_s": 41.0,
            "class_id": 0,
            "justification": "hands at supplies",
        }
        assert ActivityLog.from_canonical_dict(document) == log

    def test_class_durations(self):
        log = ActivityLog(
            video_id="v",
            intervals=(
                ActivityInterval.of(0, 2, 0),
                ActivityInterval.of(2, 3, 8),
                ActivityInterval.of(3, 6, 0),
            ),
        )
        assert log.class_durations() == {ActivityClass(0): 5.0, ActivityClass(8): 1.0}
        assert log.total_duration() == 6.0


class TestProcedureModel:
    """Golden-rule grammar."""

    def test_covers_classes_zero_to_seven_once(self):
        model = ProcedureModel.golden_rule()
        covered = [int(a) for phase in model.phases for a in phase.classes]
        assert sorted(covered) == list(range(8))
        assert model.rounds == 2
        assert model.terminal_class == AUSCULTATION_ID
        assert model.optional_classes == frozenset({ActivityClass.POSITIONING})

    def test_cleanup_shares_rank(self):
        ranks = ProcedureModel.golden_rule().step_ranks()
        assert ranks[ActivityClass(4)] == ranks[ActivityClass(5)]
        assert ranks[ActivityClass(1)] < ranks[ActivityClass(2)] < ranks[ActivityClass(3)]
        assert ranks[ActivityClass(5)] < ranks[ActivityClass(6)] < ranks[ActivityClass(7)]

    def test_duplicate_class_rejected(self):
        with pytest.raises(ValidationError):
            ProcedureModel(
                phases=(
                    PhaseGroup(name="A", classes=(ActivityClass(0), ActivityClass(1))),
                    PhaseGroup(name="B", classes=tuple(ActivityClass(i) for i in range(1, 8))),
                )
            )
