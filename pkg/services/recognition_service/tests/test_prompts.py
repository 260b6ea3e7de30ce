"""Tests for prompt template assembly."""
import pytest

from services.recognition_service.app.prompts import TemplateId, assemble_prompt, load_template
from services.shared.errors import UnknownTemplate

GOLDEN_RULE = "THE GOLDEN RULE: CORE PROCEDURAL LOGIC"
BOUNDARIES = "PHASE-BASED EVENT BOUNDARY DEFINITIONS"


class TestAssemblePrompt:
    def test_prompt_a_has_procedure_description(self):
        prompt = assemble_prompt("A")
        assert GOLDEN_RULE in prompt
        assert BOUNDARIES in prompt
        assert "start_seconds, (start_mm:ss), stop_seconds, (stop_mm:ss), class_name, class_id" in prompt

    def test_prompt_b_is_video_only_without_golden_rule(self):
        prompt = assemble_prompt("B")
        assert "VIDEO ONLY ANALYSIS" in prompt
        assert "Key Procedural Logic and Heuristics" in prompt
        assert GOLDEN_RULE not in prompt
        assert BOUNDARIES not in prompt

    def test_unknown_id(self):
        with pytest.raises(UnknownTemplate):
            assemble_prompt("C")

    def test_deterministic(self):
        first = assemble_prompt("A", video_ref="videos/N03T1.mp4")
        second = assemble_prompt("A", video_ref="videos/N03T1.mp4")
        assert first.encode("utf-8") == second.encode("utf-8")

    def test_video_reference_appended(self):
        prompt = assemble_prompt("B", video_ref="videos/S04T2.mp4")
        assert prompt.rstrip().endswith("Video: videos/S04T2.mp4")

    def test_override_replaces_section(self):
        prompt = assemble_prompt("A", overrides={"roles": "CUSTOM ROLE"})
        assert prompt.startswith("CUSTOM ROLE")
        assert "GT REPLICATION" not in prompt
        assert GOLDEN_RULE in prompt

    def test_override_of_missing_section_rejected(self):
        with pytest.raises(UnknownTemplate):
            assemble_prompt("B", overrides={"procedure_description": "x"})


class TestTemplates:
    def test_section_order(self):
        assert load_template("A").section_names == (
            "roles",
            "objective",
            "procedure_description",
            "activity_description",
            "output",
        )
        assert "procedure_description" not in load_template("B").section_names

    def test_student_support_requirement_lines(self):
        template = load_template(TemplateId.STUDENT_SUPPORT.value)
        text = template.render()
        assert "1. Who the model thinks performed the activity (student or nurse)." in text
        assert "2. What activity does the student perform well?" in text
        assert "3. What can student do to improve their performance?" in text
        assert "don't state any features in the report" in template.section("constraints")
