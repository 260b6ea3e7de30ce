"""Prompt templates for recognition (A, B) and student feedback.

Templates ship as text files under ``templates/``. Each file is a sequence of
named sections introduced by ``=== name ===`` lines; section order is the
order in which the prompt is assembled.
"""
import logging
import re
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from services.shared.errors import UnknownTemplate

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"
_SECTION_HEADER = re.compile(r"^=== (?P<name>[a-z_]+) ===$", re.MULTILINE)


class TemplateId(str, Enum):
    A = "A"
    B = "B"
    STUDENT_SUPPORT = "student_support"


TEMPLATE_FILES: Dict[TemplateId, str] = {
    TemplateId.A: "prompt_a.txt",
    TemplateId.B: "prompt_b.txt",
    TemplateId.STUDENT_SUPPORT: "student_support.txt",
}


class PromptTemplate(BaseModel):
    """Ordered, named text blocks of one prompt."""

    model_config = ConfigDict(frozen=True)

    id: TemplateId
    sections: Tuple[Tuple[str, str], ...]

    @property
    def section_names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.sections)

    def section(self, name: str) -> str:
        for section_name, text in self.sections:
            if section_name == name:
                return text
        raise UnknownTemplate(f"Template {self.id.value} has no section {name!r}")

    def render(self, overrides: Optional[Mapping[str, str]] = None) -> str:
        overrides = dict(overrides or {})
        unknown = set(overrides) - set(self.section_names)
        if unknown:
            raise UnknownTemplate(
                f"Template {self.id.value} has no section(s) {sorted(unknown)}",
                detail=", ".join(self.section_names),
            )
        return "\n\n".join(overrides.get(name, text) for name, text in self.sections)


def _resolve_id(template_id: str) -> TemplateId:
    try:
        return TemplateId(template_id)
    except ValueError as e:
        raise UnknownTemplate(
            f"Unknown prompt template: {template_id!r}",
            detail=", ".join(t.value for t in TemplateId),
        ) from e


def parse_template(template_id: TemplateId, text: str) -> PromptTemplate:
    headers = list(_SECTION_HEADER.finditer(text))
    sections = []
    for position, header in enumerate(headers):
        end = headers[position + 1].start() if position + 1 < len(headers) else len(text)
        sections.append((header["name"], text[header.end() : end].strip("\n")))
    return PromptTemplate(id=template_id, sections=tuple(sections))


@lru_cache(maxsize=None)
def load_template(template_id: str, template_dir: Path = TEMPLATE_DIR) -> PromptTemplate:
    """Load a shipped template by id.

    Raises:
        UnknownTemplate: id is not A, B or student_support
    """
    resolved = _resolve_id(template_id)
    path = Path(template_dir) / TEMPLATE_FILES[resolved]
    return parse_template(resolved, path.read_text(encoding="utf-8"))


def assemble_prompt(
    template_id: str,
    video_ref: Optional[str] = None,
    overrides: Optional[Mapping[str, str]] = None,
) -> str:
    """Assemble a prompt: template sections, overrides applied, video reference appended.

    Output is deterministic for identical arguments.
    """
    template = load_template(_resolve_id(template_id).value)
    text = template.render(overrides)
    if video_ref:
        text += f"\n\nVideo: {video_ref}"
    logger.debug(f"Assembled prompt {template.id.value} ({len(text)} chars)")
    return text + "\n"
