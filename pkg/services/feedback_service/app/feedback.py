"""Student feedback reports built from anomaly verdicts and Shapley attributions.

Reports never name raw features. Every sentence that makes a claim about the
student's movement records the features it came from; the alignment bundle
refuses to serialize a report with a claim that has no source.
"""
import json
import logging
import re
import warnings
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field

from services.feedback_service.app.features import AXES, STATISTICS
from services.feedback_service.app.isolation_forest import DEFAULT_THRESHOLD, classify
from services.feedback_service.app.shapley import AttributionVector
from services.recognition_service.app.gateway import GatewayMode, LLMGateway
from services.recognition_service.app.prompts import TemplateId, load_template
from services.shared.errors import (
    MalformedResponse,
    MissingLexiconEntry,
    PipelineError,
    PromptAssemblyWarning,
    UnmappedClaim,
)

logger = logging.getLogger(__name__)

LEXICON_PATH = Path(__file__).parent / "data" / "movement_lexicon.json"
DEFAULT_TOP_K = 5
MAX_IMPROVEMENT_GROUPS = 2
MAX_STRENGTH_GROUPS = 2

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")
_NUMBERED_SECTION = re.compile(r"^\s*(?:#+\s*|\*\*)?([1-3])[.)]", re.MULTILINE)
# Longest statistic names first so "mean_abs_diff" is not read as "mean"
_STATS_BY_LENGTH = sorted(STATISTICS, key=len, reverse=True)


class Rendering(str, Enum):
    TEMPLATE = "template"
    LLM = "llm"


class Section(str, Enum):
    STRENGTHS = "strengths"
    IMPROVEMENTS = "improvements"


class MovementGroup(BaseModel, frozen=True):
    """Body part, axis and statistic family a feature describes."""

    part: str
    axis: str
    family: str

    @property
    def key(self) -> str:
        return f"{self.part}:{self.axis}:{self.family}"


class GroupPhrases(BaseModel):
    improve: str
    strength: str
    keywords: List[str] = Field(default_factory=list)


class PartEntry(BaseModel):
    phrase: str
    keywords: List[str]


class MovementLexicon(BaseModel):
    """Controlled vocabulary from features to body-movement phrases."""

    joints: Dict[str, str]
    parts: Dict[str, PartEntry]
    families: Dict[str, str]
    phrases: Dict[str, GroupPhrases]
    overrides: Dict[str, GroupPhrases] = Field(default_factory=dict)
    encouragement: List[str]
    closing: str

    def group_of(self, feature_name: str) -> MovementGroup:
        """Raises MissingLexiconEntry when any part of the name is unmapped."""
        for stat in _STATS_BY_LENGTH:
            suffix = f"_{stat}"
            if not feature_name.endswith(suffix):
                continue
            channel = feature_name[: -len(suffix)]
            joint, _, axis = channel.rpartition("_")
            if axis not in AXES or joint not in self.joints or stat not in self.families:
                break
            return MovementGroup(part=self.joints[joint], axis=axis, family=self.families[stat])
        raise MissingLexiconEntry(f"No movement phrase for feature {feature_name!r}")

    def phrases_for(self, group: MovementGroup) -> GroupPhrases:
        if group.key in self.overrides:
            return self.overrides[group.key]
        template = self.phrases.get(f"{group.axis}:{group.family}")
        part = self.parts.get(group.part)
        if template is None or part is None:
            raise MissingLexiconEntry(f"No movement phrase for group {group.key}")
        return GroupPhrases(
            improve=template.improve.format(part=part.phrase),
            strength=template.strength.format(part=part.phrase),
            keywords=template.keywords,
        )

    def claim_matches(self, sentence: str, group: MovementGroup) -> bool:
        text = sentence.lower()
        override = self.overrides.get(group.key)
        if override and any(keyword in text for keyword in override.keywords):
            return True
        part = self.parts.get(group.part)
        template = self.phrases.get(f"{group.axis}:{group.family}")
        if part is None or template is None:
            return False
        return any(k in text for k in part.keywords) and any(k in text for k in template.keywords)


@lru_cache(maxsize=None)
def load_lexicon(path: Path = LEXICON_PATH) -> MovementLexicon:
    return MovementLexicon.model_validate_json(Path(path).read_text(encoding="utf-8"))


class AttributionEntry(BaseModel):
    feature_name: str
    shapley_value: float
    rank: int


class Claim(BaseModel):
    section: Section
    text: str
    group: Optional[str] = None
    sources: List[str] = Field(default_factory=list)


class FeedbackReport(BaseModel):
    performer_verdict: int
    score: float
    threshold: float = DEFAULT_THRESHOLD
    performer: str
    strengths: str
    improvements: str
    rendering: Rendering = Rendering.TEMPLATE
    source_attributions: List[AttributionEntry] = Field(default_factory=list)
    claims: List[Claim] = Field(default_factory=list)
    fallback_reason: Optional[str] = None

    @property
    def texts(self) -> Tuple[str, str, str]:
        return self.performer, self.strengths, self.improvements

    def to_markdown(self) -> str:
        improvements = self.improvements or "Nothing to change: keep practising the way you did."
        return (
            "# Feedback report\n\n"
            f"## Who performed the activity\n\n{self.performer}\n\n"
            f"## What you did well\n\n{self.strengths}\n\n"
            f"## What you can improve\n\n{improvements}\n"
        )


class WindowProvenance(BaseModel):
    video_id: str
    start_s: float
    stop_s: float
    window_index: Optional[int] = None
    role: Optional[str] = None


class AlignmentBundle(BaseModel):
    report: FeedbackReport
    attributions: List[AttributionEntry]
    base_value: float
    score: float
    provenance: WindowProvenance
    mapping: Dict[str, List[AttributionEntry]]
    plot_data: Optional[str] = None


def select_top_attributions(attribution: AttributionVector, k: int = DEFAULT_TOP_K) -> List[AttributionEntry]:
    """k entries of largest |value|, ties by feature name; k is clamped to d."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    order = attribution.ranking()[:k]
    return [
        AttributionEntry(
            feature_name=attribution.feature_names[i],
            shapley_value=float(attribution.values[i]),
            rank=rank,
        )
        for rank, i in enumerate(order, start=1)
    ]


def _all_entries(attribution: AttributionVector) -> List[AttributionEntry]:
    return select_top_attributions(attribution, k=len(attribution.feature_names))


def _group_entries(
    entries: Iterable[AttributionEntry], lexicon: MovementLexicon
) -> Dict[MovementGroup, List[AttributionEntry]]:
    groups: Dict[MovementGroup, List[AttributionEntry]] = {}
    for entry in entries:
        groups.setdefault(lexicon.group_of(entry.feature_name), []).append(entry)
    return groups


def _performer_sentence(verdict: int, score: float, threshold: float = DEFAULT_THRESHOLD) -> str:
    """Verdict sentence plus the direction relative to the nurse reference."""
    who = "a nurse" if verdict == 1 else "a student"
    if verdict == 1:
        direction = f"The movement stays close to the nurse reference, below the {threshold:.2f} threshold."
    else:
        direction = f"The movement departs from the nurse reference, at or above the {threshold:.2f} threshold."
    return f"The model thinks this activity was performed by {who} (anomaly score {score:.2f}). {direction}"


def _sentences(text: str) -> List[str]:
    return [s.strip() for s in _SENTENCE_END.split(text.strip()) if s.strip()]


def verbalize_template(
    verdict: int,
    top_attrs: Sequence[AttributionEntry],
    lexicon: Optional[MovementLexicon] = None,
    attribution: Optional[AttributionVector] = None,
    score: float = 0.0,
    threshold: float = DEFAULT_THRESHOLD,
) -> FeedbackReport:
    """Three-part report from a controlled vocabulary.

    Improvements come from the movement groups of the top attributions
    (features pushing towards the anomalous side first). Strengths come from
    the groups with the smallest mean |attribution| in the full vector, or
    from the least-ranked top groups when only the top list is available.

    Raises:
        MissingLexiconEntry: a feature has no movement phrase
    """
    lexicon = lexicon or load_lexicon()
    top_attrs = list(top_attrs)
    top_groups = _group_entries(top_attrs, lexicon)

    if verdict == 1:
        return FeedbackReport(
            performer_verdict=1,
            score=score,
            threshold=threshold,
            performer=_performer_sentence(1, score, threshold),
            strengths=" ".join(lexicon.encouragement),
            improvements="",
            source_attributions=top_attrs,
        )

    pushing = [e for e in top_attrs if e.shapley_value > 0] or top_attrs
    improvement_groups = list(_group_entries(pushing, lexicon).items())
    improvement_groups.sort(key=lambda item: (-sum(abs(e.shapley_value) for e in item[1]), item[0].key))
    improvement_groups = improvement_groups[:MAX_IMPROVEMENT_GROUPS]
    used = {group for group, _ in improvement_groups}

    claims: List[Claim] = []
    for group, entries in improvement_groups:
        claims.append(
            Claim(
                section=Section.IMPROVEMENTS,
                text=lexicon.phrases_for(group).improve,
                group=group.key,
                sources=[e.feature_name for e in entries],
            )
        )

    if attribution is not None:
        pool = _group_entries(_all_entries(attribution), lexicon)
    else:
        pool = top_groups
    candidates = [(g, entries) for g, entries in pool.items() if g not in used]
    candidates.sort(
        key=lambda item: (sum(abs(e.shapley_value) for e in item[1]) / len(item[1]), item[0].key)
    )
    strength_groups = candidates[:MAX_STRENGTH_GROUPS]

    if strength_groups:
        phrases = [lexicon.phrases_for(group).strength for group, _ in strength_groups]
        strengths = f"You performed well in {' and '.join(phrases)}."
        claims.append(
            Claim(
                section=Section.STRENGTHS,
                text=strengths,
                group=",".join(group.key for group, _ in strength_groups),
                sources=[e.feature_name for _, entries in strength_groups for e in entries],
            )
        )
        strengths += " These parts of your movement were close to how experienced nurses move."
    else:
        strengths = (
            "You completed the activity from start to finish. "
            "Keep building on the parts of the step that already feel natural to you."
        )

    improvements = " ".join([claim.text for claim in claims if claim.section == Section.IMPROVEMENTS] + [lexicon.closing])
    return FeedbackReport(
        performer_verdict=0,
        score=score,
        threshold=threshold,
        performer=_performer_sentence(0, score, threshold),
        strengths=strengths,
        improvements=improvements,
        source_attributions=top_attrs,
        claims=claims,
    )


def attribution_summary(
    attribution: AttributionVector, k: int = DEFAULT_TOP_K, threshold: float = DEFAULT_THRESHOLD
) -> str:
    """Text table of the top attributions with the model's verdict."""
    verdict = classify(attribution.score, threshold)
    lines = [
        f"Model verdict: label {verdict} ({'nurse' if verdict == 1 else 'student'}), "
        f"anomaly score {attribution.score:.4f}, base value {attribution.base_value:.4f}",
        "rank | feature | shapley value",
    ]
    for entry in select_top_attributions(attribution, k):
        lines.append(f"{entry.rank} | {entry.feature_name} | {entry.shapley_value:+.6f}")
    return "\n".join(lines)


def assemble_student_prompt(summary: str, context: Optional[str] = None) -> str:
    """Student-support prompt with the attribution summary attached.

    An empty summary still yields a prompt, with a PromptAssemblyWarning.
    """
    if not summary or not summary.strip():
        warnings.warn("Student prompt assembled without an attribution summary", PromptAssemblyWarning, stacklevel=2)
    text = load_template(TemplateId.STUDENT_SUPPORT.value).render()
    text += f"\n\nAttribution summary:\n{summary.strip() if summary else ''}"
    if context:
        text += f"\n\nContext: {context.strip()}"
    return text + "\n"


def split_report_sections(text: str) -> Tuple[str, str, str]:
    """Split an LLM report into (performer, strengths, improvements).

    Raises:
        MalformedResponse: fewer than three sections can be found
    """
    markers = list(_NUMBERED_SECTION.finditer(text))
    numbers = [m.group(1) for m in markers]
    if numbers[:3] == ["1", "2", "3"]:
        bounds = [m.end() for m in markers[:3]] + [len(text)]
        starts = [m.start() for m in markers[1:3]] + [len(text)]
        parts = [text[bounds[i] : starts[i]] for i in range(3)]
    else:
        parts = [p for p in re.split(r"\n\s*\n", text.strip()) if p.strip()]
        if len(parts) < 3:
            raise MalformedResponse(f"Report has {len(parts)} section(s), expected 3", detail=text[:500])
        parts = parts[:2] + ["\n\n".join(parts[2:])]
    return tuple(" ".join(p.replace("**", "").split()) for p in parts)


def _feature_leaks(texts: Iterable[str], feature_names: Sequence[str]) -> List[str]:
    joined = "\n".join(texts)
    return [name for name in feature_names if name in joined]


def _map_claims(
    section: Section,
    text: str,
    groups: Dict[MovementGroup, List[AttributionEntry]],
    lexicon: MovementLexicon,
) -> List[Claim]:
    claims = []
    for sentence in _sentences(text):
        matched = [g for g in sorted(groups, key=lambda g: g.key) if lexicon.claim_matches(sentence, g)]
        claims.append(
            Claim(
                section=section,
                text=sentence,
                group=",".join(g.key for g in matched) or None,
                sources=[e.feature_name for g in matched for e in groups[g]],
            )
        )
    return claims


def check_report(report: FeedbackReport, feature_names: Sequence[str]) -> None:
    """Hallucination guard.

    Raises:
        UnmappedClaim: a feature name leaks into the text or a claim has no source
    """
    leaks = _feature_leaks(report.texts, feature_names)
    if leaks:
        raise UnmappedClaim(f"Report text names raw feature(s): {leaks[:3]}")
    unmapped = [claim.text for claim in report.claims if not claim.sources]
    if unmapped:
        raise UnmappedClaim(f"{len(unmapped)} claim(s) map to no attribution", detail=unmapped[0])


def verbalize_llm(
    gateway: LLMGateway,
    attribution: AttributionVector,
    k: int = DEFAULT_TOP_K,
    threshold: float = DEFAULT_THRESHOLD,
    lexicon: Optional[MovementLexicon] = None,
    context: Optional[str] = None,
    mode: Optional[GatewayMode] = None,
) -> FeedbackReport:
    """Ask the LLM for the report; fall back to the template when the guard fails."""
    lexicon = lexicon or load_lexicon()
    verdict = classify(attribution.score, threshold)
    top = select_top_attributions(attribution, k)
    template_report = verbalize_template(verdict, top, lexicon, attribution, attribution.score, threshold)

    prompt = assemble_student_prompt(attribution_summary(attribution, k, threshold), context)
    try:
        response = gateway.send(prompt, prompt_id=TemplateId.STUDENT_SUPPORT.value, mode=mode)
        _, strengths, improvements = split_report_sections(response)
        all_groups = _group_entries(_all_entries(attribution), lexicon)
        claims = _map_claims(Section.IMPROVEMENTS, improvements, _group_entries(top, lexicon), lexicon)
        if verdict == 0:
            claims = _map_claims(Section.STRENGTHS, strengths, all_groups, lexicon) + claims
        report = FeedbackReport(
            performer_verdict=verdict,
            score=attribution.score,
            threshold=threshold,
            performer=_performer_sentence(verdict, attribution.score, threshold),
            strengths=strengths,
            improvements=improvements,
            rendering=Rendering.LLM,
            source_attributions=top,
            claims=claims,
        )
        check_report(report, attribution.feature_names)
        return report
    except PipelineError as e:
        logger.warning(f"LLM feedback rejected, using template rendering: {e}")
        return template_report.model_copy(update={"fallback_reason": f"{e.error_code.value}: {e.message}"})


def build_alignment_bundle(
    report: FeedbackReport,
    attribution: AttributionVector,
    provenance: WindowProvenance,
    out_dir: Optional[Path] = None,
    plot_data: Optional[Path] = None,
) -> AlignmentBundle:
    """Map every claim to its attribution entries and optionally write the bundle.

    Raises:
        UnmappedClaim: a claim has no source or cites a feature absent from the attribution
    """
    check_report(report, attribution.feature_names)
    entries = {entry.feature_name: entry for entry in _all_entries(attribution)}
    mapping: Dict[str, List[AttributionEntry]] = {}
    for claim in report.claims:
        missing = [name for name in claim.sources if name not in entries]
        if missing:
            raise UnmappedClaim(f"Claim cites unknown feature(s) {missing[:3]}", detail=claim.text)
        mapping[claim.text] = [entries[name] for name in claim.sources]

    bundle = AlignmentBundle(
        report=report,
        attributions=list(entries.values()),
        base_value=attribution.base_value,
        score=attribution.score,
        provenance=provenance,
        mapping=mapping,
        plot_data=str(plot_data) if plot_data else None,
    )
    if out_dir is not None:
        write_alignment_bundle(bundle, attribution, Path(out_dir))
    return bundle


def write_alignment_bundle(bundle: AlignmentBundle, attribution: AttributionVector, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.md").write_text(bundle.report.to_markdown(), encoding="utf-8")
    (out_dir / "report.json").write_text(bundle.report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    attribution.write_csv(out_dir / "attributions.csv")
    provenance = bundle.provenance.model_dump()
    provenance.update(base_value=bundle.base_value, score=bundle.score, plot_data=bundle.plot_data)
    (out_dir / "provenance.json").write_text(json.dumps(provenance, indent=2) + "\n", encoding="utf-8")
    mapping = {
        claim: [entry.model_dump() for entry in entries] for claim, entries in bundle.mapping.items()
    }
    (out_dir / "mapping.json").write_text(json.dumps(mapping, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Alignment bundle written to {out_dir} ({len(mapping)} mapped claim(s))")
