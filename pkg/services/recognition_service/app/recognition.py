"""Video reference → prompt → LLM → parsed activity log."""
import logging
from typing import Mapping, Optional

from services.recognition_service.app.gateway import GatewayMode, LLMGateway
from services.recognition_service.app.log_parser import Continuity, LogFormat, ParseReport, parse_log
from services.recognition_service.app.prompts import TemplateId, assemble_prompt
from services.shared.errors import UnknownTemplate
from services.shared.observability import LINES_DROPPED, PARSE_REPAIRS

logger = logging.getLogger(__name__)


def recognize(
    gateway: LLMGateway,
    video_ref: str,
    prompt_id: str = "A",
    video_id: Optional[str] = None,
    continuity: Continuity = Continuity.STITCH,
    overrides: Optional[Mapping[str, str]] = None,
    mode: Optional[GatewayMode] = None,
) -> ParseReport:
    """Run one recognition prompt for a video and parse the response.

    The video is sent by reference; the response format follows the prompt
    (A: comma-separated, B: bracketed with justification).
    """
    if prompt_id not in (TemplateId.A.value, TemplateId.B.value):
        raise UnknownTemplate(f"{prompt_id!r} is not a recognition prompt")
    prompt = assemble_prompt(prompt_id, video_ref=video_ref, overrides=overrides)
    response = gateway.send(prompt, attachment=video_ref, prompt_id=prompt_id, mode=mode)
    report = parse_log(
        response,
        LogFormat(prompt_id),
        continuity,
        video_id=video_id or video_ref,
    )
    for repair in report.repairs:
        PARSE_REPAIRS.labels(rule=repair.rule.value).inc()
    LINES_DROPPED.inc(len(report.dropped_lines))
    logger.info(
        f"Recognized {report.log.video_id} with prompt {prompt_id}: "
        f"{len(report.log.intervals)} intervals"
    )
    return report
