"""Prometheus metrics for pipeline runs.

The CLI is a batch process, so metrics are written next to the run artifacts
in textfile-collector format instead of being served over HTTP.
"""
from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

REGISTRY = CollectorRegistry()

COMMANDS_TOTAL = Counter(
    "es_pipeline_commands_total",
    "Total number of pipeline subcommand executions",
    ["command", "status"],
    registry=REGISTRY,
)

COMMAND_DURATION = Histogram(
    "es_pipeline_command_duration_seconds",
    "Subcommand duration in seconds",
    ["command"],
    registry=REGISTRY,
)

PARSE_REPAIRS = Counter(
    "es_parse_repairs_total",
    "Repairs applied while parsing LLM activity logs",
    ["rule"],
    registry=REGISTRY,
)

LINES_DROPPED = Counter(
    "es_parse_lines_dropped_total",
    "Lines of LLM output that could not be parsed",
    registry=REGISTRY,
)

VALIDATION_VIOLATIONS = Counter(
    "es_validation_violations_total",
    "Procedure grammar violations found in activity logs",
    ["kind"],
    registry=REGISTRY,
)

LLM_EXCHANGES = Counter(
    "es_llm_exchanges_total",
    "LLM gateway exchanges",
    ["mode", "prompt_id"],
    registry=REGISTRY,
)


def write_metrics(directory: Path) -> Path:
    """Write the registry to ``<directory>/metrics.prom`` and return the path."""
    path = Path(directory) / "metrics.prom"
    write_to_textfile(str(path), REGISTRY)
    return path
