"""Run configuration and participant split checks."""
import json
import logging
import re
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from services.shared.errors import ConfigError

logger = logging.getLogger(__name__)

_PARTICIPANT = re.compile(r"^(?P<participant>[A-Za-z]+\d+)")


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class SplitEntry(BaseModel):
    participant: str
    session: str = ""
    split: Split


class SplitViolation(BaseModel):
    participant: str
    sessions: List[str]
    message: str


def participant_of(video_id: str) -> str:
    """Participant prefix of a video id (``N03T1`` → ``N03``)."""
    match = _PARTICIPANT.match(video_id)
    return match["participant"] if match else video_id


def check_split(manifest: Sequence[SplitEntry]) -> List[SplitViolation]:
    """One violation per participant that appears in both train and test."""
    splits: Dict[str, Dict[Split, List[str]]] = {}
    for entry in manifest:
        participant = participant_of(entry.participant)
        splits.setdefault(participant, {}).setdefault(entry.split, []).append(entry.session)
    violations = []
    for participant in sorted(splits):
        assigned = splits[participant]
        if len(assigned) > 1:
            sessions = [f"{s}:{split.value}" for split in Split for s in assigned.get(split, [])]
            violations.append(
                SplitViolation(
                    participant=participant,
                    sessions=sessions,
                    message=f"Participant {participant} appears in both train and test",
                )
            )
    return violations


def load_split_manifest(path: Path) -> List[SplitEntry]:
    """CSV with columns participant, session, split, or a JSON list of such objects."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Split manifest {path} does not exist")
    try:
        if path.suffix.lower() == ".json":
            rows = json.loads(path.read_text(encoding="utf-8"))
        else:
            rows = pd.read_csv(path, dtype=str).fillna("").to_dict(orient="records")
        return [SplitEntry(**row) for row in rows]
    except (ValidationError, ValueError, TypeError) as e:
        raise ConfigError(f"Malformed split manifest {path}", detail=str(e)) from e


class RunConfig(BaseSettings):
    """Pipeline parameters from ES_* variables, a JSON config file and CLI flags."""

    model_config = SettingsConfigDict(env_prefix="ES_", extra="ignore")

    out_dir: Path = Path("runs")
    gt_dir: Optional[Path] = None
    pred_dir: Optional[Path] = None
    keypoint_dir: Optional[Path] = None
    model_path: Optional[Path] = None
    fixture_dir: Path = Path("fixtures/llm")
    split_manifest: Optional[Path] = None

    resolution: float = Field(1.0, gt=0)
    exclude_others: bool = False
    fps: float = Field(30.0, gt=0)
    window_s: float = Field(3.0, gt=0)
    stride_s: float = Field(1.0, gt=0)
    conf_threshold: float = Field(0.1, ge=0, le=1)

    n_trees: int = Field(100, ge=1)
    psi: int = Field(256, ge=2)
    seed: int = 0
    n_jobs: int = Field(1, ge=1)
    n_permutations: int = Field(200, ge=2)
    threshold: float = Field(0.5, gt=0, lt=1)
    top_k: int = Field(5, ge=1)
    pca_components: int = Field(2, ge=1)

    log_level: str = "INFO"
    json_logs: bool = True


def load_run_config(
    config_path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    """Config file values, overridden by explicitly given flags.

    Raises:
        ConfigError: unreadable file, invalid values or a leaking split manifest
    """
    values: Dict[str, Any] = {}
    if config_path is not None:
        try:
            values.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config file {config_path}", detail=str(e)) from e
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})

    try:
        config = RunConfig(**values)
    except ValidationError as e:
        raise ConfigError("Invalid run configuration", detail=str(e)) from e

    if config.split_manifest is not None:
        violations = check_split(load_split_manifest(config.split_manifest))
        if violations:
            raise ConfigError(
                violations[0].message,
                detail="; ".join(v.participant for v in violations),
                context=str(config.split_manifest),
            )
    return config
