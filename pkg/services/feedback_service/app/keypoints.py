"""Keypoint series ingestion and gap interpolation.

A series holds ``(frames, joints, 2)`` pixel coordinates and ``(frames, joints)``
detection confidences for one practitioner. Missing detections have conf 0.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from services.shared.errors import EmptySeries

logger = logging.getLogger(__name__)

COCO_JOINTS: Tuple[str, ...] = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

MISSING_CONFIDENCE = 0.1
FILLED_CONFIDENCE = 0.5
CSV_COLUMNS = ("frame", "joint_id", "x", "y", "conf")


class Role(str, Enum):
    """Who performed the recording; label 1 is nurse, label 0 is student."""

    NURSE = "nurse"
    STUDENT = "student"

    @property
    def label(self) -> int:
        return 1 if self is Role.NURSE else 0


@dataclass(frozen=True, eq=False)
class KeypointSeries:
    video_id: str
    fps: float
    coords: np.ndarray
    conf: np.ndarray
    role: Role = Role.STUDENT
    session: str = ""
    joint_names: Tuple[str, ...] = COCO_JOINTS
    flagged_joints: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        joints = len(self.joint_names)
        if self.coords.ndim != 3 or self.coords.shape[1:] != (joints, 2):
            raise ValueError(f"coords must have shape (frames, {joints}, 2), got {self.coords.shape}")
        if self.conf.shape != self.coords.shape[:2]:
            raise ValueError(f"conf shape {self.conf.shape} does not match coords {self.coords.shape}")

    @property
    def n_frames(self) -> int:
        return int(self.coords.shape[0])

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps


def interpolate_missing(
    series: KeypointSeries, conf_threshold: float = MISSING_CONFIDENCE
) -> KeypointSeries:
    """Fill frames with conf < conf_threshold by linear interpolation per joint.

    Gaps at either end take the nearest valid value. Filled frames get
    confidence FILLED_CONFIDENCE. A joint that is never detected is zero-filled,
    keeps conf 0 and is listed in ``flagged_joints``.

    Raises:
        EmptySeries: series has no frames
    """
    if series.n_frames == 0:
        raise EmptySeries(f"Keypoint series {series.video_id} has no frames")

    coords = series.coords.astype(float, copy=True)
    conf = series.conf.astype(float, copy=True)
    times = np.arange(series.n_frames, dtype=float)
    flagged = list(series.flagged_joints)

    for joint, name in enumerate(series.joint_names):
        valid = conf[:, joint] >= conf_threshold
        if valid.all():
            continue
        if not valid.any():
            coords[:, joint, :] = 0.0
            conf[:, joint] = 0.0
            if name not in flagged:
                logger.warning(f"{series.video_id}: joint {name} never detected; zero-filled")
                flagged.append(name)
            continue
        missing = ~valid
        for axis in range(2):
            coords[missing, joint, axis] = np.interp(
                times[missing], times[valid], coords[valid, joint, axis]
            )
        conf[missing, joint] = FILLED_CONFIDENCE
        logger.debug(f"{series.video_id}: interpolated {int(missing.sum())} frames of {name}")

    return replace(series, coords=coords, conf=conf, flagged_joints=tuple(flagged))


def _empty_arrays(frames: int, joints: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.zeros((frames, joints, 2)), np.zeros((frames, joints))


def read_keypoints_csv(
    path: Path,
    fps: float,
    video_id: Optional[str] = None,
    role: Role = Role.STUDENT,
    session: str = "",
    joint_names: Sequence[str] = COCO_JOINTS,
) -> KeypointSeries:
    """Read long-format CSV rows ``frame, joint_id, x, y, conf``; absent rows are missing."""
    path = Path(path)
    frame = pd.read_csv(path)
    missing_columns = set(CSV_COLUMNS) - set(frame.columns)
    if missing_columns:
        raise ValueError(f"{path}: missing columns {sorted(missing_columns)}")
    if frame.empty:
        raise EmptySeries(f"{path}: no keypoint rows", context=str(path))
    joints = len(joint_names)
    n_frames = int(frame["frame"].max()) + 1
    coords, conf = _empty_arrays(n_frames, joints)
    frames = frame["frame"].to_numpy(dtype=int)
    joint_ids = frame["joint_id"].to_numpy(dtype=int)
    coords[frames, joint_ids, 0] = frame["x"].to_numpy(dtype=float)
    coords[frames, joint_ids, 1] = frame["y"].to_numpy(dtype=float)
    conf[frames, joint_ids] = frame["conf"].to_numpy(dtype=float)
    return KeypointSeries(
        video_id=video_id or path.stem,
        fps=fps,
        coords=coords,
        conf=conf,
        role=Role(role),
        session=session,
        joint_names=tuple(joint_names),
    )


def write_keypoints_csv(series: KeypointSeries, path: Path) -> None:
    frames, joints = np.meshgrid(
        np.arange(series.n_frames), np.arange(len(series.joint_names)), indexing="ij"
    )
    pd.DataFrame(
        {
            "frame": frames.ravel(),
            "joint_id": joints.ravel(),
            "x": series.coords[:, :, 0].ravel(),
            "y": series.coords[:, :, 1].ravel(),
            "conf": series.conf.ravel(),
        }
    ).to_csv(path, index=False)


def read_keypoints_json(
    path: Path,
    fps: Optional[float] = None,
    video_id: Optional[str] = None,
    role: Optional[Role] = None,
    session: str = "",
) -> KeypointSeries:
    """Read either an array of frames (each a list of ``[x, y, conf]`` per joint)
    or an object ``{video_id, fps, role, session, frames}``."""
    path = Path(path)
    document = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(document, list):
        document = {"frames": document}
    frames = np.asarray(document.get("frames", []), dtype=float)
    if frames.size == 0:
        raise EmptySeries(f"{path}: no frames", context=str(path))
    fps = fps or document.get("fps")
    if fps is None:
        raise ValueError(f"{path}: fps missing from file and arguments")
    joint_names = tuple(document.get("joint_names", COCO_JOINTS))
    return KeypointSeries(
        video_id=video_id or document.get("video_id", path.stem),
        fps=float(fps),
        coords=frames[:, :, :2],
        conf=frames[:, :, 2],
        role=Role(role or document.get("role", Role.STUDENT.value)),
        session=session or document.get("session", ""),
        joint_names=joint_names,
    )


def write_keypoints_json(series: KeypointSeries, path: Path) -> None:
    frames = np.concatenate([series.coords, series.conf[:, :, None]], axis=2)
    document = {
        "video_id": series.video_id,
        "fps": series.fps,
        "role": series.role.value,
        "session": series.session,
        "joint_names": list(series.joint_names),
        "frames": frames.round(6).tolist(),
    }
    Path(path).write_text(json.dumps(document) + "\n", encoding="utf-8")


def read_keypoints(path: Path, fps: Optional[float] = None, **kwargs) -> KeypointSeries:
    """Dispatch on file suffix (.csv or .json)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        if fps is None:
            raise ValueError(f"{path}: CSV keypoints need an explicit fps")
        return read_keypoints_csv(path, fps, **kwargs)
    return read_keypoints_json(path, fps, **kwargs)
