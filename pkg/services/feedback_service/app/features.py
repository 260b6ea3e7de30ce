"""Sliding-window statistical and spectral features of keypoint series.

Every joint contributes two channels (x, y). Each channel yields the same ten
statistics, so a 17-joint skeleton gives 340 features named
``{joint}_{axis}_{stat}`` in channel-major order.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy import fft

from services.feedback_service.app.keypoints import (
    MISSING_CONFIDENCE,
    KeypointSeries,
    Role,
    interpolate_missing,
)
from services.shared.domain import ActivityClass, ActivityLog
from services.shared.errors import (
    DegenerateInput,
    DimensionMismatch,
    SeriesTooShort,
    WindowTooShort,
)

logger = logging.getLogger(__name__)

STATISTICS: Tuple[str, ...] = (
    "mean",
    "std",
    "min",
    "max",
    "range",
    "rms",
    "slope",
    "mean_abs_diff",
    "zero_crossings",
    "spectral_centroid",
)
AXES = ("x", "y")
_ZERO_TOLERANCE = 1e-12
_WINDOW_EPSILON = 1e-9


class WindowSpec(BaseModel):
    length_s: float = Field(3.0, gt=0)
    stride_s: float = Field(1.0, gt=0)

    def length_frames(self, fps: float) -> int:
        return int(round(self.length_s * fps))

    def count(self, duration_s: float) -> int:
        """Number of whole windows in ``duration_s`` seconds."""
        if duration_s + _WINDOW_EPSILON < self.length_s:
            return 0
        return int(np.floor((duration_s - self.length_s) / self.stride_s + _WINDOW_EPSILON)) + 1


@dataclass(frozen=True)
class Window:
    start_frame: int
    stop_frame: int
    start_s: float
    stop_s: float


def channel_names(joint_names: Sequence[str]) -> List[str]:
    return [f"{joint}_{axis}" for joint in joint_names for axis in AXES]


def feature_names(joint_names: Sequence[str]) -> List[str]:
    return [f"{channel}_{stat}" for channel in channel_names(joint_names) for stat in STATISTICS]


def make_windows(series: KeypointSeries, length_s: float = 3.0, stride_s: float = 1.0) -> List[Window]:
    """Windows starting at 0, stride, 2·stride, ... seconds; a trailing partial window is dropped.

    Window i begins at frame floor(i·stride·fps) and holds round(length·fps) frames.

    Raises:
        SeriesTooShort: the series is shorter than one window
        WindowTooShort: a window would hold fewer than 2 frames
    """
    spec = WindowSpec(length_s=length_s, stride_s=stride_s)
    length = spec.length_frames(series.fps)
    if length < 2:
        raise WindowTooShort(f"Window of {length_s} s at {series.fps} fps has {length} frame(s)")
    count = spec.count(series.duration_s)
    if count == 0 or series.n_frames < length:
        raise SeriesTooShort(
            f"{series.video_id}: {series.duration_s:.2f} s is shorter than a {length_s} s window"
        )
    windows = []
    for i in range(count):
        start = int(np.floor(i * stride_s * series.fps + _WINDOW_EPSILON))
        if start + length > series.n_frames:
            break
        start_s = i * stride_s
        windows.append(Window(start, start + length, start_s, start_s + length_s))
    return windows


def _zero_crossings(centered: np.ndarray) -> np.ndarray:
    counts = np.zeros(centered.shape[1], dtype=float)
    for channel in range(centered.shape[1]):
        signal = centered[:, channel]
        tolerance = _ZERO_TOLERANCE * max(1.0, float(np.abs(signal).max(initial=0.0)))
        signs = np.sign(signal[np.abs(signal) > tolerance])
        counts[channel] = float(np.count_nonzero(signs[1:] != signs[:-1]))
    return counts


def channel_statistics(signal: np.ndarray, fps: float) -> np.ndarray:
    """Ten statistics for each column of a ``(frames, channels)`` array.

    Returns:
        ``(channels, 10)`` array in STATISTICS order

    Raises:
        WindowTooShort: fewer than 2 frames
    """
    signal = np.asarray(signal, dtype=float)
    if signal.ndim == 1:
        signal = signal[:, None]
    n = signal.shape[0]
    if n < 2:
        raise WindowTooShort(f"Feature extraction needs at least 2 frames, got {n}")

    mean = signal.mean(axis=0)
    centered = signal - mean
    minimum = signal.min(axis=0)
    maximum = signal.max(axis=0)

    times = np.arange(n) / fps
    times_centered = times - times.mean()
    slope = times_centered @ centered / float(times_centered @ times_centered)

    spectrum = np.abs(fft.rfft(centered, axis=0))
    freqs = fft.rfftfreq(n, d=1.0 / fps)
    power = spectrum.sum(axis=0)
    weighted = freqs @ spectrum
    centroid = np.divide(weighted, power, out=np.zeros_like(weighted), where=power > _ZERO_TOLERANCE)

    stats = np.column_stack(
        [
            mean,
            signal.std(axis=0),
            minimum,
            maximum,
            maximum - minimum,
            np.sqrt((signal**2).mean(axis=0)),
            slope,
            np.abs(np.diff(signal, axis=0)).mean(axis=0),
            _zero_crossings(centered),
            centroid,
        ]
    )
    return stats


def extract_features(window: np.ndarray, fps: float) -> np.ndarray:
    """Feature vector of one ``(frames, joints, 2)`` window, ordered as feature_names."""
    window = np.asarray(window, dtype=float)
    frames = window.shape[0]
    return channel_statistics(window.reshape(frames, -1), fps).ravel()


@dataclass(eq=False)
class FeatureMatrix:
    """Windows × named features with per-row provenance."""

    values: np.ndarray
    feature_names: List[str]
    window_spec: WindowSpec = field(default_factory=WindowSpec)
    video_ids: List[str] = field(default_factory=list)
    window_starts: List[float] = field(default_factory=list)
    roles: List[str] = field(default_factory=list)
    labels: List[int] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, len(self.feature_names))
        n = self.values.shape[0]
        self.video_ids = list(self.video_ids) or [""] * n
        self.window_starts = list(self.window_starts) or [0.0] * n
        self.roles = list(self.roles) or [""] * n
        for name in ("video_ids", "window_starts", "roles"):
            if len(getattr(self, name)) != n:
                raise DimensionMismatch(f"{name} has {len(getattr(self, name))} entries for {n} rows")
        if self.labels and len(self.labels) != n:
            raise DimensionMismatch(f"labels has {len(self.labels)} entries for {n} rows")

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    def rows_where(self, mask: Sequence[bool]) -> "FeatureMatrix":
        mask = np.asarray(mask, dtype=bool)
        pick = np.flatnonzero(mask)
        return FeatureMatrix(
            values=self.values[mask],
            feature_names=list(self.feature_names),
            window_spec=self.window_spec,
            video_ids=[self.video_ids[i] for i in pick],
            window_starts=[self.window_starts[i] for i in pick],
            roles=[self.roles[i] for i in pick],
            labels=[self.labels[i] for i in pick] if self.labels else [],
        )

    @classmethod
    def concat(cls, matrices: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        if not matrices:
            raise DimensionMismatch("Nothing to concatenate")
        names = matrices[0].feature_names
        for matrix in matrices[1:]:
            if matrix.feature_names != names:
                raise DimensionMismatch("Feature names differ between matrices")
        with_labels = all(m.labels for m in matrices)
        return cls(
            values=np.vstack([m.values for m in matrices]),
            feature_names=list(names),
            window_spec=matrices[0].window_spec,
            video_ids=[v for m in matrices for v in m.video_ids],
            window_starts=[s for m in matrices for s in m.window_starts],
            roles=[r for m in matrices for r in m.roles],
            labels=[label for m in matrices for label in m.labels] if with_labels else [],
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.feature_names)

    def sidecar_path(self, path: Path) -> Path:
        return Path(path).with_suffix(".json")

    def write(self, path: Path) -> None:
        """CSV of feature values plus a JSON sidecar with window provenance."""
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.10g")
        sidecar = {
            "window_spec": self.window_spec.model_dump(),
            "video_ids": self.video_ids,
            "window_starts": self.window_starts,
            "roles": self.roles,
            "labels": self.labels,
        }
        self.sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: Path) -> "FeatureMatrix":
        path = Path(path)
        frame = pd.read_csv(path)
        sidecar_path = path.with_suffix(".json")
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8")) if sidecar_path.exists() else {}
        return cls(
            values=frame.to_numpy(dtype=float),
            feature_names=list(frame.columns),
            window_spec=WindowSpec(**sidecar.get("window_spec", {})),
            video_ids=sidecar.get("video_ids", []),
            window_starts=sidecar.get("window_starts", []),
            roles=sidecar.get("roles", []),
            labels=sidecar.get("labels", []),
        )


def build_feature_matrix(
    series: KeypointSeries,
    spec: Optional[WindowSpec] = None,
    conf_threshold: float = MISSING_CONFIDENCE,
    interpolate: bool = True,
) -> FeatureMatrix:
    """Interpolate gaps, window the series and extract one feature row per window."""
    spec = spec or WindowSpec()
    if interpolate:
        series = interpolate_missing(series, conf_threshold)
    windows = make_windows(series, spec.length_s, spec.stride_s)
    rows = np.vstack(
        [
            extract_features(series.coords[w.start_frame : w.stop_frame], series.fps)
            for w in windows
        ]
    )
    if not np.isfinite(rows).all():
        raise DegenerateInput(f"{series.video_id}: non-finite feature values after extraction")
    logger.info(f"Extracted {rows.shape[0]} windows × {rows.shape[1]} features from {series.video_id}")
    return FeatureMatrix(
        values=rows,
        feature_names=feature_names(series.joint_names),
        window_spec=spec,
        video_ids=[series.video_id] * len(windows),
        window_starts=[w.start_s for w in windows],
        roles=[Role(series.role).value] * len(windows),
    )


def label_windows(matrix: FeatureMatrix, log: ActivityLog) -> FeatureMatrix:
    """Attach the activity class at each window's centre (Others when uncovered)."""
    half = matrix.window_spec.length_s / 2.0
    labels = []
    for start in matrix.window_starts:
        centre = start + half
        label = int(ActivityClass.OTHERS)
        for interval in log.intervals:
            if interval.start_s <= centre < interval.stop_s:
                label = int(interval.activity_class)
        labels.append(label)
    return replace(matrix, labels=labels)
