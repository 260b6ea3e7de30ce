"""PCA posture space over standardized window features."""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from services.feedback_service.app.features import FeatureMatrix
from services.shared.errors import DimensionMismatch, RankDeficient

logger = logging.getLogger(__name__)

_ZERO_VARIANCE = 1e-12


@dataclass(eq=False)
class PCAModel:
    """Principal directions of standardized data.

    ``components`` rows are orthonormal and live in the space of the kept
    (non-constant) features; ``explained_variance`` is non-increasing.
    """

    input_feature_names: List[str]
    kept: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float

    @property
    def k(self) -> int:
        return int(self.components.shape[0])

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != len(self.input_feature_names):
            raise DimensionMismatch(
                f"Expected {len(self.input_feature_names)} features, got {x.shape[-1]}"
            )
        return (x[..., self.kept] - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {
            "input_feature_names": self.input_feature_names,
            "kept": self.kept.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "total_variance": self.total_variance,
        }

    @classmethod
    def from_dict(cls, document: dict) -> "PCAModel":
        return cls(
            input_feature_names=list(document["input_feature_names"]),
            kept=np.asarray(document["kept"], dtype=np.int64),
            mean=np.asarray(document["mean"], dtype=float),
            scale=np.asarray(document["scale"], dtype=float),
            components=np.asarray(document["components"], dtype=float),
            explained_variance=np.asarray(document["explained_variance"], dtype=float),
            total_variance=float(document["total_variance"]),
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "PCAModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def pca_fit(
    X: Union[FeatureMatrix, np.ndarray], k: int, feature_names: Optional[Sequence[str]] = None
) -> PCAModel:
    """Top-k principal directions of the standardized data.

    Zero-variance features are dropped with a warning. Each component's
    largest-magnitude entry is made positive so fits are sign-stable.

    Raises:
        RankDeficient: k exceeds min(rows - 1, kept features)
    """
    if isinstance(X, FeatureMatrix):
        feature_names = X.feature_names
        X = X.values
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"PCA expects a 2-D matrix, got shape {X.shape}")
    n, d = X.shape
    feature_names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(d)]

    mean = X.mean(axis=0) if n else np.zeros(d)
    scale = X.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    kept = np.flatnonzero(scale > _ZERO_VARIANCE * np.maximum(1.0, np.abs(mean)))
    dropped = [feature_names[i] for i in range(d) if i not in set(kept.tolist())]
    if dropped:
        logger.warning(f"PCA drops {len(dropped)} zero-variance feature(s): {dropped[:5]}")

    available = min(n - 1, kept.size)
    if k < 1 or k > available:
        raise RankDeficient(
            f"Requested {k} components but only {max(available, 0)} are available",
            detail=f"rows={n} kept_features={kept.size}",
        )

    Z = (X[:, kept] - mean[kept]) / scale[kept]
    covariance = Z.T @ Z / (n - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1][:k]
    components = eigenvectors[:, order].T
    explained = np.clip(eigenvalues[order], 0.0, None)

    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(k), pivots])
    signs[signs == 0] = 1.0
    components = components * signs[:, None]

    model = PCAModel(
        input_feature_names=feature_names,
        kept=kept,
        mean=mean[kept],
        scale=scale[kept],
        components=components,
        explained_variance=explained,
        total_variance=float(np.trace(covariance)),
    )
    logger.info(
        f"PCA fit on {n} rows: k={k}, explained ratio {model.explained_variance_ratio.round(4).tolist()}"
    )
    return model


def pca_project(model: PCAModel, x: np.ndarray) -> np.ndarray:
    """Coordinates of x (one vector or a row matrix) on the k components.

    Raises:
        DimensionMismatch: x does not have the fitted feature count
    """
    return model.standardize(x) @ model.components.T


def pca_reconstruct(model: PCAModel, scores: np.ndarray) -> np.ndarray:
    """Map component coordinates back to standardized feature space."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape[-1] != model.k:
        raise DimensionMismatch(f"Expected {model.k} coordinates, got {scores.shape[-1]}")
    return scores @ model.components


def projection_table(model: PCAModel, matrix: FeatureMatrix) -> pd.DataFrame:
    """Plot data for the posture space: role, video, window start, PC coordinates."""
    coordinates = pca_project(model, matrix.values)
    table = pd.DataFrame(
        {
            "role": matrix.roles,
            "video_id": matrix.video_ids,
            "window_start_s": matrix.window_starts,
        }
    )
    for component in range(model.k):
        table[f"pc{component + 1}"] = coordinates[:, component]
    return table
