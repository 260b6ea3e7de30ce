"""Shapley attribution of anomaly scores.

Absent features are filled from background rows, so attributions explain how
a window's score departs from the background (the nurse training windows).
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import comb

from services.feedback_service.app.features import FeatureMatrix
from services.feedback_service.app.isolation_forest import IsolationForestModel, anomaly_scores
from services.shared.errors import DimensionMismatch, EmptyBackground, TooManyFeatures

logger = logging.getLogger(__name__)

ScoreFunction = Callable[[np.ndarray], np.ndarray]

MAX_EXACT_FEATURES = 12
DEFAULT_PERMUTATIONS = 200
_CHUNK_ROWS = 20_000


@dataclass(eq=False)
class AttributionVector:
    """Per-feature credit with sum(values) + base_value ≈ score."""

    feature_names: List[str]
    values: np.ndarray
    base_value: float
    score: float
    method: str = "exact"
    standard_errors: Optional[np.ndarray] = None
    efficiency_se: float = 0.0
    n_permutations: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.feature_names),):
            raise DimensionMismatch(
                f"{self.values.size} values for {len(self.feature_names)} feature names"
            )

    @property
    def efficiency_gap(self) -> float:
        return float(self.values.sum() + self.base_value - self.score)

    def ranking(self) -> List[int]:
        """Feature indices by descending |value|, ties by feature name."""
        return sorted(
            range(len(self.feature_names)),
            key=lambda i: (-abs(float(self.values[i])), self.feature_names[i]),
        )

    def value_of(self, name: str) -> float:
        return float(self.values[self.feature_names.index(name)])

    def to_frame(self) -> pd.DataFrame:
        ranks = np.empty(len(self.feature_names), dtype=int)
        ranks[self.ranking()] = np.arange(1, len(self.feature_names) + 1)
        return pd.DataFrame(
            {
                "feature_name": self.feature_names,
                "shapley_value": self.values,
                "rank": ranks,
            }
        ).sort_values("rank", kind="stable")

    def write_csv(self, path: Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "base_value": self.base_value,
            "score": self.score,
            "n_permutations": self.n_permutations,
            "efficiency_se": self.efficiency_se,
            "values": dict(zip(self.feature_names, self.values.tolist())),
            "standard_errors": (
                dict(zip(self.feature_names, self.standard_errors.tolist()))
                if self.standard_errors is not None
                else None
            ),
        }

    @classmethod
    def from_dict(cls, document: dict) -> "AttributionVector":
        names = list(document["values"])
        errors = document.get("standard_errors")
        return cls(
            feature_names=names,
            values=np.array([document["values"][name] for name in names], dtype=float),
            base_value=float(document["base_value"]),
            score=float(document["score"]),
            method=document.get("method", "exact"),
            standard_errors=np.array([errors[name] for name in names]) if errors else None,
            efficiency_se=float(document.get("efficiency_se", 0.0)),
            n_permutations=int(document.get("n_permutations", 0)),
        )


def score_function(model: IsolationForestModel) -> ScoreFunction:
    """Batched anomaly score of the forest as a plain ``(n, d) -> (n,)`` callable."""
    return lambda rows: anomaly_scores(model, rows)


def _evaluate(f: ScoreFunction, rows: np.ndarray) -> np.ndarray:
    out = np.empty(rows.shape[0], dtype=float)
    for start in range(0, rows.shape[0], _CHUNK_ROWS):
        out[start : start + _CHUNK_ROWS] = np.asarray(
            f(rows[start : start + _CHUNK_ROWS]), dtype=float
        ).reshape(-1)
    return out


def _background_rows(background: Union[FeatureMatrix, np.ndarray], d: int) -> np.ndarray:
    if isinstance(background, FeatureMatrix):
        background = background.values
    rows = np.asarray(background, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(1, -1)
    if rows.shape[0] == 0:
        raise EmptyBackground("Shapley attribution needs at least one background row")
    if rows.shape[1] != d:
        raise DimensionMismatch(f"Background has {rows.shape[1]} features, x has {d}")
    return rows


def _names(feature_names: Optional[Sequence[str]], d: int, model=None) -> List[str]:
    if feature_names is not None:
        return list(feature_names)
    if model is not None:
        return list(model.feature_names)
    return [f"f{i}" for i in range(d)]


def shapley_attribution(
    model: Union[IsolationForestModel, ScoreFunction],
    x: np.ndarray,
    background: Union[FeatureMatrix, np.ndarray],
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
) -> AttributionVector:
    """Permutation-sampling Shapley values of the score at x.

    Each permutation draws one background row uniformly, switches features to
    their x values in permutation order and credits each feature with the
    resulting score change. Standard errors are over permutations.

    Raises:
        EmptyBackground: background has no rows
    """
    forest = model if isinstance(model, IsolationForestModel) else None
    f = score_function(forest) if forest is not None else model
    x = np.asarray(x, dtype=float).ravel()
    d = x.size
    rows = _background_rows(background, d)
    if n_permutations < 2:
        raise ValueError(f"n_permutations must be at least 2, got {n_permutations}")

    rng = np.random.default_rng(seed)
    orders = np.array([rng.permutation(d) for _ in range(n_permutations)])
    picks = rng.integers(0, rows.shape[0], size=n_permutations)

    switched = np.tri(d + 1, d, k=-1, dtype=bool)
    samples = np.empty((n_permutations, d), dtype=float)
    starts = np.empty(n_permutations, dtype=float)
    per_chunk = max(1, _CHUNK_ROWS // (d + 1))
    for chunk_start in range(0, n_permutations, per_chunk):
        chunk = range(chunk_start, min(n_permutations, chunk_start + per_chunk))
        coalitions = np.empty((len(chunk), d + 1, d), dtype=float)
        for slot, p in enumerate(chunk):
            order = orders[p]
            base = rows[picks[p]]
            coalitions[slot][:, order] = np.where(switched, x[order], base[order])
        scores = _evaluate(f, coalitions.reshape(-1, d)).reshape(len(chunk), d + 1)
        for slot, p in enumerate(chunk):
            samples[p, orders[p]] = np.diff(scores[slot])
            starts[p] = scores[slot, 0]

    base_value = float(np.mean(_evaluate(f, rows)))
    score = float(_evaluate(f, x.reshape(1, -1))[0])
    attribution = AttributionVector(
        feature_names=_names(feature_names, d, forest),
        values=samples.mean(axis=0),
        base_value=base_value,
        score=score,
        method="permutation",
        standard_errors=samples.std(axis=0, ddof=1) / np.sqrt(n_permutations),
        efficiency_se=float(starts.std(ddof=1) / np.sqrt(n_permutations)),
        n_permutations=n_permutations,
    )
    logger.debug(
        f"Sampled Shapley over {d} features, {n_permutations} permutations; "
        f"efficiency gap {attribution.efficiency_gap:.3g} (se {attribution.efficiency_se:.3g})"
    )
    return attribution


def exact_shapley(
    f: Union[IsolationForestModel, ScoreFunction],
    x: np.ndarray,
    background: Union[FeatureMatrix, np.ndarray],
    feature_names: Optional[Sequence[str]] = None,
) -> AttributionVector:
    """Shapley values by enumerating all 2^d coalitions.

    ``background`` is either one baseline vector or a matrix whose rows the
    coalition value is averaged over.

    Raises:
        TooManyFeatures: d > 12
    """
    forest = f if isinstance(f, IsolationForestModel) else None
    f = score_function(forest) if forest is not None else f
    x = np.asarray(x, dtype=float).ravel()
    d = x.size
    if d > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"Exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {d}")
    rows = _background_rows(background, d)

    masks = np.arange(2**d)
    members = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)
    coalitions = np.where(members[:, None, :], x, rows[None, :, :])
    values = _evaluate(f, coalitions.reshape(-1, d)).reshape(2**d, rows.shape[0]).mean(axis=1)

    sizes = members.sum(axis=1)
    weights = np.array([1.0 / (d * comb(d - 1, s, exact=True)) for s in range(d)])
    phi = np.empty(d, dtype=float)
    for i in range(d):
        without = masks[~members[:, i]]
        phi[i] = float(np.sum(weights[sizes[without]] * (values[without | (1 << i)] - values[without])))

    return AttributionVector(
        feature_names=_names(feature_names, d, forest),
        values=phi,
        base_value=float(values[0]),
        score=float(values[-1]),
        method="exact",
    )
