"""Isolation Forest built from scratch on numpy.

Trees are stored as flat node arrays so a whole batch of rows can walk a tree
level by level. A node with ``feature == -1`` is a leaf.
"""
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from services.feedback_service.app.features import FeatureMatrix
from services.shared.errors import DimensionMismatch, InsufficientData

logger = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649015329
DEFAULT_TREES = 100
DEFAULT_SUBSAMPLE = 256
DEFAULT_THRESHOLD = 0.5
LEAF = -1
FORMAT_VERSION = 1


def c_factor(n: int) -> float:
    """Average path length of an unsuccessful search in a BST of n points.

    c(n) = 2·H(n−1) − 2(n−1)/n with H(i) ≈ ln(i) + γ; c(2) = 1 and c(n ≤ 1) = 0.
    """
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1.0) + EULER_GAMMA) - 2.0 * (n - 1.0) / n


_c_vector = np.vectorize(c_factor, otypes=[float])


def tree_seed(seed: int, index: int) -> int:
    """Deterministic per-tree seed derived from the master seed."""
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()[:8]
    return int.from_bytes(digest, byteorder="big")


@dataclass(eq=False)
class IsolationTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    height_limit: int

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def is_single_leaf(self) -> bool:
        return self.n_nodes == 1

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "size": self.size.tolist(),
            "height_limit": self.height_limit,
        }

    @classmethod
    def from_dict(cls, document: dict) -> "IsolationTree":
        return cls(
            feature=np.asarray(document["feature"], dtype=np.int64),
            threshold=np.asarray(document["threshold"], dtype=float),
            left=np.asarray(document["left"], dtype=np.int64),
            right=np.asarray(document["right"], dtype=np.int64),
            size=np.asarray(document["size"], dtype=np.int64),
            height_limit=int(document["height_limit"]),
        )


class _TreeBuilder:
    def __init__(self, data: np.ndarray, rng: np.random.Generator, height_limit: int):
        self.data = data
        self.rng = rng
        self.height_limit = height_limit
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.size: List[int] = []

    def _new_node(self, size: int) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.size.append(size)
        return len(self.feature) - 1

    def build(self, rows: np.ndarray, depth: int) -> int:
        node = self._new_node(rows.size)
        if depth >= self.height_limit or rows.size <= 1:
            return node
        subset = self.data[rows]
        lows = subset.min(axis=0)
        highs = subset.max(axis=0)
        candidates = np.flatnonzero(highs > lows)
        if candidates.size == 0:
            return node

        feature = int(self.rng.choice(candidates))
        low, high = lows[feature], highs[feature]
        if np.nextafter(low, high) >= high:
            # adjacent floats: only high itself separates the two sides
            value = high
        else:
            value = self.rng.uniform(low, high)
            while not low < value < high:
                value = self.rng.uniform(low, high)

        goes_left = subset[:, feature] < value
        self.feature[node] = feature
        self.threshold[node] = float(value)
        self.left[node] = self.build(rows[goes_left], depth + 1)
        self.right[node] = self.build(rows[~goes_left], depth + 1)
        return node

    def tree(self) -> IsolationTree:
        return IsolationTree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            size=np.asarray(self.size, dtype=np.int64),
            height_limit=self.height_limit,
        )


def build_tree(X: np.ndarray, subsample_size: int, seed: int) -> IsolationTree:
    """One tree on a uniform subsample (without replacement) of X."""
    rng = np.random.default_rng(seed)
    rows = rng.choice(X.shape[0], size=subsample_size, replace=False)
    height_limit = int(math.ceil(math.log2(subsample_size)))
    builder = _TreeBuilder(X, rng, height_limit)
    builder.build(np.sort(rows), depth=0)
    return builder.tree()


def _as_rows(x: np.ndarray, n_features: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    rows = x.reshape(1, -1) if x.ndim == 1 else x
    if rows.ndim != 2 or rows.shape[1] != n_features:
        raise DimensionMismatch(f"Expected {n_features} features, got shape {x.shape}")
    return rows


def path_lengths(tree: IsolationTree, X: np.ndarray) -> np.ndarray:
    """h(x) for every row of X: edges to the reached leaf plus c(leaf size)."""
    X = np.asarray(X, dtype=float)
    nodes = np.zeros(X.shape[0], dtype=np.int64)
    edges = np.zeros(X.shape[0], dtype=float)
    active = tree.feature[nodes] != LEAF
    while active.any():
        idx = np.flatnonzero(active)
        current = nodes[idx]
        features = tree.feature[current]
        goes_left = X[idx, features] < tree.threshold[current]
        nodes[idx] = np.where(goes_left, tree.left[current], tree.right[current])
        edges[idx] += 1.0
        active = tree.feature[nodes] != LEAF
    return edges + _c_vector(tree.size[nodes])


def path_length(tree: IsolationTree, x: np.ndarray, n_features: Optional[int] = None) -> float:
    """h(x) of a single vector.

    Raises:
        DimensionMismatch: n_features given and x has a different length
    """
    x = np.asarray(x, dtype=float).ravel()
    if n_features is not None and x.size != n_features:
        raise DimensionMismatch(f"Expected {n_features} features, got {x.size}")
    used = tree.feature[tree.feature != LEAF]
    if used.size and used.max() >= x.size:
        raise DimensionMismatch(f"Tree splits on feature {used.max()} but x has {x.size} entries")
    return float(path_lengths(tree, x.reshape(1, -1))[0])


def score_from_path_length(mean_path_length, subsample_size: int):
    """s = 2^(−E[h] / c(ψ))."""
    return np.power(2.0, -np.asarray(mean_path_length, dtype=float) / c_factor(subsample_size))


@dataclass(eq=False)
class IsolationForestModel:
    trees: List[IsolationTree]
    subsample_size: int
    feature_names: List[str]
    seed: int
    label: Optional[int] = None

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def mean_path_lengths(self, X: np.ndarray) -> np.ndarray:
        rows = _as_rows(X, self.n_features)
        return np.mean([path_lengths(tree, rows) for tree in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "isolation_forest",
            "n_trees": self.n_trees,
            "subsample_size": self.subsample_size,
            "feature_names": self.feature_names,
            "seed": self.seed,
            "label": self.label,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "IsolationForestModel":
        trees = [IsolationTree.from_dict(tree) for tree in document["trees"]]
        if len(trees) != document.get("n_trees", len(trees)):
            raise ValueError("Forest document tree count does not match n_trees")
        return cls(
            trees=trees,
            subsample_size=int(document["subsample_size"]),
            feature_names=list(document["feature_names"]),
            seed=int(document["seed"]),
            label=document.get("label"),
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "IsolationForestModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_forest(
    X: Union[FeatureMatrix, np.ndarray],
    n_trees: int = DEFAULT_TREES,
    subsample_size: int = DEFAULT_SUBSAMPLE,
    seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
    n_jobs: int = 1,
) -> IsolationForestModel:
    """Fit an Isolation Forest.

    Each tree sees min(ψ, rows) rows drawn without replacement and grows to
    height ceil(log2 of that size). Tree i is seeded from (seed, i) alone, so
    the model does not depend on n_jobs.

    Raises:
        InsufficientData: fewer than 2 rows
    """
    if isinstance(X, FeatureMatrix):
        feature_names = X.feature_names
        X = X.values
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientData(f"Isolation Forest needs at least 2 rows, got shape {X.shape}")
    if n_trees < 1:
        raise ValueError(f"n_trees must be at least 1, got {n_trees}")
    if subsample_size < 2:
        raise ValueError(f"Subsample size must be at least 2, got {subsample_size}")

    effective = min(subsample_size, X.shape[0])
    if effective < subsample_size:
        logger.info(f"Subsample size clipped from {subsample_size} to {effective} rows")
    seeds = [tree_seed(seed, index) for index in range(n_trees)]

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(lambda s: build_tree(X, effective, s), seeds))
    else:
        trees = [build_tree(X, effective, s) for s in seeds]

    logger.info(f"Fitted {n_trees} isolation trees on {X.shape[0]} rows (ψ={effective}, seed={seed})")
    return IsolationForestModel(
        trees=trees,
        subsample_size=effective,
        feature_names=list(feature_names) if feature_names is not None else [f"f{i}" for i in range(X.shape[1])],
        seed=seed,
    )


def anomaly_scores(model: IsolationForestModel, X: np.ndarray) -> np.ndarray:
    """Batched scores in (0, 1); higher is more anomalous."""
    return score_from_path_length(model.mean_path_lengths(X), model.subsample_size)


def anomaly_score(model: IsolationForestModel, x: np.ndarray) -> float:
    """Score of a single vector.

    Raises:
        DimensionMismatch: x does not have the model's feature count
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch(f"anomaly_score expects one vector, got shape {x.shape}")
    return float(anomaly_scores(model, x)[0])


def classify(score: float, threshold: float = DEFAULT_THRESHOLD) -> int:
    """0 (student-like, anomalous) when score ≥ threshold, else 1 (nurse-like)."""
    return 0 if score >= threshold else 1


def fit_per_class_forests(
    matrix: FeatureMatrix,
    n_trees: int = DEFAULT_TREES,
    subsample_size: int = DEFAULT_SUBSAMPLE,
    seed: int = 0,
    n_jobs: int = 1,
) -> Dict[int, IsolationForestModel]:
    """One forest per activity label present in ``matrix.labels``.

    Labels with fewer than 2 windows are skipped with a warning.
    """
    if not matrix.labels:
        raise InsufficientData("Per-class forests need labelled windows")
    labels = np.asarray(matrix.labels)
    forests: Dict[int, IsolationForestModel] = {}
    for label in sorted(set(labels.tolist())):
        subset = matrix.rows_where(labels == label)
        if subset.n_rows < 2:
            logger.warning(f"Skipping class {label}: only {subset.n_rows} window(s)")
            continue
        forest = fit_forest(subset, n_trees, subsample_size, seed=seed + label, n_jobs=n_jobs)
        forest.label = int(label)
        forests[int(label)] = forest
    if not forests:
        raise InsufficientData("No activity class has at least 2 windows")
    return forests
