"""Tests for sampled and exact Shapley attribution."""
import csv

import numpy as np
import pytest

from services.feedback_service.app.isolation_forest import fit_forest
from services.feedback_service.app.shapley import (
    AttributionVector,
    exact_shapley,
    shapley_attribution,
)
from services.shared.errors import EmptyBackground, TooManyFeatures

TOY_MODELS = 20
PERMUTATIONS = 400


def additive(X):
    X = np.atleast_2d(X)
    return 2.0 * X[:, 0] + X[:, 1] ** 2 - np.sin(X[:, 2])


def ignores_last(X):
    X = np.atleast_2d(X)
    return X[:, 0] * X[:, 1] + np.exp(X[:, 0])


def random_model(rng, d):
    weights = rng.normal(size=(d, 4))
    head = rng.normal(size=4)
    return lambda X: np.tanh(np.atleast_2d(X) @ weights) @ head


class TestSampledShapley:
    def test_dummy_feature_gets_zero(self):
        rng = np.random.default_rng(0)
        attribution = shapley_attribution(ignores_last, rng.normal(size=3), rng.normal(size=(20, 3)), 100, seed=1)
        assert attribution.values[2] == 0.0

    def test_single_background_row_is_exact_for_additive(self):
        x = np.array([1.0, 2.0, 0.5])
        baseline = np.array([[0.0, 1.0, -0.5]])
        attribution = shapley_attribution(additive, x, baseline, 50, seed=3)
        expected = [2.0, 4.0 - 1.0, -np.sin(0.5) + np.sin(-0.5)]
        assert attribution.values == pytest.approx(expected, abs=1e-12)
        assert attribution.efficiency_gap == pytest.approx(0.0, abs=1e-12)

    def test_additive_against_background_expectation(self):
        rng = np.random.default_rng(5)
        x = np.array([1.0, -1.5, 0.3])
        background = rng.normal(size=(50, 3))
        attribution = shapley_attribution(additive, x, background, PERMUTATIONS, seed=9)
        terms = [
            lambda v: 2.0 * v,
            lambda v: v**2,
            lambda v: -np.sin(v),
        ]
        for i, g in enumerate(terms):
            expected = g(x[i]) - np.mean(g(background[:, i]))
            assert abs(attribution.values[i] - expected) <= 4 * attribution.standard_errors[i] + 1e-12

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(2)
        x, background = rng.normal(size=4), rng.normal(size=(10, 4))
        model = random_model(rng, 4)
        first = shapley_attribution(model, x, background, 50, seed=7)
        second = shapley_attribution(model, x, background, 50, seed=7)
        assert np.array_equal(first.values, second.values)
        assert first.base_value == second.base_value

    def test_empty_background(self):
        with pytest.raises(EmptyBackground):
            shapley_attribution(additive, np.zeros(3), np.zeros((0, 3)), 10)

    def test_matches_exact_enumeration(self):
        rng = np.random.default_rng(2024)
        within, total = 0, 0
        for _ in range(TOY_MODELS):
            d = int(rng.integers(2, 9))
            model = random_model(rng, d)
            x = rng.normal(size=d)
            background = rng.normal(size=(8, d))
            exact = exact_shapley(model, x, background)
            sampled = shapley_attribution(model, x, background, PERMUTATIONS, seed=int(rng.integers(1 << 31)))
            assert sampled.base_value == pytest.approx(exact.base_value)
            assert sampled.score == pytest.approx(exact.score)
            distance = np.abs(sampled.values - exact.values)
            bound = 3 * sampled.standard_errors + 1e-12
            within += int(np.sum(distance <= bound))
            total += d
            assert np.all(distance <= 2 * bound)
        assert within / total >= 0.9

    def test_efficiency_within_standard_errors(self):
        rng = np.random.default_rng(12)
        model = random_model(rng, 6)
        attribution = shapley_attribution(model, rng.normal(size=6), rng.normal(size=(30, 6)), PERMUTATIONS, seed=4)
        assert abs(attribution.efficiency_gap) <= 4 * attribution.efficiency_se + 1e-12


class TestExactShapley:
    def test_single_feature(self):
        f = lambda X: 3.0 * np.atleast_2d(X)[:, 0] + 1.0
        attribution = exact_shapley(f, np.array([2.0]), np.array([0.5]))
        assert attribution.values[0] == pytest.approx(f(np.array([2.0]))[0] - f(np.array([0.5]))[0])

    def test_symmetric_features(self):
        f = lambda X: np.atleast_2d(X)[:, 0] * np.atleast_2d(X)[:, 1]
        attribution = exact_shapley(f, np.array([1.0, 1.0]), np.array([0.0, 0.0]))
        assert attribution.values.tolist() == pytest.approx([0.5, 0.5])

    def test_efficiency_random_function(self):
        rng = np.random.default_rng(6)
        model = random_model(rng, 6)
        attribution = exact_shapley(model, rng.normal(size=6), rng.normal(size=6))
        assert abs(attribution.efficiency_gap) <= 1e-10

    def test_efficiency_with_background_matrix(self):
        rng = np.random.default_rng(8)
        model = random_model(rng, 5)
        background = rng.normal(size=(12, 5))
        attribution = exact_shapley(model, rng.normal(size=5), background)
        assert attribution.base_value == pytest.approx(float(np.mean(model(background))))
        assert abs(attribution.efficiency_gap) <= 1e-10

    def test_too_many_features(self):
        with pytest.raises(TooManyFeatures):
            exact_shapley(additive, np.zeros(13), np.zeros(13))


class TestForestAttribution:
    def test_forest_efficiency(self):
        rng = np.random.default_rng(1)
        nurse = rng.normal(size=(200, 3))
        forest = fit_forest(nurse, n_trees=20, subsample_size=64, seed=3, feature_names=["a", "b", "c"])
        x = np.array([4.0, 0.0, 0.0])
        exact = exact_shapley(forest, x, nurse[:20])
        assert exact.feature_names == ["a", "b", "c"]
        assert abs(exact.efficiency_gap) <= 1e-10
        assert exact.values[0] == max(exact.values)

        sampled = shapley_attribution(forest, x, nurse, 200, seed=5)
        assert abs(sampled.efficiency_gap) <= 4 * sampled.efficiency_se + 1e-12


class TestAttributionCsv:
    def test_columns_and_ranks(self, tmp_path):
        attribution = AttributionVector(
            feature_names=["a", "b", "c"], values=np.array([0.3, -0.5, 0.1]), base_value=0.4, score=0.3
        )
        path = tmp_path / "attributions.csv"
        attribution.write_csv(path)
        with open(path, newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert list(rows[0]) == ["feature_name", "shapley_value", "rank"]
        assert [(r["feature_name"], r["rank"]) for r in rows] == [("b", "1"), ("a", "2"), ("c", "3")]
