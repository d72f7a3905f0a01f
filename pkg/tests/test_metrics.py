"""Tests for binary metrics, AUC and separability diagnostics."""

import numpy as np
import pytest

from schemas.results import PredictionRecord
from scripts.metrics import (
    MetricsError,
    accuracy_by_source,
    auc_from_scores,
    binary_metrics,
    pca_project,
    roc_auc,
    silhouette_score,
)


def records(probs, labels, sources=None) -> list[PredictionRecord]:
    sources = sources or [None] * len(probs)
    return [
        PredictionRecord(id=f"s{i}", label=int(y), prob=float(p), source=s)
        for i, (p, y, s) in enumerate(zip(probs, labels, sources))
    ]


def pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins / (pos.size * neg.size))


class TestBinaryMetrics:
    """Confusion counts and derived metrics."""

    def test_worked_example(self):
        """One of each outcome gives 0.5 everywhere."""
        report = binary_metrics(records([0.9, 0.4, 0.2, 0.6], [1, 1, 0, 0]))
        assert (report.tp, report.fn, report.tn, report.fp) == (1, 1, 1, 1)
        assert report.accuracy == report.precision == report.recall == report.f1 == 0.5
        assert report.auc == 0.75

    def test_threshold_is_strict(self):
        """A probability equal to the threshold counts as fake."""
        report = binary_metrics(records([0.5, 0.5], [1, 0]))
        assert (report.tp, report.fn, report.tn, report.fp) == (0, 1, 1, 0)

    def test_identities(self):
        """Counts sum to N and the derived metrics follow from them."""
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 60))
            labels = rng.integers(0, 2, size=n)
            report = binary_metrics(records(rng.random(n), labels))
            assert report.tp + report.fp + report.tn + report.fn == n
            assert report.accuracy == (report.tp + report.tn) / n
            if report.precision + report.recall > 0:
                expected = 2 * report.precision * report.recall / (report.precision + report.recall)
                assert report.f1 == pytest.approx(expected)

    def test_undefined_precision_is_zero(self):
        """No predicted reals gives precision 0 rather than an error."""
        report = binary_metrics(records([0.1, 0.2], [1, 0]))
        assert report.precision == 0.0 and report.f1 == 0.0

    def test_single_class_has_no_auc(self):
        """AUC is omitted when one class is absent."""
        assert binary_metrics(records([0.9, 0.8], [1, 1])).auc is None

    def test_empty_rejected(self):
        """An empty record set is an error."""
        with pytest.raises(MetricsError):
            binary_metrics([])

    def test_accuracy_by_source(self):
        """Accuracy is broken down by source tag."""
        recs = records([0.9, 0.1, 0.8, 0.3], [1, 0, 0, 1], ["real-orig", "fake-method-1", "fake-method-1", "real-orig"])
        assert accuracy_by_source(recs) == {"fake-method-1": 0.5, "real-orig": 0.5}


class TestAUC:
    """Mann-Whitney AUC."""

    def test_worked_examples(self):
        """Perfect ranking, a tie and a partial ranking."""
        assert auc_from_scores(np.array([0.9, 0.8, 0.1, 0.2]), np.array([1, 1, 0, 0])) == 1.0
        assert auc_from_scores(np.array([0.5, 0.5]), np.array([1, 0])) == 0.5
        assert auc_from_scores(np.array([0.8, 0.4, 0.6, 0.2]), np.array([1, 1, 0, 0])) == 0.75

    def test_equals_pairwise_count(self):
        """AUC equals the exhaustive pairwise count, ties counted half."""
        rng = np.random.default_rng(1)
        for _ in range(1000):
            n = int(rng.integers(2, 201))
            labels = rng.integers(0, 2, size=n)
            labels[0], labels[1] = 0, 1
            scores = rng.integers(0, 10, size=n) / 10.0
            assert auc_from_scores(scores, labels) == pairwise_auc(scores, labels)

    def test_invariant_to_monotone_transform(self):
        """A strictly increasing transform of the scores leaves AUC unchanged."""
        rng = np.random.default_rng(2)
        scores = rng.random(100)
        labels = rng.integers(0, 2, size=100)
        labels[:2] = [0, 1]
        assert auc_from_scores(np.exp(3 * scores), labels) == auc_from_scores(scores, labels)

    def test_complement(self):
        """Reversing the scores gives 1 - AUC."""
        rng = np.random.default_rng(3)
        scores = rng.random(50)
        labels = np.array([0, 1] * 25)
        assert auc_from_scores(-scores, labels) == pytest.approx(1.0 - auc_from_scores(scores, labels))

    def test_single_class_rejected(self):
        """AUC is undefined for one class."""
        with pytest.raises(MetricsError):
            roc_auc(records([0.1, 0.9], [1, 1]))


class TestPCA:
    """Two-dimensional projection."""

    def test_two_dimensional_data_keeps_distances(self):
        """Projecting 2-D data preserves all pairwise distances."""
        x = np.random.default_rng(4).normal(size=(20, 2))
        xy = pca_project(x)
        d_in = np.linalg.norm(x[:, None] - x[None, :], axis=-1)
        d_out = np.linalg.norm(xy[:, None] - xy[None, :], axis=-1)
        np.testing.assert_allclose(d_out, d_in, atol=1e-5)

    def test_duplicates_coincide(self):
        """Identical points project to identical points."""
        x = np.random.default_rng(5).normal(size=(10, 6))
        x[3] = x[7]
        xy = pca_project(x)
        np.testing.assert_allclose(xy[3], xy[7])

    def test_captures_at_least_random_projection_variance(self):
        """The top-2 projection has at least the variance of a random 2-D projection."""
        rng = np.random.default_rng(6)
        x = rng.normal(size=(200, 8)) * np.arange(1, 9)
        captured = pca_project(x).var(axis=0).sum()
        for _ in range(20):
            q, _ = np.linalg.qr(rng.normal(size=(8, 2)))
            assert captured >= ((x - x.mean(axis=0)) @ q).var(axis=0).sum() - 1e-9

    def test_degenerate_inputs(self):
        """Too few points and zero-variance data are rejected."""
        with pytest.raises(MetricsError):
            pca_project(np.zeros((2, 4)))
        with pytest.raises(MetricsError):
            pca_project(np.ones((5, 4)))


class TestSilhouette:
    """Label silhouette of embeddings."""

    def test_worked_example(self):
        """Two tight, distant pairs score about 0.90."""
        x = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        assert silhouette_score(x, [0, 0, 1, 1]) == pytest.approx(0.9002, abs=1e-3)

    def test_random_labels_near_zero(self):
        """Labels unrelated to an isotropic blob give a silhouette near 0."""
        for seed in range(10):
            rng = np.random.default_rng(seed)
            score = silhouette_score(rng.normal(size=(200, 4)), rng.integers(0, 2, size=200))
            assert abs(score) < 0.1

    def test_coincident_classes_not_positive(self):
        """Classes that share the same location score at most 0."""
        x = np.zeros((4, 2))
        assert silhouette_score(x, [0, 0, 1, 1]) <= 0.0

    def test_single_class_rejected(self):
        """Silhouette needs two classes."""
        with pytest.raises(MetricsError):
            silhouette_score(np.random.default_rng(0).normal(size=(5, 2)), [1] * 5)

    def test_subsampling_is_seeded(self):
        """Capped classes are subsampled reproducibly."""
        rng = np.random.default_rng(7)
        x = rng.normal(size=(300, 3))
        labels = rng.integers(0, 2, size=300)
        a = silhouette_score(x, labels, max_per_class=50, seed=1)
        b = silhouette_score(x, labels, max_per_class=50, seed=1)
        assert a == b
