"""
Binary-classification metrics and embedding separability diagnostics.

Label 1 (real) is the positive class; a record is predicted real when its
probability is strictly above the threshold.
"""

from collections import defaultdict
from typing import Sequence

import numpy as np
import structlog
from scipy.stats import rankdata
from sklearn import metrics as sk_metrics

from schemas.results import MetricsReport, PredictionRecord
from scripts.seeding import derive_rng

logger = structlog.get_logger()


class MetricsError(Exception):
    """Raised for inputs a metric is undefined on."""

    pass


def _scores_labels(records: Sequence[PredictionRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise MetricsError("no records")
    scores = np.array([r.prob for r in records], dtype=np.float64)
    labels = np.array([r.label for r in records], dtype=np.int64)
    return scores, labels


def auc_from_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """
    Mann-Whitney AUC: P(random positive outranks random negative), ties count half.

    Raises:
        MetricsError: If only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc(records: Sequence[PredictionRecord]) -> float:
    return auc_from_scores(*_scores_labels(records))


def binary_metrics(records: Sequence[PredictionRecord], threshold: float = 0.5) -> MetricsReport:
    """
    Confusion counts and derived metrics; undefined precision/recall/F1 are 0.
    AUC is included when both classes are present.

    Raises:
        MetricsError: On an empty record set.
    """
    scores, labels = _scores_labels(records)
    predicted = scores > threshold
    actual = labels == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    tn = int(np.sum(~predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    n = tp + fp + tn + fn

    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    auc = auc_from_scores(scores, labels) if 0 < int(actual.sum()) < n else None

    return MetricsReport(
        accuracy=(tp + tn) / n,
        f1=f1,
        precision=precision,
        recall=recall,
        auc=auc,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        threshold=threshold,
    )


def accuracy_by_source(records: Sequence[PredictionRecord], threshold: float = 0.5) -> dict[str, float]:
    """Accuracy per manifest source tag, sorted by tag."""
    hits: dict[str, list[bool]] = defaultdict(list)
    for r in records:
        hits[r.source or "unknown"].append((r.prob > threshold) == (r.label == 1))
    return {source: float(np.mean(values)) for source, values in sorted(hits.items())}


def pca_project(embeddings: np.ndarray) -> np.ndarray:
    """
    Project onto the top two principal axes of the centered data.

    Each output column is sign-fixed so its largest-magnitude entry is positive.

    Raises:
        MetricsError: For fewer than three points, fewer than two dimensions,
            or data with zero variance.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise MetricsError(f"need at least 3 points, got shape {x.shape}")
    if x.shape[1] < 2:
        raise MetricsError("need at least 2 dimensions")
    centered = x - x.mean(axis=0)
    if not np.any(np.abs(centered) > 1e-12):
        raise MetricsError("data has zero variance (rank 0)")
    cov = centered.T @ centered / (x.shape[0] - 1)
    _, eigvecs = np.linalg.eigh(cov)
    axes = eigvecs[:, ::-1][:, :2]
    projected = centered @ axes
    for j in range(2):
        pivot = int(np.argmax(np.abs(projected[:, j])))
        if projected[pivot, j] < 0:
            projected[:, j] = -projected[:, j]
    return projected


def _subsample(labels: np.ndarray, max_per_class: int, seed: int) -> np.ndarray:
    keep = []
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        if idx.size > max_per_class:
            rng = derive_rng(seed, "silhouette", str(label))
            idx = np.sort(rng.choice(idx, size=max_per_class, replace=False))
        keep.append(idx)
    return np.sort(np.concatenate(keep))


def silhouette_score(
    embeddings: np.ndarray,
    labels: np.ndarray | Sequence,
    max_per_class: int = 2000,
    seed: int = 0,
) -> float:
    """
    Mean silhouette (b - a) / max(a, b) with Euclidean distances, labels as clusters.

    Classes larger than max_per_class are subsampled with a seeded draw.

    Raises:
        MetricsError: If fewer than two classes are present.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise MetricsError("silhouette needs at least two classes")
    keep = _subsample(labels, max_per_class, seed)
    x, labels = x[keep], labels[keep]
    if labels.size <= np.unique(labels).size:
        raise MetricsError("silhouette needs more points than classes")
    return float(sk_metrics.silhouette_score(x, labels, metric="euclidean"))
