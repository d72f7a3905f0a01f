#!/usr/bin/env python3
"""
Machine-readable self test: loss oracles, gradient checks and worked examples.

Prints one JSON status document; "ready" is true only when every check passes.

Usage:
    uv run python scripts/selftest.py
    dfdesk selftest
"""

import json
import math
import sys
from pathlib import Path

import numpy as np
import structlog

# Add project root to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from schemas.model import BackboneSpec, LayerSpec, OptimConfig, SchedulerConfig, SchedulerState, SupConConfig  # noqa: E402
from schemas.results import PredictionRecord  # noqa: E402
from scripts.ensemble import majority_vote_render  # noqa: E402
from scripts.gradcheck import finite_diff_check  # noqa: E402
from scripts.losses import EmbeddingBatch, bce_logits_loss, l2_normalize_backward, l2_normalize_rows, supcon_loss  # noqa: E402
from scripts.metrics import auc_from_scores, binary_metrics  # noqa: E402
from scripts.nn_core import build_backbone, build_model  # noqa: E402
from scripts.optim import OptimizerState, adamw_step, plateau_step  # noqa: E402
from scripts.sampling import partition_ids  # noqa: E402

logger = structlog.get_logger()

# Counts from the published data-sampling description
PUBLISHED_REALS = 42_690
PUBLISHED_OFFLINE_REALS = 21_335
PUBLISHED_FAKES = 219_470
PUBLISHED_GENERATED = 12_200

GRADCHECK_TEMPERATURE = 0.5


def supcon_oracle(z: np.ndarray, y: np.ndarray, temperature: float) -> float:
    """Double-loop SupCon in float64; 0 when no anchor has a positive."""
    n = len(y)
    total, anchors = 0.0, 0
    for i in range(n):
        positives = [p for p in range(n) if p != i and y[p] == y[i]]
        if not positives:
            continue
        denom = sum(math.exp(float(z[i] @ z[a]) / temperature) for a in range(n) if a != i)
        terms = [math.log(math.exp(float(z[i] @ z[p]) / temperature) / denom) for p in positives]
        total += -sum(terms) / len(positives)
        anchors += 1
    return total / anchors if anchors else 0.0


def bce_oracle(logit: float, target: int) -> float:
    p = 1.0 / (1.0 + math.exp(-logit))
    return -(target * math.log(p) + (1 - target) * math.log(1.0 - p))


def check_loss_oracles(batches: int = 200, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    worst_supcon = 0.0
    for k in range(batches):
        n = int(rng.integers(2, 17))
        d = int(rng.integers(1, 9))
        tau = (0.07, 0.5, 1.0)[k % 3]
        z = l2_normalize_rows(rng.normal(size=(n, d)) + 1e-3)
        y = rng.integers(0, 2, size=n)
        got = supcon_loss(EmbeddingBatch(z, y), SupConConfig(temperature=tau)).loss
        worst_supcon = max(worst_supcon, abs(got - supcon_oracle(z, y, tau)))

    logits = np.linspace(-20.0, 20.0, 81)
    worst_bce = 0.0
    for target in (0, 1):
        targets = np.full_like(logits, target)
        got = bce_logits_loss(logits, targets).loss
        expected = float(np.mean([bce_oracle(x, target) for x in logits]))
        worst_bce = max(worst_bce, abs(got - expected))
    return {
        "passed": worst_supcon <= 1e-6 and worst_bce <= 1e-6,
        "supcon_max_abs_error": worst_supcon,
        "bce_max_abs_error": worst_bce,
    }


def _weighted_sum_loss(weights: np.ndarray):
    def loss_fn(out: np.ndarray) -> tuple[float, np.ndarray]:
        return float(np.sum(out * weights)), weights

    return loss_fn


def supcon_loss_fn(labels: np.ndarray, temperature: float = GRADCHECK_TEMPERATURE):
    """loss_fn for finite_diff_check: SupCon on L2-normalized model outputs."""
    cfg = SupConConfig(temperature=temperature)

    def loss_fn(out: np.ndarray) -> tuple[float, np.ndarray]:
        z = l2_normalize_rows(out)
        result = supcon_loss(EmbeddingBatch(z, labels), cfg)
        return result.loss, l2_normalize_backward(out, result.grad)

    return loss_fn


def bce_loss_fn(targets: np.ndarray):
    def loss_fn(out: np.ndarray) -> tuple[float, np.ndarray]:
        result = bce_logits_loss(out[:, 0], targets)
        return result.loss, result.grad.reshape(-1, 1)

    return loss_fn


def layer_cases() -> dict[str, tuple[list[LayerSpec], tuple[int, ...]]]:
    """One small network per layer kind; input shape includes the batch axis."""
    return {
        "dense": ([LayerSpec.dense(4, 3)], (5, 4)),
        "conv3x3": ([LayerSpec.conv(2, 3)], (2, 5, 5, 2)),
        "conv5x5": ([LayerSpec.conv(2, 2, kernel=5)], (2, 6, 6, 2)),
        "batchnorm": ([LayerSpec.batchnorm(3)], (6, 3)),
        "dropout": ([LayerSpec.dropout(0.3)], (6, 4)),
        "relu": ([LayerSpec(kind="relu")], (4, 5)),
        "maxpool2": ([LayerSpec(kind="maxpool2")], (2, 4, 4, 2)),
        "global_avg_pool": ([LayerSpec(kind="global_avg_pool")], (2, 4, 4, 3)),
        "patchify": ([LayerSpec(kind="patchify", patch=2)], (2, 4, 4, 3)),
    }


def check_layer_gradients(seed: int = 0) -> dict:
    results = {}
    for kind, (specs, shape) in layer_cases().items():
        rng = np.random.default_rng(seed)
        model = build_model(kind, specs, shape[1:], seed=seed)
        x = rng.normal(size=shape)
        out_shape = (shape[0], *model.output_shape)
        report = finite_diff_check(model, _weighted_sum_loss(rng.normal(size=out_shape)), x, seed=seed)
        results[kind] = report.summary()
    return results


def check_loss_gradients(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    identity = build_model("identity", [], (6,), seed=seed)
    z = rng.normal(size=(8, 6))
    labels = np.array([0, 1] * 4)
    logits_model = build_model("identity", [], (1,), seed=seed)
    logits = rng.normal(scale=3.0, size=(8, 1))
    return {
        "supcon": finite_diff_check(identity, supcon_loss_fn(labels), z, seed=seed).summary(),
        "bce": finite_diff_check(logits_model, bce_loss_fn(labels), logits, seed=seed).summary(),
    }


def check_backbone_gradients(seed: int = 0, image_size: int = 8, embedding_dim: int = 8) -> dict:
    rng = np.random.default_rng(seed)
    x = rng.random(size=(8, image_size, image_size, 3))
    labels = np.array([0, 1] * 4)
    results = {}
    for name in ("local-cnn", "multiscale-cnn", "global-mlp"):
        spec = BackboneSpec.preset(name, embedding_dim=embedding_dim, image_size=image_size)
        model = build_backbone(spec, seed)
        results[name] = finite_diff_check(model, supcon_loss_fn(labels), x, seed=seed).summary()
    return results


def _approx(a: float, b: float, tol: float = 1e-12) -> bool:
    return abs(a - b) <= tol


def check_worked_examples() -> dict:
    """Hand-checkable cases for the ensemble rule, metrics, optimizer and scheduler."""
    checks = {}

    d1 = majority_vote_render([0.9, 0.6, 0.4])
    d2 = majority_vote_render([0.3, 0.45, 0.7])
    d3 = majority_vote_render([0.5, 0.5, 0.9])
    checks["ensemble_rule"] = (
        (d1.vote, d1.rendered) == ("real", 0.9)
        and (d2.vote, d2.rendered) == ("fake", 0.3)
        and (d3.vote, d3.rendered) == ("fake", 0.5)
    )

    records = [
        PredictionRecord(id="a", label=1, prob=0.9),
        PredictionRecord(id="b", label=1, prob=0.4),
        PredictionRecord(id="c", label=0, prob=0.2),
        PredictionRecord(id="d", label=0, prob=0.6),
    ]
    m = binary_metrics(records)
    checks["binary_metrics"] = (m.tp, m.fn, m.tn, m.fp) == (1, 1, 1, 1) and all(
        _approx(v, 0.5) for v in (m.accuracy, m.precision, m.recall, m.f1)
    )
    checks["roc_auc"] = (
        auc_from_scores(np.array([0.9, 0.8, 0.1, 0.2]), np.array([1, 1, 0, 0])) == 1.0
        and auc_from_scores(np.array([0.5, 0.5]), np.array([1, 0])) == 0.5
        and auc_from_scores(np.array([0.8, 0.4, 0.6, 0.2]), np.array([1, 1, 0, 0])) == 0.75
    )

    theta = {"w": np.array([1.0, -2.0], dtype=np.float64)}
    cfg = OptimConfig(algorithm="adamw", lr=3e-5, weight_decay=1e-2)
    adamw_step(theta, {"w": np.zeros(2)}, OptimizerState.zeros_like(theta), cfg)
    checks["adamw_decay_only"] = bool(np.allclose(theta["w"], [1.0 - 3e-7, -2.0 + 6e-7], rtol=0, atol=1e-12))

    state = SchedulerState.start(5e-5, SchedulerConfig(factor=0.5, patience=1))
    lrs = []
    for loss in (1.0, 0.95, 0.96, 0.97):
        state = plateau_step(state, loss)
        lrs.append(state.current_lr)
    checks["plateau"] = lrs == [5e-5, 5e-5, 5e-5, 2.5e-5]

    reals = [f"r{i}" for i in range(PUBLISHED_REALS + PUBLISHED_OFFLINE_REALS)]
    fakes = [f"f{i}" for i in range(PUBLISHED_FAKES)]
    generated = [f"g{i}" for i in range(PUBLISHED_GENERATED)]
    plan = partition_ids(reals, fakes, generated, n_models=3, seed=0)
    counts = [plan.trainset_counts(k) for k in range(3)]
    checks["sampling_arithmetic"] = [c["real"] for c in counts] == [64_025] * 3 and sorted(
        c["fake"] for c in counts
    ) == [85_356, 85_357, 85_357]
    return checks


def run_selftest(seed: int = 0) -> dict:
    """Return the complete self-test status."""
    status = {
        "seed": seed,
        "loss_oracles": check_loss_oracles(seed=seed),
        "layer_gradients": check_layer_gradients(seed=seed),
        "loss_gradients": check_loss_gradients(seed=seed),
        "backbone_gradients": check_backbone_gradients(seed=seed),
        "worked_examples": check_worked_examples(),
        "ready": False,  # Will be set below
    }
    gradient_groups = ("layer_gradients", "loss_gradients", "backbone_gradients")
    status["ready"] = all(
        [
            status["loss_oracles"]["passed"],
            *(report["passed"] for group in gradient_groups for report in status[group].values()),
            *status["worked_examples"].values(),
        ]
    )
    logger.info("selftest_complete", ready=status["ready"])
    return status


def main():
    status = run_selftest()
    print(json.dumps(status, indent=2))
    sys.exit(0 if status["ready"] else 1)


if __name__ == "__main__":
    main()
