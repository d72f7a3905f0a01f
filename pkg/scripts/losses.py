"""
Supervised contrastive loss and binary cross-entropy with logits.

Both return the loss together with its exact gradient with respect to the
input, computed in float64 and cast back to the input dtype.
"""

from dataclasses import dataclass

import numpy as np
import structlog
from scipy.special import expit

from schemas.model import SupConConfig

logger = structlog.get_logger()


class LossError(Exception):
    """Raised for invalid loss inputs."""

    pass


@dataclass
class EmbeddingBatch:
    """N x d embeddings with binary labels (1 = real, 0 = fake)."""

    z: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        self.z = np.asarray(self.z)
        self.y = np.asarray(self.y).reshape(-1)
        if self.z.ndim != 2:
            raise LossError(f"embeddings must be N x d, got shape {self.z.shape}")
        if self.z.shape[0] != self.y.shape[0]:
            raise LossError(f"{self.z.shape[0]} embeddings but {self.y.shape[0]} labels")
        if self.z.shape[0] < 2:
            raise LossError("a contrastive batch needs at least two samples")


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    # set when no anchor in the batch had a positive
    warning: bool = False


def l2_normalize_rows(z: np.ndarray) -> np.ndarray:
    """
    Divide each row by its Euclidean norm.

    Raises:
        LossError: If a row is all zeros (names the row index).
    """
    z = np.asarray(z)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    zero_rows = np.flatnonzero(norms[:, 0] == 0)
    if zero_rows.size:
        raise LossError(f"row {int(zero_rows[0])} has zero norm")
    return z / norms


def l2_normalize_backward(z: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. raw rows z given the gradient w.r.t. z / |z|."""
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    u = z / norms
    radial = (u * grad_unit).sum(axis=1, keepdims=True)
    return (grad_unit - u * radial) / norms


def supcon_loss(batch: EmbeddingBatch, cfg: SupConConfig | None = None) -> LossResult:
    """
    Multi-positive supervised contrastive loss on unit-norm rows.

    For anchor i with positives P(i) (same label, excluding i) and contrast set
    A(i) (everyone but i):

        L_i = -1/|P(i)| * sum_p log( exp(z_i.z_p/t) / sum_a exp(z_i.z_a/t) )

    L is the mean of L_i over anchors that have at least one positive.
    A batch where no anchor has a positive returns loss 0, zero gradient and
    warning=True.
    """
    cfg = cfg or SupConConfig()
    z = batch.z.astype(np.float64)
    y = batch.y
    n = z.shape[0]
    tau = cfg.temperature

    logits = (z @ z.T) / tau
    off_diag = ~np.eye(n, dtype=bool)
    positives = (y[:, None] == y[None, :]) & off_diag
    pos_count = positives.sum(axis=1)
    valid = pos_count > 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        logger.warning("supcon_no_positives", batch_size=n)
        return LossResult(loss=0.0, grad=np.zeros_like(batch.z), warning=True)

    # row max over the contrast set, held constant
    masked = np.where(off_diag, logits, -np.inf)
    shifted = masked - masked.max(axis=1, keepdims=True)
    exp = np.where(off_diag, np.exp(shifted), 0.0)
    denom = exp.sum(axis=1, keepdims=True)
    log_prob = np.where(off_diag, shifted - np.log(denom), 0.0)
    softmax = exp / denom

    safe_count = np.where(valid, pos_count, 1)
    per_anchor = -(positives * log_prob).sum(axis=1) / safe_count
    loss = float(per_anchor[valid].sum() / n_valid)

    # dL/dlogits[i, a] = (softmax[i, a] - 1[a in P(i)] / |P(i)|) / n_valid for valid anchors
    g_logits = (softmax - positives / safe_count[:, None]) * valid[:, None] / n_valid
    grad = ((g_logits + g_logits.T) @ z) / tau
    return LossResult(loss=max(loss, 0.0), grad=grad.astype(batch.z.dtype, copy=False))


def bce_logits_loss(logits: np.ndarray, targets: np.ndarray) -> LossResult:
    """
    Mean binary cross-entropy on raw logits in the overflow-free form
    max(x, 0) - x*y + log(1 + exp(-|x|)); gradient (sigmoid(x) - y) / N.
    """
    logits = np.asarray(logits)
    x = logits.astype(np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise LossError(f"{x.size} logits but {y.size} targets")
    if x.size == 0:
        raise LossError("empty batch")
    if not np.all((y == 0) | (y == 1)):
        raise LossError("targets must be 0 or 1")
    n = x.size
    per_sample = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    grad = (expit(x) - y) / n
    return LossResult(loss=float(per_sample.mean()), grad=grad.reshape(logits.shape).astype(logits.dtype, copy=False))
