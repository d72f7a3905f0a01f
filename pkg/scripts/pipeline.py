"""
Two-stage training.

Stage 1 trains a backbone with the supervised contrastive loss on
L2-normalized embeddings (or, for the ablation, with BCE through a temporary
logit head). Stage 2 freezes the backbone, runs it in eval mode and trains
an MLP head with BCE. Every random draw (batch order, online augmentation,
dropout masks) comes from a keyed stream, so a run is fixed by its config,
seed and data.
"""

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog
from scipy.special import expit

from schemas.checkpoint import ModelCheckpoint
from schemas.dataset import DatasetManifest, ManifestRecord
from schemas.model import BackboneSpec, ClassifierHeadSpec, LayerSpec, OptimConfig, SchedulerState, StageConfig
from schemas.results import PredictionRecord, TrainingLogEntry
from schemas.storage import write_jsonl
from scripts.augment import Sample, online_augment
from scripts.losses import EmbeddingBatch, LossError, bce_logits_loss, l2_normalize_backward, l2_normalize_rows, supcon_loss
from scripts.nn_core import Model, build_backbone, build_head, build_model
from scripts.optim import OptimizerState, adam_step, optimizer_step, plateau_step
from scripts.seeding import derive_rng
from scripts.synthdata import load_png

logger = structlog.get_logger()

PROBE_PREFIX = "probe/"
EMBED_CHUNK = 256


class PipelineError(Exception):
    """Raised when a training stage cannot run or produces an invalid state."""

    pass


@dataclass
class ImageDataset:
    """Images decoded into memory, aligned with their manifest records."""

    ids: list[str]
    images: np.ndarray
    labels: np.ndarray
    sources: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_arrays(cls, images: np.ndarray, labels: np.ndarray, prefix: str = "s") -> "ImageDataset":
        n = len(images)
        return cls(
            ids=[f"{prefix}-{i:06d}" for i in range(n)],
            images=np.asarray(images, dtype=np.float32),
            labels=np.asarray(labels, dtype=np.int64),
            sources=["real-orig" if label == 1 else "fake-method-1" for label in labels],
        )


def load_dataset(manifest: DatasetManifest, records: list[ManifestRecord] | None = None) -> ImageDataset:
    """Decode PNGs for the given records (default: all) into [0, 1] float32."""
    records = manifest.records if records is None else records
    if not records:
        raise PipelineError("dataset is empty")
    images = np.stack([load_png(manifest.resolve(r)) for r in records]).astype(np.float32) / 255.0
    return ImageDataset(
        ids=[r.id for r in records],
        images=images,
        labels=np.array([r.label for r in records], dtype=np.int64),
        sources=[r.source for r in records],
    )


def embed(model: Model, images: np.ndarray, chunk: int = EMBED_CHUNK) -> np.ndarray:
    """Eval-mode forward in fixed-size chunks; eval mode makes the result chunking-independent."""
    outputs = [model.predict(images[i : i + chunk]) for i in range(0, len(images), chunk)]
    return np.concatenate(outputs, axis=0)


def restore_backbone(checkpoint: ModelCheckpoint) -> Model:
    model = build_backbone(checkpoint.backbone_spec, seed=checkpoint.seed)
    model.load_arrays(checkpoint.backbone_params, checkpoint.backbone_buffers)
    return model


def restore_head(checkpoint: ModelCheckpoint) -> Model:
    if not checkpoint.has_head:
        raise PipelineError("checkpoint has no classifier head; run stage 2 first")
    head = build_head(checkpoint.head_spec, checkpoint.backbone_spec.embedding_dim, seed=checkpoint.seed)
    head.load_arrays(checkpoint.head_params, checkpoint.head_buffers)
    return head


def _batch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return derive_rng(seed, "batches", epoch).permutation(n)


def _augmented_batch(dataset: ImageDataset, idx: np.ndarray, cfg: StageConfig, epoch: int) -> np.ndarray:
    if cfg.online_aug.p_aug == 0.0:
        return dataset.images[idx]
    images = []
    for i in idx:
        sample = Sample(id=dataset.ids[i], image=dataset.images[i], label=int(dataset.labels[i]))
        rng = derive_rng(cfg.seed, "online", dataset.ids[i], epoch)
        images.append(online_augment(sample, cfg.online_aug, rng).image)
    return np.stack(images)


def _supcon_batch(model: Model, x: np.ndarray, y: np.ndarray, cfg: StageConfig, rng, mode: str):
    """Loss and backbone gradients for one batch; None when the batch carries no contrastive signal."""
    out, caches = model.forward(x, mode=mode, rng=rng)
    try:
        z = l2_normalize_rows(out)
    except LossError as e:
        raise PipelineError(f"embedding collapse: {e}") from e
    result = supcon_loss(EmbeddingBatch(z, y), cfg.supcon)
    if result.warning:
        return None
    return result.loss, caches, l2_normalize_backward(out, result.grad)


def _probe_batch(model: Model, probe: Model, x: np.ndarray, y: np.ndarray, rng, mode: str):
    out, caches = model.forward(x, mode=mode, rng=rng)
    logits, probe_caches = probe.forward(out, mode=mode, rng=rng)
    result = bce_logits_loss(logits[:, 0], y)
    return result.loss, caches, probe_caches, result.grad.reshape(-1, 1)


def _stage1_val_loss(model: Model, probe: Model | None, valset: ImageDataset, cfg: StageConfig) -> float:
    order = derive_rng(cfg.seed, "val-order").permutation(len(valset))
    losses, weights = [], []
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        x, y = valset.images[idx], valset.labels[idx]
        if probe is not None:
            loss = _probe_batch(model, probe, x, y, None, "eval")[0]
        else:
            if len(idx) < 2:
                continue
            step = _supcon_batch(model, x, y, cfg, None, "eval")
            if step is None:
                continue
            loss = step[0]
        losses.append(loss)
        weights.append(len(idx))
    if not losses:
        raise PipelineError("validation set yields no scorable batch")
    return float(np.average(losses, weights=weights))


def train_stage1(
    trainset: ImageDataset,
    valset: ImageDataset,
    backbone_spec: BackboneSpec,
    cfg: StageConfig,
    log_path: Path | str | None = None,
) -> ModelCheckpoint:
    """
    Train a backbone from seeded initialization.

    Per batch: online augmentation, forward, L2 normalization, SupCon loss,
    backward, AdamW. Per epoch: validation loss, plateau scheduler. Batches
    holding a single sample or a single class are skipped with a warning.

    Raises:
        PipelineError: On a non-finite loss (names epoch and batch) or a config
            for the wrong stage.
    """
    if cfg.stage != "backbone":
        raise PipelineError(f"train_stage1 needs a backbone-stage config, got {cfg.stage}")
    if len(trainset) < 2:
        raise PipelineError("training set needs at least two samples")

    model = build_backbone(backbone_spec, cfg.seed)
    probe = None
    if cfg.objective == "bce":
        probe = build_model("bce-probe", [LayerSpec.dense(backbone_spec.embedding_dim, 1)], (backbone_spec.embedding_dim,), cfg.seed)

    params = model.parameters()
    if probe is not None:
        params.update({PROBE_PREFIX + k: v for k, v in probe.parameters().items()})
    state = OptimizerState.zeros_like(params)
    scheduler = SchedulerState.start(cfg.optim.lr, cfg.scheduler)
    log: list[TrainingLogEntry] = []

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        lr = scheduler.current_lr
        step_cfg = cfg.optim.model_copy(update={"lr": lr})
        order = _batch_order(cfg.seed, epoch, len(trainset))
        batch_losses: list[float] = []

        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                logger.warning("batch_skipped", epoch=epoch, batch=batch_index, reason="single sample")
                continue
            y = trainset.labels[idx]
            if np.unique(y).size < 2:
                logger.warning("batch_skipped", epoch=epoch, batch=batch_index, reason="single class")
                continue
            x = _augmented_batch(trainset, idx, cfg, epoch)
            rng = derive_rng(cfg.seed, "dropout", epoch, batch_index)

            if probe is None:
                step = _supcon_batch(model, x, y, cfg, rng, "train")
                if step is None:
                    logger.warning("batch_skipped", epoch=epoch, batch=batch_index, reason="no positive pairs")
                    continue
                loss, caches, grad_out = step
                grads = {}
            else:
                loss, caches, probe_caches, grad_logits = _probe_batch(model, probe, x, y, rng, "train")
                grad_out, probe_grads = probe.backward(probe_caches, grad_logits)
                grads = {PROBE_PREFIX + k: v for k, v in probe_grads.items()}

            if not np.isfinite(loss):
                raise PipelineError(f"non-finite loss at epoch {epoch}, batch {batch_index}")
            _, backbone_grads = model.backward(caches, grad_out.astype(np.float32))
            grads.update(backbone_grads)
            optimizer_step(params, grads, state, step_cfg)
            batch_losses.append(loss)

        if not batch_losses:
            raise PipelineError(f"epoch {epoch} had no trainable batch")
        train_loss = float(np.mean(batch_losses))
        val_loss = _stage1_val_loss(model, probe, valset, cfg)
        wall_ms = int((time.perf_counter() - started) * 1000)
        log.append(TrainingLogEntry(epoch=epoch, split="train", loss=train_loss, lr=lr, wall_ms=wall_ms))
        log.append(TrainingLogEntry(epoch=epoch, split="val", loss=val_loss, lr=lr, wall_ms=wall_ms))
        scheduler = plateau_step(scheduler, val_loss)
        logger.info(
            "epoch_complete",
            stage="backbone",
            backbone=backbone_spec.name,
            epoch=epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            lr=lr,
            wall_ms=wall_ms,
        )

    if log_path is not None:
        write_jsonl(log_path, log)

    backbone_names = set(model.parameters())
    return ModelCheckpoint(
        stage="backbone",
        seed=cfg.seed,
        backbone_spec=backbone_spec,
        backbone_params={k: v.copy() for k, v in model.parameters().items()},
        backbone_buffers={k: v.copy() for k, v in model.buffers().items()},
        objective=cfg.objective,
        optim=cfg.optim,
        step=state.t,
        moments_m={k: v.copy() for k, v in state.m.items() if k in backbone_names},
        moments_v={k: v.copy() for k, v in state.v.items() if k in backbone_names},
        scheduler=scheduler,
        training_log=log,
    )


@dataclass
class HeadFit:
    head: Model
    state: OptimizerState
    scheduler: SchedulerState
    log: list[TrainingLogEntry]


def _head_loss(head: Model, embeddings: np.ndarray, labels: np.ndarray) -> float:
    logits = head.predict(embeddings)[:, 0]
    return bce_logits_loss(logits, labels).loss


def fit_head(
    train_embeddings: np.ndarray,
    train_labels: np.ndarray,
    val_embeddings: np.ndarray,
    val_labels: np.ndarray,
    head_spec: ClassifierHeadSpec,
    cfg: StageConfig,
    embed_batch=None,
) -> HeadFit:
    """
    Train an MLP head on fixed embeddings with BCE and Adam.

    embed_batch(idx, epoch), when given, supplies per-batch embeddings
    instead of rows of train_embeddings (used when online augmentation is on).
    Single-sample batches are skipped with a warning.
    """
    d = train_embeddings.shape[1]
    head = build_head(head_spec, d, cfg.seed)
    params = head.parameters()
    state = OptimizerState.zeros_like(params)
    scheduler = SchedulerState.start(cfg.optim.lr, cfg.scheduler)
    log: list[TrainingLogEntry] = []
    n = len(train_labels)

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        lr = scheduler.current_lr
        step_cfg: OptimConfig = cfg.optim.model_copy(update={"lr": lr})
        order = _batch_order(cfg.seed, epoch, n)
        batch_losses, weights = [], []
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                logger.warning(
                    "batch_skipped", stage="classifier", epoch=epoch, batch=batch_index, reason="single sample"
                )
                continue
            e = embed_batch(idx, epoch) if embed_batch is not None else train_embeddings[idx]
            rng = derive_rng(cfg.seed, "dropout", epoch, batch_index)
            logits, caches = head.forward(e, mode="train", rng=rng)
            result = bce_logits_loss(logits[:, 0], train_labels[idx])
            if not np.isfinite(result.loss):
                raise PipelineError(f"non-finite loss at epoch {epoch}, batch {batch_index}")
            _, grads = head.backward(caches, result.grad.reshape(-1, 1).astype(np.float32))
            adam_step(params, grads, state, step_cfg)
            batch_losses.append(result.loss)
            weights.append(len(idx))

        if not batch_losses:
            raise PipelineError(f"epoch {epoch} had no trainable batch")
        train_loss = float(np.average(batch_losses, weights=weights))
        val_loss = _head_loss(head, val_embeddings, val_labels)
        wall_ms = int((time.perf_counter() - started) * 1000)
        log.append(TrainingLogEntry(epoch=epoch, split="train", loss=train_loss, lr=lr, wall_ms=wall_ms))
        log.append(TrainingLogEntry(epoch=epoch, split="val", loss=val_loss, lr=lr, wall_ms=wall_ms))
        scheduler = plateau_step(scheduler, val_loss)
        logger.info("epoch_complete", stage="classifier", epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=lr)

    return HeadFit(head=head, state=state, scheduler=scheduler, log=log)


def train_stage2(
    checkpoint: ModelCheckpoint,
    trainset: ImageDataset,
    valset: ImageDataset,
    head_spec: ClassifierHeadSpec,
    cfg: StageConfig,
    log_path: Path | str | None = None,
) -> ModelCheckpoint:
    """
    Train a classifier head on a frozen backbone.

    The backbone runs in eval mode and its tensors are hashed before and
    after; any change is an error.

    Raises:
        PipelineError: Wrong stage config, a backbone that does not match the
            checkpoint hash, or a non-finite loss.
    """
    if cfg.stage != "classifier":
        raise PipelineError(f"train_stage2 needs a classifier-stage config, got {cfg.stage}")
    backbone = restore_backbone(checkpoint)
    before = backbone.param_hash()
    if before != checkpoint.backbone_hash:
        raise PipelineError("backbone tensors do not match the checkpoint hash")

    train_embeddings = embed(backbone, trainset.images)
    val_embeddings = embed(backbone, valset.images)

    embed_batch = None
    if cfg.online_aug.p_aug > 0.0:

        def embed_batch(idx: np.ndarray, epoch: int) -> np.ndarray:
            return backbone.predict(_augmented_batch(trainset, idx, cfg, epoch))

    fit = fit_head(
        train_embeddings, trainset.labels, val_embeddings, valset.labels, head_spec, cfg, embed_batch=embed_batch
    )

    after = backbone.param_hash()
    if after != before:
        raise PipelineError("backbone parameters changed during classifier training")
    if log_path is not None:
        write_jsonl(log_path, fit.log)

    return ModelCheckpoint(
        stage="classifier",
        seed=checkpoint.seed,
        backbone_spec=checkpoint.backbone_spec,
        backbone_params=checkpoint.backbone_params,
        backbone_buffers=checkpoint.backbone_buffers,
        head_spec=head_spec,
        head_params={k: v.copy() for k, v in fit.head.parameters().items()},
        head_buffers={k: v.copy() for k, v in fit.head.buffers().items()},
        objective=checkpoint.objective,
        optim=cfg.optim,
        step=fit.state.t,
        moments_m={k: v.copy() for k, v in fit.state.m.items()},
        moments_v={k: v.copy() for k, v in fit.state.v.items()},
        scheduler=fit.scheduler,
        training_log=fit.log,
        backbone_hash=checkpoint.backbone_hash,
    )


def evaluate(checkpoint: ModelCheckpoint, dataset: ImageDataset) -> list[PredictionRecord]:
    """
    Per-sample probability sigmoid(logit) in eval mode, without augmentation.

    Raises:
        PipelineError: If the checkpoint has no head.
    """
    head = restore_head(checkpoint)
    backbone = restore_backbone(checkpoint)
    started = time.perf_counter()
    logits = head.predict(embed(backbone, dataset.images))[:, 0].astype(np.float64)
    elapsed_ms = (time.perf_counter() - started) * 1000
    logger.info("inference_timed", images=len(dataset), ms_per_image=elapsed_ms / max(1, len(dataset)))
    probs = expit(logits)
    return [
        PredictionRecord(id=i, label=int(label), prob=float(p), logit=float(x), source=source)
        for i, label, p, x, source in zip(dataset.ids, dataset.labels, probs, logits, dataset.sources)
    ]
