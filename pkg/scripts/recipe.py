"""
Pipeline steps over a RunConfig.

Each step reads the artifacts of earlier steps from the run's out_dir and
writes its own there, so the CLI subcommands, the ablation harness and the
full recipe share one implementation.
"""

from pathlib import Path

import structlog

from config.config_schema import RunConfig
from schemas.checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from schemas.dataset import DatasetManifest, PartitionPlan
from schemas.results import MetricsReport, PredictionRecord
from schemas.storage import write_json
from scripts.augment import offline_augment
from scripts.ensemble import combine_predictions, read_predictions, rendered_records, write_decisions, write_predictions
from scripts.metrics import binary_metrics
from scripts.paths import RunPaths
from scripts.pipeline import ImageDataset, evaluate, load_dataset, train_stage1, train_stage2
from scripts.sampling import build_model_trainset, load_plan, partition_fakes, save_plan
from scripts.synthdata import generate_dataset

logger = structlog.get_logger()


class RecipeError(Exception):
    """Raised when a step's inputs are missing."""

    pass


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise RecipeError(f"missing {path}; run `{produced_by}` first")
    return path


def write_resolved_config(cfg: RunConfig, paths: RunPaths) -> None:
    write_json(paths.resolved_config, cfg.model_dump(mode="json"))


def run_synth(cfg: RunConfig, paths: RunPaths, threads: int = 1) -> DatasetManifest:
    d = cfg.data
    return generate_dataset(
        paths.data_dir,
        seed=cfg.seed,
        train_real=d.train_real,
        train_fake=d.train_fake,
        val_real=d.val_real,
        val_fake=d.val_fake,
        methods=d.methods,
        method_mix=d.method_mix,
        generated_fakes=d.generated_fakes,
        image_size=d.image_size,
        threads=threads,
    )


def run_augment_offline(cfg: RunConfig, paths: RunPaths, threads: int = 1) -> DatasetManifest:
    manifest = DatasetManifest.load(_require(paths.manifest, "synth"))
    return offline_augment(manifest, cfg.augment.offline_fraction, cfg.seed, paths.augmented_dir, threads=threads)


def current_manifest(paths: RunPaths) -> DatasetManifest:
    """The offline-augmented manifest when present, else the raw corpus."""
    if paths.augmented_manifest.exists():
        return DatasetManifest.load(paths.augmented_manifest)
    return DatasetManifest.load(_require(paths.manifest, "synth"))


def run_partition(cfg: RunConfig, paths: RunPaths) -> PartitionPlan:
    plan = partition_fakes(current_manifest(paths), cfg.sampling.n_models, cfg.seed)
    save_plan(plan, paths.partition_plan)
    return plan


def load_validation(paths: RunPaths) -> ImageDataset:
    manifest = current_manifest(paths)
    return load_dataset(manifest, manifest.select(split="val"))


def run_train_member(
    cfg: RunConfig, paths: RunPaths, index: int, valset: ImageDataset | None = None
) -> ModelCheckpoint:
    """Stage 1 then stage 2 for backbone `index` on its partition slice."""
    name = cfg.backbones[index].name
    manifest = current_manifest(paths)
    plan = load_plan(_require(paths.partition_plan, "partition"))
    view = build_model_trainset(manifest, plan, index)
    trainset = load_dataset(manifest, view.records)
    valset = valset if valset is not None else load_dataset(manifest, manifest.select(split="val"))
    logger.info("member_training_started", backbone=name, index=index, **view.counts)

    backbone = train_stage1(
        trainset,
        valset,
        cfg.backbone_spec(index),
        cfg.stage_config("backbone", index),
        log_path=paths.training_log(name, "backbone"),
    )
    save_checkpoint(backbone, paths.backbone_checkpoint(name))
    classifier = train_stage2(
        backbone,
        trainset,
        valset,
        cfg.head,
        cfg.stage_config("classifier", index),
        log_path=paths.training_log(name, "classifier"),
    )
    save_checkpoint(classifier, paths.classifier_checkpoint(name))
    return classifier


def run_eval_member(
    cfg: RunConfig, paths: RunPaths, index: int, valset: ImageDataset | None = None
) -> tuple[list[PredictionRecord], MetricsReport]:
    name = cfg.backbones[index].name
    checkpoint = load_checkpoint(_require(paths.classifier_checkpoint(name), "train"))
    valset = valset if valset is not None else load_validation(paths)
    records = evaluate(checkpoint, valset)
    report = binary_metrics(records)
    write_predictions(records, paths.predictions(name))
    write_json(paths.member_metrics(name), report)
    logger.info("member_evaluated", backbone=name, accuracy=report.accuracy, auc=report.auc)
    return records, report


def run_ensemble(
    cfg: RunConfig, paths: RunPaths, prediction_files: list[Path] | None = None
) -> MetricsReport:
    files = prediction_files or [_require(paths.predictions(b.name), "eval") for b in cfg.backbones]
    rows = combine_predictions([read_predictions(f) for f in files])
    write_decisions(rows, paths.decisions)
    report = binary_metrics(rendered_records(rows))
    write_json(paths.ensemble_metrics, report)
    logger.info("ensemble_evaluated", accuracy=report.accuracy, f1=report.f1, auc=report.auc)
    return report


def run_recipe(cfg: RunConfig, paths: RunPaths, threads: int = 1) -> MetricsReport:
    """synth -> augment-offline -> partition -> train x3 -> eval x3 -> ensemble."""
    write_resolved_config(cfg, paths)
    run_synth(cfg, paths, threads=threads)
    run_augment_offline(cfg, paths, threads=threads)
    run_partition(cfg, paths)
    valset = load_validation(paths)
    for index in range(len(cfg.backbones)):
        run_train_member(cfg, paths, index, valset=valset)
        run_eval_member(cfg, paths, index, valset=valset)
    return run_ensemble(cfg, paths)
