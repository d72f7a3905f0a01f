"""
Ablation harness.

Each named configuration changes exactly one dimension of the full recipe.
Every (configuration, seed) pair trains one designated backbone on its own
partition slice in a separate directory and is scored on the validation split.
"""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from config.config_schema import ABLATION_NAMES, AblationName, RunConfig
from schemas.model import BackboneName
from schemas.results import MetricsReport
from schemas.storage import write_json, write_text
from scripts.nn_core import estimate_macs
from scripts.paths import RunPaths, run_paths
from scripts.recipe import (
    load_validation,
    run_augment_offline,
    run_eval_member,
    run_partition,
    run_synth,
    run_train_member,
    write_resolved_config,
)
from scripts.report import format_table

logger = structlog.get_logger()

TABLE_COLUMNS = ["Configuration", "Accuracy", "F1 Score", "Precision"]

# What each configuration changes relative to `full`
ABLATION_DIMENSIONS: dict[str, str] = {
    "full": "nothing (SupCon + offline and online augmentation)",
    "no-offline-aug": "augment.offline_fraction = 0",
    "no-online-aug": "augment.online.p_aug = 0",
    "bce-instead-supcon": "stage1.objective = bce (temporary logit head)",
}

# Published accuracy / F1 / precision on the competition data; documentation only
REFERENCE_TABLE: dict[str, tuple[float, float, float]] = {
    "full": (0.9447, 0.9453, 0.9422),
    "no-offline-aug": (0.9303, 0.9339, 0.8947),
    "no-online-aug": (0.8659, 0.8574, 0.9232),
    "bce-instead-supcon": (0.9163, 0.9131, 0.9581),
}


class AblationError(Exception):
    """Raised when an ablation sub-run fails; names the configuration and seed."""

    pass


class AblationPlan(BaseModel):
    model_config = ConfigDict(extra="forbid")

    backbone: BackboneName
    seeds: list[int] = Field(..., min_length=1)
    configs: list[AblationName] = Field(default_factory=lambda: list(ABLATION_NAMES))


def cheapest_backbone(cfg: RunConfig) -> BackboneName:
    """Configured preset with the fewest multiply-accumulates per image."""
    costs = {b.name: estimate_macs(cfg.backbone_spec(i)) for i, b in enumerate(cfg.backbones)}
    return min(costs, key=lambda name: (costs[name], name))


def plan_from_config(cfg: RunConfig) -> AblationPlan:
    backbone = cfg.ablation.backbone or cheapest_backbone(cfg)
    return AblationPlan(backbone=backbone, seeds=cfg.ablation.seeds, configs=cfg.ablation.configs)


def variant_config(cfg: RunConfig, name: AblationName) -> RunConfig:
    data = cfg.model_dump(mode="json")
    if name == "no-offline-aug":
        data["augment"]["offline_fraction"] = 0.0
    elif name == "no-online-aug":
        data["augment"]["online"]["p_aug"] = 0.0
    elif name == "bce-instead-supcon":
        data["stage1"]["objective"] = "bce"
    return RunConfig.model_validate(data)


def run_member(cfg: RunConfig, name: AblationName, seed: int, backbone: BackboneName, out_dir: Path) -> MetricsReport:
    """One standalone (configuration, seed) run of a single backbone."""
    variant = variant_config(cfg, name).with_overrides(seed=seed, out_dir=out_dir)
    names = [b.name for b in variant.backbones]
    if backbone not in names:
        raise AblationError(f"backbone {backbone} is not among the configured backbones {names}")
    index = names.index(backbone)
    paths = run_paths(out_dir)
    write_resolved_config(variant, paths)
    run_synth(variant, paths)
    if variant.augment.offline_fraction > 0:
        run_augment_offline(variant, paths)
    run_partition(variant, paths)
    valset = load_validation(paths)
    run_train_member(variant, paths, index, valset=valset)
    return run_eval_member(variant, paths, index, valset=valset)[1]


def _metric_row(report: MetricsReport) -> dict[str, float]:
    return {"Accuracy": report.accuracy, "F1 Score": report.f1, "Precision": report.precision}


def ablation_run(cfg: RunConfig, plan: AblationPlan, paths: RunPaths, threads: int = 1) -> dict:
    """
    Run every configuration over every seed and build the results table.

    Rows carry per-seed values and their means; the published reference values
    ride along for comparison.

    Raises:
        AblationError: On the first failing sub-run.
    """
    jobs = [(name, seed) for name in plan.configs for seed in plan.seeds]

    def run(job: tuple[AblationName, int]) -> MetricsReport:
        name, seed = job
        try:
            return run_member(cfg, name, seed, plan.backbone, paths.ablation_run(name, seed))
        except Exception as e:
            raise AblationError(f"ablation run {name} (seed {seed}) failed: {e}") from e

    logger.info("ablation_started", backbone=plan.backbone, configs=plan.configs, seeds=plan.seeds, threads=threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(run, jobs))
    else:
        reports = [run(job) for job in jobs]
    results = dict(zip(jobs, reports))

    rows = []
    for name in plan.configs:
        per_seed = [{"seed": seed, **_metric_row(results[(name, seed)])} for seed in plan.seeds]
        means = {col: float(np.mean([r[col] for r in per_seed])) for col in TABLE_COLUMNS[1:]}
        reference = REFERENCE_TABLE[name]
        rows.append(
            {
                "Configuration": name,
                **means,
                "changes": ABLATION_DIMENSIONS[name],
                "per_seed": per_seed,
                "reference": dict(zip(TABLE_COLUMNS[1:], reference)),
            }
        )

    table = {"backbone": plan.backbone, "seeds": plan.seeds, "columns": TABLE_COLUMNS, "rows": rows}
    write_json(paths.ablation_dir / "ablation.json", table)
    text_rows = [[row["Configuration"], *(f"{row[c]:.4f}" for c in TABLE_COLUMNS[1:])] for row in rows]
    write_text(paths.ablation_dir / "ablation.txt", format_table(TABLE_COLUMNS, text_rows))
    logger.info("ablation_complete", rows=len(rows))
    return table
