"""
Class-imbalance subset sampling.

Every backbone trains on all reals; original fakes are shuffled once and dealt
round-robin into disjoint per-backbone subsets; generated fakes are shared.
"""

from dataclasses import dataclass
from pathlib import Path

import structlog

from schemas.dataset import GENERATED_SOURCE, DatasetManifest, ManifestRecord, PartitionPlan
from schemas.storage import load_model, write_json
from scripts.seeding import derive_rng

logger = structlog.get_logger()


class SamplingError(Exception):
    """Raised when a partition cannot be built or applied."""

    pass


@dataclass
class TrainsetView:
    """One backbone's slice of the manifest, in manifest order."""

    model_index: int
    records: list[ManifestRecord]
    counts: dict[str, int]

    def __len__(self) -> int:
        return len(self.records)


def partition_fake_ids(fake_ids: list[str], n_models: int, seed: int) -> list[list[str]]:
    """Seeded shuffle, then deal round-robin; subset sizes differ by at most one."""
    if n_models < 1:
        raise SamplingError(f"n_models must be at least 1, got {n_models}")
    if len(fake_ids) < n_models:
        raise SamplingError(f"{len(fake_ids)} fakes cannot fill {n_models} subsets")
    order = derive_rng(seed, "partition").permutation(len(fake_ids))
    shuffled = [fake_ids[i] for i in order]
    return [shuffled[i::n_models] for i in range(n_models)]


def partition_ids(
    real_ids: list[str],
    fake_ids: list[str],
    generated_ids: list[str],
    n_models: int,
    seed: int,
) -> PartitionPlan:
    return PartitionPlan(
        n_models=n_models,
        seed=seed,
        fake_subsets=partition_fake_ids(fake_ids, n_models, seed),
        real_ids=list(real_ids),
        generated_ids=list(generated_ids),
    )


def partition_fakes(manifest: DatasetManifest, n_models: int, seed: int) -> PartitionPlan:
    """
    Partition the train split of a manifest.

    Reals (original and offline-augmented) go to every model, generated fakes
    go to every model, original fakes are split.
    """
    train = manifest.select(split="train")
    real_ids = [r.id for r in train if r.label == 1]
    generated_ids = [r.id for r in train if r.source == GENERATED_SOURCE]
    fake_ids = [r.id for r in train if r.label == 0 and r.source != GENERATED_SOURCE]
    plan = partition_ids(real_ids, fake_ids, generated_ids, n_models, seed)
    logger.info(
        "partition_built",
        n_models=n_models,
        seed=seed,
        reals=len(real_ids),
        fakes=len(fake_ids),
        generated=len(generated_ids),
        subset_sizes=[len(s) for s in plan.fake_subsets],
    )
    return plan


def build_model_trainset(manifest: DatasetManifest, plan: PartitionPlan, model_index: int) -> TrainsetView:
    """
    Records for one model: all reals, its fake subset and the generated fakes.

    Raises:
        SamplingError: If model_index is out of range or the plan names ids the manifest lacks.
    """
    try:
        wanted = set(plan.model_ids(model_index))
    except IndexError as e:
        raise SamplingError(str(e)) from e
    records = [r for r in manifest.records if r.id in wanted]
    if len(records) != len(wanted):
        known = {r.id for r in records}
        missing = sorted(wanted - known)
        raise SamplingError(f"plan references {len(missing)} ids missing from manifest, e.g. {missing[:3]}")
    return TrainsetView(model_index=model_index, records=records, counts=plan.trainset_counts(model_index))


def save_plan(plan: PartitionPlan, path: Path | str) -> None:
    write_json(path, plan)


def load_plan(path: Path | str) -> PartitionPlan:
    return load_model(path, PartitionPlan)
