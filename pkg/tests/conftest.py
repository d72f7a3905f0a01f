"""Pytest configuration and fixtures."""

import sys
from pathlib import Path

import numpy as np
import pytest
import structlog
import yaml

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config.config_schema import RunConfig
from schemas.dataset import DatasetManifest, ManifestRecord
from scripts.pipeline import ImageDataset
from scripts.synthdata import generate_dataset


@pytest.fixture(autouse=True)
def reset_structlog():
    """CLI tests reconfigure structlog onto a captured stream; undo that."""
    yield
    structlog.reset_defaults()


def tiny_config_data(out_dir: Path, seed: int = 7) -> dict:
    """A run config small enough to train all three backbones in seconds."""
    return {
        "seed": seed,
        "out_dir": str(out_dir),
        "data": {"train_real": 24, "train_fake": 36, "val_real": 12, "val_fake": 12, "image_size": 8},
        "backbones": [
            {"name": "local-cnn", "embedding_dim": 8},
            {"name": "multiscale-cnn", "embedding_dim": 8},
            {"name": "global-mlp", "embedding_dim": 8},
        ],
        "head": {"hidden": 16},
        "stage1": {
            "stage": "backbone",
            "batch_size": 16,
            "epochs": 1,
            "optim": {"algorithm": "adamw", "lr": 1e-3, "weight_decay": 1e-2},
        },
        "stage2": {
            "stage": "classifier",
            "batch_size": 16,
            "epochs": 2,
            "optim": {"algorithm": "adam", "lr": 1e-3},
            "online_aug": {"p_aug": 0.0},
        },
        "ensemble": {"silhouette_max_per_class": 50},
        "ablation": {"seeds": [0]},
    }


@pytest.fixture
def tiny_config(tmp_path: Path) -> RunConfig:
    """Validated tiny run config writing under tmp_path/run."""
    return RunConfig.model_validate(tiny_config_data(tmp_path / "run"))


@pytest.fixture
def tiny_config_file(tmp_path: Path) -> Path:
    """The tiny run config as a YAML file."""
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_config_data(tmp_path / "run")))
    return path


@pytest.fixture
def small_manifest(tmp_path: Path) -> DatasetManifest:
    """A rendered 8x8 corpus: 8 train reals, 12 train fakes, 4 + 4 val."""
    return generate_dataset(
        tmp_path / "data", seed=3, train_real=8, train_fake=12, val_real=4, val_fake=4, image_size=8
    )


def make_records(n_real: int, n_fake: int, n_generated: int = 0) -> list[ManifestRecord]:
    """In-memory train records; paths are never read."""
    records = [
        ManifestRecord(id=f"r{i}", path=f"images/r{i}.png", label=1, source="real-orig", split="train")
        for i in range(n_real)
    ]
    records += [
        ManifestRecord(
            id=f"f{i}", path=f"images/f{i}.png", label=0, source=f"fake-method-{i % 4 + 1}", split="train"
        )
        for i in range(n_fake)
    ]
    records += [
        ManifestRecord(id=f"g{i}", path=f"images/g{i}.png", label=0, source="fake-generated", split="train")
        for i in range(n_generated)
    ]
    return records


@pytest.fixture
def record_factory():
    """make_records as a fixture."""
    return make_records


@pytest.fixture
def separable_images() -> tuple[ImageDataset, ImageDataset]:
    """Bright reals and dark fakes on 8x8 images, train and val."""

    def build(seed: int, n: int, prefix: str) -> ImageDataset:
        rng = np.random.default_rng(seed)
        labels = np.array([1, 0] * (n // 2))
        base = np.where(labels == 1, 0.7, 0.3)[:, None, None, None]
        images = np.clip(base + rng.normal(scale=0.05, size=(n, 8, 8, 3)), 0.0, 1.0)
        return ImageDataset.from_arrays(images, labels, prefix=prefix)

    return build(0, 48, "train"), build(1, 24, "val")
