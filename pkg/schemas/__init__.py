"""Domain models, result records, checkpoint codec and atomic storage."""

from schemas.checkpoint import CheckpointError, ModelCheckpoint, load_checkpoint, save_checkpoint
from schemas.dataset import DatasetManifest, FakeMethodSpec, ManifestRecord, PartitionPlan
from schemas.model import (
    BackboneSpec,
    ClassifierHeadSpec,
    LayerSpec,
    OptimConfig,
    SchedulerConfig,
    SchedulerState,
    StageConfig,
    SupConConfig,
)
from schemas.results import EnsembleDecision, EnsembleRow, MetricsReport, PredictionRecord, TrainingLogEntry
from schemas.storage import StorageError
from schemas.transforms import OnlineAugConfig, TransformSpec

__all__ = [
    "BackboneSpec",
    "CheckpointError",
    "ClassifierHeadSpec",
    "DatasetManifest",
    "EnsembleDecision",
    "EnsembleRow",
    "FakeMethodSpec",
    "LayerSpec",
    "ManifestRecord",
    "MetricsReport",
    "ModelCheckpoint",
    "OnlineAugConfig",
    "OptimConfig",
    "PartitionPlan",
    "PredictionRecord",
    "SchedulerConfig",
    "SchedulerState",
    "StageConfig",
    "StorageError",
    "SupConConfig",
    "TrainingLogEntry",
    "TransformSpec",
    "load_checkpoint",
    "save_checkpoint",
]
