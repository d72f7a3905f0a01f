"""
Centralized artifact layout for a run.

Every file a subcommand writes lives under the run's out_dir.
"""

from dataclasses import dataclass
from pathlib import Path

RESOLVED_CONFIG = "config.resolved.json"


@dataclass(frozen=True)
class RunPaths:
    out_dir: Path

    @property
    def resolved_config(self) -> Path:
        return self.out_dir / RESOLVED_CONFIG

    @property
    def data_dir(self) -> Path:
        """Synthetic corpus (images + manifest.jsonl)."""
        return self.out_dir / "data"

    @property
    def manifest(self) -> Path:
        return self.data_dir / "manifest.jsonl"

    @property
    def augmented_dir(self) -> Path:
        """Offline-augmented corpus; its manifest also lists the originals."""
        return self.out_dir / "augmented"

    @property
    def augmented_manifest(self) -> Path:
        return self.augmented_dir / "manifest.jsonl"

    @property
    def partition_plan(self) -> Path:
        return self.out_dir / "partition.json"

    def model_dir(self, name: str) -> Path:
        return self.out_dir / "models" / name

    def backbone_checkpoint(self, name: str) -> Path:
        return self.model_dir(name) / "backbone.ckpt"

    def classifier_checkpoint(self, name: str) -> Path:
        return self.model_dir(name) / "classifier.ckpt"

    def training_log(self, name: str, stage: str) -> Path:
        return self.model_dir(name) / f"{stage}.log.jsonl"

    def predictions(self, name: str) -> Path:
        return self.model_dir(name) / "predictions.jsonl"

    def member_metrics(self, name: str) -> Path:
        return self.model_dir(name) / "metrics.json"

    @property
    def ensemble_dir(self) -> Path:
        return self.out_dir / "ensemble"

    @property
    def decisions(self) -> Path:
        return self.ensemble_dir / "decisions.csv"

    @property
    def ensemble_metrics(self) -> Path:
        return self.ensemble_dir / "metrics.json"

    @property
    def ablation_dir(self) -> Path:
        return self.out_dir / "ablation"

    def ablation_run(self, config_name: str, seed: int) -> Path:
        return self.ablation_dir / f"{config_name}-seed{seed}"

    @property
    def report_dir(self) -> Path:
        return self.out_dir / "report"

    def projection_csv(self, name: str, when: str) -> Path:
        return self.report_dir / f"projection-{name}-{when}.csv"

    def projection_svg(self, name: str, when: str) -> Path:
        return self.report_dir / f"projection-{name}-{when}.svg"


def run_paths(out_dir: Path | str) -> RunPaths:
    return RunPaths(Path(out_dir))
