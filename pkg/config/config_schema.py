"""
Run configuration schema with Pydantic validation.

Unknown keys are rejected at every level so a typo never silently falls back
to a default. YAML and JSON files load through the same path.
"""

import sys
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

# Add project root to path for imports (needed when used as module)
_project_root = Path(__file__).parent.parent
if str(_project_root) not in sys.path:
    sys.path.insert(0, str(_project_root))

from schemas.dataset import FakeMethodSpec  # noqa: E402
from schemas.model import BackboneName, BackboneSpec, ClassifierHeadSpec, StageConfig  # noqa: E402
from schemas.transforms import OnlineAugConfig  # noqa: E402
from scripts.seeding import derive_rng  # noqa: E402

AblationName = Literal["full", "no-offline-aug", "no-online-aug", "bce-instead-supcon"]
ABLATION_NAMES: tuple[AblationName, ...] = ("full", "no-offline-aug", "no-online-aug", "bce-instead-supcon")


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(Section):
    """Synthetic corpus sizes and fake-method mix."""

    train_real: int = Field(2000, ge=0)
    train_fake: int = Field(6000, ge=0)
    val_real: int = Field(400, ge=0)
    val_fake: int = Field(400, ge=0)
    generated_fakes: int = Field(0, ge=0)
    image_size: int = Field(32, ge=8)
    methods: list[FakeMethodSpec] = Field(default_factory=FakeMethodSpec.defaults)
    method_mix: list[float] = Field(default_factory=lambda: [0.25, 0.25, 0.25, 0.25])

    @model_validator(mode="after")
    def mix_matches_methods(self) -> "DataConfig":
        if len(self.method_mix) != len(self.methods):
            raise ValueError(f"method_mix has {len(self.method_mix)} weights for {len(self.methods)} methods")
        if any(w < 0 for w in self.method_mix) or sum(self.method_mix) <= 0:
            raise ValueError("method_mix weights must be non-negative with a positive sum")
        ids = [m.method_id for m in self.methods]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate method ids: {ids}")
        if self.val_real != self.val_fake:
            raise ValueError(
                f"validation split must be balanced, got val_real={self.val_real} val_fake={self.val_fake}"
            )
        if self.image_size % 4:
            raise ValueError("image_size must be divisible by 4 (two pooling stages)")
        return self


class AugmentConfig(Section):
    offline_fraction: float = Field(0.5, ge=0.0, le=1.0)
    online: OnlineAugConfig = Field(default_factory=OnlineAugConfig)


class SamplingConfig(Section):
    n_models: int = Field(3, ge=1)


class BackboneEntry(Section):
    name: BackboneName
    embedding_dim: int = Field(64, gt=0)


def _default_backbones() -> list[BackboneEntry]:
    return [BackboneEntry(name=n) for n in ("local-cnn", "multiscale-cnn", "global-mlp")]


class EnsembleConfig(Section):
    silhouette_max_per_class: int = Field(2000, ge=2)


class AblationConfig(Section):
    """backbone=None picks the preset with the fewest multiply-accumulates."""

    backbone: BackboneName | None = None
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    configs: list[AblationName] = Field(default_factory=lambda: list(ABLATION_NAMES))

    @field_validator("seeds")
    @classmethod
    def seeds_present(cls, v: list[int]) -> list[int]:
        if not v:
            raise ValueError("at least one ablation seed is required")
        return v


class RunConfig(Section):
    """
    Complete run configuration.

    The top-level seed is pushed into both stage configs; per-backbone seeds
    are derived from it with member_seed().
    """

    data: DataConfig = Field(default_factory=DataConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    backbones: list[BackboneEntry] = Field(default_factory=_default_backbones)
    head: ClassifierHeadSpec = Field(default_factory=ClassifierHeadSpec)
    stage1: StageConfig = Field(default_factory=StageConfig.backbone_defaults)
    stage2: StageConfig = Field(default_factory=StageConfig.classifier_defaults)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    seed: int = Field(42, ge=0)
    out_dir: Path = Path("runs/default")

    @model_validator(mode="after")
    def consistent(self) -> "RunConfig":
        if len(self.backbones) != self.sampling.n_models:
            raise ValueError(f"{len(self.backbones)} backbones but sampling.n_models={self.sampling.n_models}")
        names = [b.name for b in self.backbones]
        if len(set(names)) != len(names):
            raise ValueError(f"backbones must be distinct presets: {names}")
        if self.stage1.stage != "backbone":
            raise ValueError("stage1.stage must be 'backbone'")
        if self.stage2.stage != "classifier":
            raise ValueError("stage2.stage must be 'classifier'")
        if self.out_dir.exists() and not self.out_dir.is_dir():
            raise ValueError(f"out_dir {self.out_dir} exists and is not a directory")
        # the run seed wins over any stage-level seed
        self.stage1 = self.stage1.model_copy(update={"seed": self.seed, "online_aug": self.augment.online})
        self.stage2 = self.stage2.model_copy(update={"seed": self.seed})
        return self

    def member_seed(self, index: int) -> int:
        """Seed for backbone `index`: a keyed draw from the run seed."""
        return int(derive_rng(self.seed, "member", index).integers(0, 2**31 - 1))

    def backbone_spec(self, index: int) -> BackboneSpec:
        entry = self.backbones[index]
        return BackboneSpec.preset(entry.name, embedding_dim=entry.embedding_dim, image_size=self.data.image_size)

    def stage_config(self, stage: Literal["backbone", "classifier"], index: int) -> StageConfig:
        base = self.stage1 if stage == "backbone" else self.stage2
        return base.model_copy(update={"seed": self.member_seed(index)})

    def with_overrides(self, seed: int | None = None, out_dir: Path | str | None = None) -> "RunConfig":
        """Re-validated copy with command-line overrides applied."""
        data = self.model_dump(mode="json")
        if seed is not None:
            data["seed"] = seed
        if out_dir is not None:
            data["out_dir"] = str(out_dir)
        return RunConfig.model_validate(data)

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        """Load and validate a YAML or JSON config file."""
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        return cls.model_validate(data)


def describe_validation_error(error: ValidationError) -> str:
    """One line per problem: dotted key path and reason."""
    lines = []
    for item in error.errors():
        key = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{key}: {item['msg']}")
    return "; ".join(lines)
