"""
Network, optimizer and scheduler specifications with Pydantic validation.

These models describe architectures and training hyperparameters only; the
parameter tensors themselves live in scripts.nn_core.Model.
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from schemas.transforms import OnlineAugConfig

LayerKind = Literal[
    "dense",
    "conv3x3",
    "conv5x5",
    "batchnorm",
    "dropout",
    "relu",
    "maxpool2",
    "global_avg_pool",
    "patchify",
]

BackboneName = Literal["local-cnn", "multiscale-cnn", "global-mlp"]

# Sizes each layer kind must declare
_REQUIRED_SIZES: dict[str, tuple[str, ...]] = {
    "dense": ("fan_in", "fan_out"),
    "conv3x3": ("in_channels", "out_channels"),
    "conv5x5": ("in_channels", "out_channels"),
    "batchnorm": ("channels",),
    "dropout": ("p",),
    "relu": (),
    "maxpool2": (),
    "global_avg_pool": (),
    "patchify": ("patch",),
}


class LayerSpec(BaseModel):
    """One layer of a sequential network."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: LayerKind
    fan_in: int | None = Field(None, gt=0)
    fan_out: int | None = Field(None, gt=0)
    in_channels: int | None = Field(None, gt=0)
    out_channels: int | None = Field(None, gt=0)
    channels: int | None = Field(None, gt=0)
    p: float | None = Field(None, ge=0.0, lt=1.0)
    patch: int | None = Field(None, gt=0)

    @model_validator(mode="after")
    def check_sizes(self) -> "LayerSpec":
        missing = [name for name in _REQUIRED_SIZES[self.kind] if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} layer requires {', '.join(missing)}")
        return self

    @property
    def kernel_size(self) -> int:
        return 5 if self.kind == "conv5x5" else 3

    @classmethod
    def dense(cls, fan_in: int, fan_out: int) -> "LayerSpec":
        return cls(kind="dense", fan_in=fan_in, fan_out=fan_out)

    @classmethod
    def conv(cls, in_channels: int, out_channels: int, kernel: int = 3) -> "LayerSpec":
        kind = "conv5x5" if kernel == 5 else "conv3x3"
        return cls(kind=kind, in_channels=in_channels, out_channels=out_channels)

    @classmethod
    def batchnorm(cls, channels: int) -> "LayerSpec":
        return cls(kind="batchnorm", channels=channels)

    @classmethod
    def dropout(cls, p: float) -> "LayerSpec":
        return cls(kind="dropout", p=p)


class BackboneSpec(BaseModel):
    """
    Toy backbone architecture.

    The three presets echo the feature styles of the ensemble members:
    local-cnn stacks small kernels (local features), multiscale-cnn opens with
    a 5x5 kernel before 3x3 stages (multi-scale features) and global-mlp maps
    a shallow 3x3 stem through one dense layer over every position, with no
    spatial pooling of features (global features).
    """

    model_config = ConfigDict(extra="forbid")

    name: BackboneName
    layers: list[LayerSpec]
    embedding_dim: int = Field(64, gt=0)
    image_size: int = Field(32, gt=0)
    in_channels: int = Field(3, gt=0)

    @classmethod
    def preset(cls, name: BackboneName, embedding_dim: int = 64, image_size: int = 32) -> "BackboneSpec":
        """Build one of the three preset architectures."""
        d = embedding_dim
        if name == "local-cnn":
            layers = [
                LayerSpec.conv(3, 16),
                LayerSpec.batchnorm(16),
                LayerSpec(kind="relu"),
                LayerSpec(kind="maxpool2"),
                LayerSpec.conv(16, 32),
                LayerSpec.batchnorm(32),
                LayerSpec(kind="relu"),
                LayerSpec(kind="maxpool2"),
                LayerSpec.conv(32, 32),
                LayerSpec(kind="relu"),
                LayerSpec(kind="global_avg_pool"),
                LayerSpec.dense(32, d),
            ]
        elif name == "multiscale-cnn":
            layers = [
                LayerSpec.conv(3, 8, kernel=5),
                LayerSpec(kind="relu"),
                LayerSpec(kind="maxpool2"),
                LayerSpec.conv(8, 16),
                LayerSpec.batchnorm(16),
                LayerSpec(kind="relu"),
                LayerSpec(kind="maxpool2"),
                LayerSpec.conv(16, 32),
                LayerSpec(kind="relu"),
                LayerSpec(kind="global_avg_pool"),
                LayerSpec.dense(32, d),
            ]
        elif name == "global-mlp":
            # 3x3 stem, then one dense map over every position; no pooling over space
            grid = image_size // 4
            flat = grid * grid * 8
            layers = [
                LayerSpec.conv(3, 8),
                LayerSpec.batchnorm(8),
                LayerSpec(kind="relu"),
                LayerSpec(kind="maxpool2"),
                LayerSpec(kind="maxpool2"),
                LayerSpec(kind="patchify", patch=2 if grid % 2 == 0 else 1),
                LayerSpec.dense(flat, 128),
                LayerSpec.batchnorm(128),
                LayerSpec(kind="relu"),
                LayerSpec.dense(128, d),
            ]
        else:
            raise ValueError(f"Unknown backbone preset: {name}")
        return cls(name=name, layers=layers, embedding_dim=d, image_size=image_size)


class ClassifierHeadSpec(BaseModel):
    """MLP head on top of a frozen backbone: dense -> batchnorm -> relu -> dropout -> dense(1)."""

    model_config = ConfigDict(extra="forbid")

    hidden: int = Field(64, gt=0)
    dropout: float = Field(0.3, ge=0.0, lt=1.0)

    def layers(self, embedding_dim: int) -> list[LayerSpec]:
        return [
            LayerSpec.dense(embedding_dim, self.hidden),
            LayerSpec.batchnorm(self.hidden),
            LayerSpec(kind="relu"),
            LayerSpec.dropout(self.dropout),
            LayerSpec.dense(self.hidden, 1),
        ]


class OptimConfig(BaseModel):
    """Adam / AdamW hyperparameters."""

    model_config = ConfigDict(extra="forbid")

    algorithm: Literal["adamw", "adam"] = "adamw"
    lr: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    weight_decay: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def adam_has_no_decay(self) -> "OptimConfig":
        if self.algorithm == "adam" and self.weight_decay != 0.0:
            raise ValueError("adam does not take weight_decay; use adamw")
        return self


class SchedulerConfig(BaseModel):
    """Reduce-on-plateau settings."""

    model_config = ConfigDict(extra="forbid")

    factor: float = Field(0.5, gt=0.0, lt=1.0)
    patience: int = Field(1, ge=0)


class SchedulerState(BaseModel):
    """
    Plateau scheduler state.

    current_lr is always initial_lr * factor ** num_reductions, so repeated
    reductions never accumulate rounding drift.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    factor: float = Field(0.5, gt=0.0, lt=1.0)
    patience: int = Field(1, ge=0)
    best_loss: float | None = None
    bad_count: int = Field(0, ge=0)
    initial_lr: float = Field(..., gt=0.0)
    num_reductions: int = Field(0, ge=0)

    @property
    def current_lr(self) -> float:
        return self.initial_lr * self.factor**self.num_reductions

    @classmethod
    def start(cls, lr: float, config: SchedulerConfig | None = None) -> "SchedulerState":
        config = config or SchedulerConfig()
        return cls(factor=config.factor, patience=config.patience, initial_lr=lr)


class SupConConfig(BaseModel):
    """Supervised contrastive loss settings."""

    model_config = ConfigDict(extra="forbid")

    temperature: float = Field(0.07, gt=0.0)

    @field_validator("temperature")
    @classmethod
    def finite_temperature(cls, v: float) -> float:
        if v != v or v == float("inf"):
            raise ValueError("temperature must be finite")
        return v


# Published per-model hyperparameters, keyed by the preset that stands in for each model
PUBLISHED_BACKBONE_EPOCHS: dict[str, int] = {"local-cnn": 4, "multiscale-cnn": 2, "global-mlp": 6}
PUBLISHED_CLASSIFIER_EPOCHS: dict[str, int] = {"local-cnn": 8, "multiscale-cnn": 8, "global-mlp": 7}


class StageConfig(BaseModel):
    """
    Hyperparameters for one training stage.

    stage=backbone trains the backbone (SupCon, or BCE through a temporary
    logit head when objective=bce); stage=classifier trains the MLP head on
    a frozen backbone.
    """

    model_config = ConfigDict(extra="forbid")

    stage: Literal["backbone", "classifier"]
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(4, ge=1)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    scheduler: SchedulerConfig = Field(default_factory=SchedulerConfig)
    online_aug: OnlineAugConfig = Field(default_factory=OnlineAugConfig)
    supcon: SupConConfig = Field(default_factory=SupConConfig)
    objective: Literal["supcon", "bce"] = "supcon"
    seed: int = 0

    @model_validator(mode="after")
    def stage_constraints(self) -> "StageConfig":
        if self.stage == "backbone" and self.batch_size < 2:
            raise ValueError("backbone stage needs batch_size >= 2 (contrastive pairs)")
        if self.stage == "classifier" and self.objective != "supcon":
            raise ValueError("objective applies to the backbone stage only")
        if self.stage == "classifier" and self.optim.algorithm != "adam":
            raise ValueError("classifier stage trains the head with adam")
        return self

    @classmethod
    def backbone_defaults(cls, seed: int = 0) -> "StageConfig":
        return cls(
            stage="backbone",
            batch_size=64,
            epochs=4,
            optim=OptimConfig(algorithm="adamw", lr=1e-3, weight_decay=1e-2),
            seed=seed,
        )

    @classmethod
    def classifier_defaults(cls, seed: int = 0) -> "StageConfig":
        return cls(
            stage="classifier",
            batch_size=64,
            epochs=8,
            optim=OptimConfig(algorithm="adam", lr=1e-3),
            online_aug=OnlineAugConfig.disabled(),
            seed=seed,
        )

    @classmethod
    def published_preset(cls, stage: Literal["backbone", "classifier"], backbone: BackboneName, seed: int = 0) -> "StageConfig":
        """Published batch size, learning rate, weight decay and per-model epochs."""
        if stage == "backbone":
            return cls(
                stage="backbone",
                batch_size=16,
                epochs=PUBLISHED_BACKBONE_EPOCHS[backbone],
                optim=OptimConfig(algorithm="adamw", lr=3e-5, weight_decay=1e-2),
                seed=seed,
            )
        return cls(
            stage="classifier",
            batch_size=16,
            epochs=PUBLISHED_CLASSIFIER_EPOCHS[backbone],
            optim=OptimConfig(algorithm="adam", lr=5e-5),
            online_aug=OnlineAugConfig.disabled(),
            seed=seed,
        )
