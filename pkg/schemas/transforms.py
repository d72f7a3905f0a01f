"""
Augmentation transform specs and the online augmentation config.
"""

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

TransformKind = Literal["brightness", "hue", "saturation", "rotation", "hflip", "vflip"]

# Closed parameter ranges; flips take no parameter
TRANSFORM_RANGES: dict[str, tuple[float, float]] = {
    "brightness": (0.8, 1.2),
    "hue": (-18.0, 18.0),
    "saturation": (0.7, 1.3),
    "rotation": (-15.0, 15.0),
}

# Parameter value at which each transform is the identity
IDENTITY_PARAMS: dict[str, float] = {
    "brightness": 1.0,
    "hue": 0.0,
    "saturation": 1.0,
    "rotation": 0.0,
}

OFFLINE_KINDS: tuple[TransformKind, ...] = ("rotation", "brightness", "hue", "saturation")
DEFAULT_PIPELINES: tuple[TransformKind, ...] = ("brightness", "hue", "saturation", "rotation", "hflip", "vflip")


class TransformSpec(BaseModel):
    """A single transform kind with its documented parameter range."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: TransformKind

    @property
    def parameterized(self) -> bool:
        return self.kind in TRANSFORM_RANGES

    @property
    def range(self) -> tuple[float, float] | None:
        return TRANSFORM_RANGES.get(self.kind)

    def accepts(self, param: float | None) -> bool:
        if not self.parameterized:
            return param is None
        low, high = TRANSFORM_RANGES[self.kind]
        return param is not None and bool(np.isfinite(param)) and low <= param <= high

    def draw(self, rng: np.random.Generator) -> float | None:
        """Uniform parameter from the range; None for flips."""
        if not self.parameterized:
            return None
        low, high = TRANSFORM_RANGES[self.kind]
        return float(rng.uniform(low, high))


class OnlineAugConfig(BaseModel):
    """
    Per-batch stochastic augmentation: with probability p_aug one of six
    single-transform pipelines is applied.
    """

    model_config = ConfigDict(extra="forbid")

    p_aug: float = Field(0.5, ge=0.0, le=1.0)
    pipelines: list[TransformKind] = Field(default_factory=lambda: list(DEFAULT_PIPELINES))

    @field_validator("pipelines")
    @classmethod
    def six_pipelines(cls, v: list[TransformKind]) -> list[TransformKind]:
        if len(v) != 6:
            raise ValueError(f"exactly six pipelines required, got {len(v)}")
        return v

    @classmethod
    def disabled(cls) -> "OnlineAugConfig":
        return cls(p_aug=0.0)
