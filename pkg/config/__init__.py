"""Configuration loading and validation."""

from config.config_schema import (
    AblationConfig,
    AugmentConfig,
    BackboneEntry,
    DataConfig,
    EnsembleConfig,
    RunConfig,
    SamplingConfig,
    describe_validation_error,
)

__all__ = [
    "AblationConfig",
    "AugmentConfig",
    "BackboneEntry",
    "DataConfig",
    "EnsembleConfig",
    "RunConfig",
    "SamplingConfig",
    "describe_validation_error",
]
