"""
Dataset catalog models: manifest records, artifact injector specs and the
per-backbone fake partition plan.

Manifests are stored as UTF-8 JSON lines, one record per line, with paths
relative to the manifest's directory.
"""

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from schemas.storage import StorageError, read_jsonl, write_jsonl

Split = Literal["train", "val"]
FakeKind = Literal["blend-seam", "checker-artifact", "patch-swap", "color-shift"]

REAL_SOURCES = frozenset({"real-orig", "real-offline-aug"})
GENERATED_SOURCE = "fake-generated"

# Strength ranges per injector kind, and the default strength
STRENGTH_RANGES: dict[str, tuple[float, float]] = {
    "blend-seam": (0.0, 1.0),
    "checker-artifact": (0.0, 0.25),
    "patch-swap": (0.0, 1.0),
    "color-shift": (0.0, 0.9),
}
DEFAULT_STRENGTH: dict[str, float] = {
    "blend-seam": 0.6,
    "checker-artifact": 0.08,
    "patch-swap": 1.0,
    "color-shift": 0.35,
}


def fake_method_source(method_id: int) -> str:
    return f"fake-method-{method_id}"


class ManifestRecord(BaseModel):
    """One sample in the catalog. Field order is the on-disk order."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str = Field(..., min_length=1)
    path: str = Field(..., min_length=1)
    label: Literal[0, 1]
    source: str
    split: Split

    @model_validator(mode="after")
    def label_matches_source(self) -> "ManifestRecord":
        is_real = self.source.startswith("real")
        if is_real and self.source not in REAL_SOURCES:
            raise ValueError(f"unknown real source: {self.source}")
        if not is_real and not (self.source == GENERATED_SOURCE or self.source.startswith("fake-method-")):
            raise ValueError(f"unknown fake source: {self.source}")
        if (self.label == 1) != is_real:
            raise ValueError(f"record {self.id}: label {self.label} inconsistent with source {self.source}")
        return self


class DatasetManifest(BaseModel):
    """Ordered collection of manifest records with unique ids."""

    records: list[ManifestRecord] = Field(default_factory=list)
    _root: Path | None = PrivateAttr(default=None)

    @model_validator(mode="after")
    def unique_ids(self) -> "DatasetManifest":
        seen: set[str] = set()
        for record in self.records:
            if record.id in seen:
                raise ValueError(f"duplicate record id: {record.id}")
            seen.add(record.id)
        return self

    @property
    def root(self) -> Path:
        if self._root is None:
            raise StorageError("Manifest has no root directory; load it from disk or call with_root()")
        return self._root

    def with_root(self, root: Path | str) -> "DatasetManifest":
        self._root = Path(root)
        return self

    def resolve(self, record: ManifestRecord) -> Path:
        """Absolute location of a record's image."""
        return self.root / record.path

    def select(self, split: Split | None = None, label: int | None = None) -> list[ManifestRecord]:
        return [
            r
            for r in self.records
            if (split is None or r.split == split) and (label is None or r.label == label)
        ]

    def extend(self, records: list[ManifestRecord]) -> "DatasetManifest":
        """New manifest with records appended, sharing this root."""
        extended = DatasetManifest(records=[*self.records, *records])
        extended._root = self._root
        return extended

    def missing_paths(self) -> list[str]:
        return [r.id for r in self.records if not self.resolve(r).exists()]

    def save(self, path: Path | str) -> None:
        write_jsonl(path, self.records)

    @classmethod
    def load(cls, path: Path | str) -> "DatasetManifest":
        path = Path(path)
        rows = read_jsonl(path)
        manifest = cls(records=[ManifestRecord.model_validate(row) for row in rows])
        return manifest.with_root(path.parent)


class FakeMethodSpec(BaseModel):
    """Parameterized artifact injector standing in for one deepfake generator."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    method_id: int = Field(..., ge=1, le=4)
    kind: FakeKind
    strength: float | None = None
    # Optional fixed region (row, col, height, width); drawn per sample when unset
    region: tuple[int, int, int, int] | None = None

    @model_validator(mode="after")
    def strength_in_range(self) -> "FakeMethodSpec":
        if self.strength is None:
            object.__setattr__(self, "strength", DEFAULT_STRENGTH[self.kind])
        low, high = STRENGTH_RANGES[self.kind]
        if not low <= self.strength <= high:
            raise ValueError(f"{self.kind} strength {self.strength} outside [{low}, {high}]")
        return self

    @property
    def source(self) -> str:
        return fake_method_source(self.method_id)

    @classmethod
    def defaults(cls) -> list["FakeMethodSpec"]:
        return [
            cls(method_id=1, kind="blend-seam"),
            cls(method_id=2, kind="checker-artifact"),
            cls(method_id=3, kind="patch-swap"),
            cls(method_id=4, kind="color-shift"),
        ]


class PartitionPlan(BaseModel):
    """Disjoint per-backbone fake subsets plus the ids every backbone shares."""

    model_config = ConfigDict(extra="forbid")

    n_models: int = Field(..., ge=1)
    seed: int
    fake_subsets: list[list[str]]
    real_ids: list[str]
    generated_ids: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def subsets_disjoint(self) -> "PartitionPlan":
        if len(self.fake_subsets) != self.n_models:
            raise ValueError(f"expected {self.n_models} fake subsets, got {len(self.fake_subsets)}")
        seen: set[str] = set()
        for subset in self.fake_subsets:
            overlap = seen.intersection(subset)
            if overlap:
                raise ValueError(f"fake subsets overlap on {sorted(overlap)[:3]}")
            seen.update(subset)
        sizes = [len(s) for s in self.fake_subsets]
        if max(sizes) - min(sizes) > 1:
            raise ValueError(f"fake subset sizes differ by more than one: {sizes}")
        return self

    def model_ids(self, model_index: int) -> list[str]:
        """All ids in one model's trainset: reals, its fake subset, shared generated fakes."""
        if not 0 <= model_index < self.n_models:
            raise IndexError(f"model_index {model_index} out of range for {self.n_models} models")
        return [*self.real_ids, *self.fake_subsets[model_index], *self.generated_ids]

    def trainset_counts(self, model_index: int) -> dict[str, int]:
        if not 0 <= model_index < self.n_models:
            raise IndexError(f"model_index {model_index} out of range for {self.n_models} models")
        return {
            "real": len(self.real_ids),
            "fake": len(self.fake_subsets[model_index]) + len(self.generated_ids),
        }
