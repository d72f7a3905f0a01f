"""
Result records: training log lines, per-sample predictions, ensemble
decisions and metrics reports.
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator


class TrainingLogEntry(BaseModel):
    """One line of the JSON-lines training log."""

    model_config = ConfigDict(extra="forbid")

    epoch: int = Field(..., ge=1)
    split: Literal["train", "val"]
    loss: float
    lr: float
    wall_ms: int | None = None


class PredictionRecord(BaseModel):
    """Per-sample model output."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str
    label: Literal[0, 1]
    prob: float = Field(..., ge=0.0, le=1.0)
    logit: float | None = None
    source: str | None = None


class EnsembleDecision(BaseModel):
    """Majority vote over three member probabilities with min/max rendering."""

    model_config = ConfigDict(frozen=True)

    probs: tuple[float, float, float]
    vote: Literal["real", "fake"]
    rendered: float = Field(..., ge=0.0, le=1.0)

    @model_validator(mode="after")
    def rendering_consistent(self) -> "EnsembleDecision":
        real_votes = sum(p > 0.5 for p in self.probs)
        if (self.vote == "real") != (real_votes >= 2):
            raise ValueError(f"vote {self.vote} inconsistent with {real_votes} real votes")
        expected = max(self.probs) if self.vote == "real" else min(self.probs)
        if self.rendered != expected:
            raise ValueError(f"rendered {self.rendered} should be {expected} for a {self.vote} vote")
        return self


class EnsembleRow(BaseModel):
    """One line of the decisions CSV."""

    model_config = ConfigDict(frozen=True)

    id: str
    decision: EnsembleDecision
    label: Literal[0, 1]
    source: str | None = None

    def csv_row(self) -> list[object]:
        p1, p2, p3 = self.decision.probs
        return [self.id, repr(p1), repr(p2), repr(p3), self.decision.vote, repr(self.decision.rendered), self.label]


class MetricsReport(BaseModel):
    """
    Binary-classification report. JSON field names follow the results table
    layout (Accuracy, F1 Score, Precision, Recall, AUC).

    Confusion counts are optional so published rows that only carry the
    derived metrics still parse; when present, the derived metrics must agree
    with them.
    """

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    accuracy: float = Field(..., alias="Accuracy", ge=0.0, le=1.0)
    f1: float = Field(..., alias="F1 Score", ge=0.0, le=1.0)
    precision: float = Field(..., alias="Precision", ge=0.0, le=1.0)
    recall: float = Field(..., alias="Recall", ge=0.0, le=1.0)
    auc: float | None = Field(None, alias="AUC", ge=0.0, le=1.0)
    tp: int | None = Field(None, ge=0)
    fp: int | None = Field(None, ge=0)
    tn: int | None = Field(None, ge=0)
    fn: int | None = Field(None, ge=0)
    threshold: float = 0.5

    @model_validator(mode="after")
    def counts_agree(self) -> "MetricsReport":
        counts = (self.tp, self.fp, self.tn, self.fn)
        if any(c is None for c in counts):
            return self
        tp, fp, tn, fn = counts
        n = tp + fp + tn + fn
        if n == 0:
            raise ValueError("confusion counts sum to zero")
        checks = {
            "accuracy": (self.accuracy, (tp + tn) / n),
            "precision": (self.precision, tp / (tp + fp) if tp + fp else 0.0),
            "recall": (self.recall, tp / (tp + fn) if tp + fn else 0.0),
        }
        for name, (value, expected) in checks.items():
            if abs(value - expected) > 1e-12:
                raise ValueError(f"{name} {value} disagrees with confusion counts ({expected})")
        return self

    @property
    def n(self) -> int | None:
        if self.tp is None:
            return None
        return self.tp + self.fp + self.tn + self.fn
