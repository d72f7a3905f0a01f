"""
Majority-vote ensemble with min/max probability rendering.

A member votes real when its probability is strictly above 0.5. With at
least two real votes the ensemble reports the highest member probability,
otherwise the lowest, so the rendered value is always on the side of the vote.
"""

from pathlib import Path
from typing import Sequence

import numpy as np
import structlog

from schemas.results import EnsembleDecision, EnsembleRow, PredictionRecord
from schemas.storage import read_jsonl, write_csv, write_jsonl

logger = structlog.get_logger()

DECISIONS_HEADER = ["id", "prob_m1", "prob_m2", "prob_m3", "vote", "rendered", "label"]


class EnsembleError(Exception):
    """Raised for invalid member probabilities or misaligned prediction sets."""

    pass


def majority_vote_render(probs: Sequence[float]) -> EnsembleDecision:
    """
    Raises:
        EnsembleError: Unless there are exactly three probabilities in [0, 1].
    """
    probs = tuple(float(p) for p in probs)
    if len(probs) != 3:
        raise EnsembleError(f"expected 3 member probabilities, got {len(probs)}")
    for p in probs:
        if not (np.isfinite(p) and 0.0 <= p <= 1.0):
            raise EnsembleError(f"probability {p} outside [0, 1]")
    real_votes = sum(p > 0.5 for p in probs)
    if real_votes >= 2:
        return EnsembleDecision(probs=probs, vote="real", rendered=max(probs))
    return EnsembleDecision(probs=probs, vote="fake", rendered=min(probs))


def combine_predictions(members: Sequence[Sequence[PredictionRecord]]) -> list[EnsembleRow]:
    """
    Align three members' predictions by sample id (first member's order) and vote.

    Raises:
        EnsembleError: If the members do not cover the same ids with the same labels.
    """
    if len(members) != 3:
        raise EnsembleError(f"expected 3 prediction sets, got {len(members)}")
    indexed = [{r.id: r for r in member} for member in members]
    reference_ids = [r.id for r in members[0]]
    for k, index in enumerate(indexed):
        if len(index) != len(members[k]):
            raise EnsembleError(f"member {k + 1} has duplicate ids")
        if set(index) != set(reference_ids):
            missing = sorted(set(reference_ids) ^ set(index))
            raise EnsembleError(f"member {k + 1} ids differ from member 1, e.g. {missing[:3]}")

    rows = []
    for sample_id in reference_ids:
        records = [index[sample_id] for index in indexed]
        labels = {r.label for r in records}
        if len(labels) != 1:
            raise EnsembleError(f"members disagree on the label of {sample_id}")
        decision = majority_vote_render([r.prob for r in records])
        rows.append(EnsembleRow(id=sample_id, decision=decision, label=records[0].label, source=records[0].source))
    logger.info("ensemble_combined", samples=len(rows), real_votes=sum(r.decision.vote == "real" for r in rows))
    return rows


def rendered_records(rows: Sequence[EnsembleRow]) -> list[PredictionRecord]:
    """Ensemble output as prediction records, scored on the rendered probability."""
    return [PredictionRecord(id=r.id, label=r.label, prob=r.decision.rendered, source=r.source) for r in rows]


def write_decisions(rows: Sequence[EnsembleRow], path: Path | str) -> None:
    write_csv(path, DECISIONS_HEADER, (row.csv_row() for row in rows))


def write_predictions(records: Sequence[PredictionRecord], path: Path | str) -> None:
    write_jsonl(path, records)


def read_predictions(path: Path | str) -> list[PredictionRecord]:
    return [PredictionRecord.model_validate(row) for row in read_jsonl(path)]
