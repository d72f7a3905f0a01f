"""
Run summary: per-backbone and ensemble metrics, separability before and
after stage 1, and projection scatters.

The report is a pure function of the run's artifacts, so re-running it on an
unchanged out_dir reproduces every output byte for byte.
"""

from typing import Sequence

import numpy as np
import structlog

from config.config_schema import RunConfig
from schemas.checkpoint import load_checkpoint
from schemas.results import MetricsReport
from schemas.storage import load_model, write_json, write_text
from scripts.ensemble import combine_predictions, read_predictions, rendered_records
from scripts.metrics import MetricsError, accuracy_by_source, pca_project, silhouette_score
from scripts.nn_core import build_backbone
from scripts.paths import RunPaths
from scripts.pipeline import embed, restore_backbone, restore_head
from scripts.plots import write_projection_csv, write_projection_svg
from scripts.recipe import load_validation

logger = structlog.get_logger()

MODEL_COLUMNS = ["Model", "Parameters", "Accuracy", "AUC"]
RESULT_COLUMNS = ["Model", "Accuracy", "F1 Score", "Precision", "Recall", "AUC"]

# Published ensemble row on the competition validation set; documentation only
REFERENCE_ENSEMBLE = {"Accuracy": 0.9583, "F1 Score": 0.9586, "Precision": 0.9604, "Recall": 0.9567, "AUC": 0.9807}


class ReportError(Exception):
    """Raised when a run artifact the report needs is missing."""

    pass


def format_table(columns: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Left-aligned text table with a dashed rule under the header."""
    widths = [max(len(str(c)), *(len(str(r[i])) for r in rows)) if rows else len(str(c)) for i, c in enumerate(columns)]

    def line(cells: Sequence[str]) -> str:
        return "  ".join(str(cell).ljust(w) for cell, w in zip(cells, widths)).rstrip()

    out = [line(columns), line(["-" * w for w in widths])]
    out.extend(line(row) for row in rows)
    return "\n".join(out) + "\n"


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _silhouette(embeddings: np.ndarray, labels: Sequence, max_per_class: int, seed: int) -> float | None:
    try:
        return silhouette_score(embeddings, labels, max_per_class=max_per_class, seed=seed)
    except MetricsError:
        return None


def _result_row(name: str, report: MetricsReport) -> dict:
    return {"Model": name, **report.model_dump(by_alias=True, include={"accuracy", "f1", "precision", "recall", "auc"})}


def report_emit(cfg: RunConfig, paths: RunPaths) -> dict:
    """
    Aggregate a completed run into report/report.json and report/report.txt.

    Per backbone: parameter count, validation metrics, label silhouette of the
    validation embeddings at initialization and after stage 1, silhouette of
    the fake embeddings by fake-method tag, and PCA scatters (CSV + SVG) for
    both states.

    Raises:
        ReportError: If a checkpoint, prediction file or metrics file is missing.
    """
    required = [paths.ensemble_metrics]
    for b in cfg.backbones:
        required += [paths.classifier_checkpoint(b.name), paths.predictions(b.name), paths.member_metrics(b.name)]
    missing = [str(p) for p in required if not p.exists()]
    if missing:
        raise ReportError(f"missing run artifacts: {', '.join(missing)}")

    valset = load_validation(paths)
    labels = valset.labels
    fake_mask = labels == 0
    fake_sources = [s for s, is_fake in zip(valset.sources, fake_mask) if is_fake]
    max_per_class = cfg.ensemble.silhouette_max_per_class

    members = []
    for index, entry in enumerate(cfg.backbones):
        checkpoint = load_checkpoint(paths.classifier_checkpoint(entry.name))
        initial = build_backbone(checkpoint.backbone_spec, seed=checkpoint.seed)
        trained = restore_backbone(checkpoint)
        head = restore_head(checkpoint)
        metrics = load_model(paths.member_metrics(entry.name), MetricsReport)

        separability = {}
        for when, model in (("before", initial), ("after", trained)):
            emb = embed(model, valset.images)
            separability[when] = {
                "silhouette": _silhouette(emb, labels, max_per_class, cfg.seed),
                "fake_method_silhouette": _silhouette(emb[fake_mask], fake_sources, max_per_class, cfg.seed),
            }
            xy = pca_project(emb)
            write_projection_csv(valset.ids, xy, labels, paths.projection_csv(entry.name, when))
            write_projection_svg(xy, labels, paths.projection_svg(entry.name, when), f"{entry.name} ({when} stage 1)")

        members.append(
            {
                "name": entry.name,
                "index": index,
                "parameters": trained.num_parameters(),
                "head_parameters": head.num_parameters(),
                "metrics": metrics.model_dump(mode="json", by_alias=True),
                "separability": separability,
            }
        )
        logger.info(
            "report_member",
            backbone=entry.name,
            silhouette_before=separability["before"]["silhouette"],
            silhouette_after=separability["after"]["silhouette"],
        )

    ensemble = load_model(paths.ensemble_metrics, MetricsReport)
    rows = combine_predictions([read_predictions(paths.predictions(b.name)) for b in cfg.backbones])
    by_source = accuracy_by_source(rendered_records(rows))

    model_table = [
        {"Model": m["name"], "Parameters": m["parameters"], "Accuracy": m["metrics"]["Accuracy"], "AUC": m["metrics"]["AUC"]}
        for m in members
    ]
    result_table = [_result_row(m["name"], MetricsReport.model_validate(m["metrics"])) for m in members]
    result_table.append(_result_row("Ensemble", ensemble))

    document = {
        "seed": cfg.seed,
        "members": members,
        "ensemble": ensemble.model_dump(mode="json", by_alias=True),
        "accuracy_by_source": by_source,
        "model_table": model_table,
        "result_table": result_table,
        "reference_ensemble": REFERENCE_ENSEMBLE,
    }
    write_json(paths.report_dir / "report.json", document)
    write_text(paths.report_dir / "report.txt", render_text(document))
    logger.info("report_written", path=str(paths.report_dir))
    return document


def render_text(document: dict) -> str:
    sections = [
        "Models",
        format_table(
            MODEL_COLUMNS,
            [[r["Model"], f"{r['Parameters'] / 1e6:.3f}M", _fmt(r["Accuracy"]), _fmt(r["AUC"])] for r in document["model_table"]],
        ),
        "Validation results",
        format_table(RESULT_COLUMNS, [[r["Model"], *(_fmt(r[c]) for c in RESULT_COLUMNS[1:])] for r in document["result_table"]]),
        "Embedding separability (silhouette)",
        format_table(
            ["Model", "Before", "After", "Fake methods before", "Fake methods after"],
            [
                [
                    m["name"],
                    _fmt(m["separability"]["before"]["silhouette"]),
                    _fmt(m["separability"]["after"]["silhouette"]),
                    _fmt(m["separability"]["before"]["fake_method_silhouette"]),
                    _fmt(m["separability"]["after"]["fake_method_silhouette"]),
                ]
                for m in document["members"]
            ],
        ),
        "Ensemble accuracy by source",
        format_table(["Source", "Accuracy"], [[s, _fmt(a)] for s, a in document["accuracy_by_source"].items()]),
    ]
    return "\n".join(sections)
