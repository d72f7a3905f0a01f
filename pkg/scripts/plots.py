"""Projection scatter outputs: CSV for machines, SVG for people."""

import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from schemas.storage import write_bytes, write_csv  # noqa: E402

LABEL_STYLE = {1: ("real", "tab:red"), 0: ("fake", "tab:blue")}


def write_projection_csv(ids: Sequence[str], xy: np.ndarray, labels: Sequence[int], path: Path | str) -> None:
    rows = ((i, repr(float(x)), repr(float(y)), int(label)) for i, (x, y), label in zip(ids, xy, labels))
    write_csv(path, ["id", "x", "y", "label"], rows)


def write_projection_svg(xy: np.ndarray, labels: Sequence[int], path: Path | str, title: str) -> None:
    """Scatter coloured by label; byte-stable for identical inputs."""
    labels = np.asarray(labels)
    with plt.rc_context({"svg.hashsalt": "dfdesk", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 5))
        for label, (name, colour) in LABEL_STYLE.items():
            mask = labels == label
            if mask.any():
                ax.scatter(xy[mask, 0], xy[mask, 1], s=6, c=colour, label=name, alpha=0.6, linewidths=0)
        ax.set_title(title)
        ax.set_xlabel("PC1")
        ax.set_ylabel("PC2")
        ax.legend(loc="best")
        buffer = io.BytesIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
        plt.close(fig)
    write_bytes(path, buffer.getvalue())
