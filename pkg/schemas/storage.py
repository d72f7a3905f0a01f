"""
Atomic artifact storage: JSON documents, JSON lines, CSV and text.

Every writer goes through write-to-temp-then-rename so a crashed run never
leaves a half-written artifact behind.
"""

import csv
import io
import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any, Iterable, TypeVar

from pydantic import BaseModel

T = TypeVar("T", bound=BaseModel)


class StorageError(Exception):
    """Base exception for storage operations."""

    pass


def _atomic_write(path: Path | str, payload: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        temp_fd, temp_path = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    except OSError as e:
        raise StorageError(f"Failed to write {path}: {e}") from e

    try:
        with os.fdopen(temp_fd, "wb") as f:
            f.write(payload)
        shutil.move(temp_path, path)
    except Exception as e:
        Path(temp_path).unlink(missing_ok=True)
        raise StorageError(f"Failed to write {path}: {e}") from e


def write_bytes(path: Path | str, payload: bytes) -> None:
    _atomic_write(path, payload)


def write_text(path: Path | str, text: str) -> None:
    _atomic_write(path, text.encode("utf-8"))


def write_json(path: Path | str, data: BaseModel | dict[str, Any] | list[Any]) -> None:
    """Write a JSON document with sorted, indented keys (byte-stable across runs)."""
    if isinstance(data, BaseModel):
        data = data.model_dump(mode="json", by_alias=True)
    text = json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    # Validate we can read it back
    json.loads(text)
    write_text(path, text)


def write_jsonl(path: Path | str, rows: Iterable[BaseModel | dict[str, Any]]) -> None:
    """Write one compact JSON object per line."""
    lines = []
    for row in rows:
        if isinstance(row, BaseModel):
            lines.append(row.model_dump_json())
        else:
            lines.append(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
    write_text(path, "".join(line + "\n" for line in lines))


def write_csv(path: Path | str, header: list[str], rows: Iterable[Iterable[Any]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    write_text(path, buffer.getvalue())


def read_json(path: Path | str) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise StorageError(f"Invalid JSON in {path}: {e}") from e


def read_jsonl(path: Path | str) -> list[dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Not found: {path}")
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise StorageError(f"Invalid JSON on line {line_no} of {path}: {e}") from e
    return rows


def read_csv(path: Path | str) -> list[dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def load_model(path: Path | str, model_class: type[T]) -> T:
    """
    Load and validate a JSON file into a Pydantic model.

    Raises:
        FileNotFoundError: If file doesn't exist.
        StorageError: If JSON is invalid or validation fails.
    """
    data = read_json(path)
    try:
        return model_class.model_validate(data)
    except ValueError as e:
        raise StorageError(f"{path} failed validation: {e}") from e
