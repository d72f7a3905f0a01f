"""
Checkpoint container and its binary codec.

File layout:

    b"DFCK" | u32 format version | u32 header length | UTF-8 JSON header | NTF blocks

Each NTF block is b"NTF1", a u32 rank, rank u32 extents, then the raw float32
data, all little-endian. The header lists tensor names in block order.
Round trips are bit-exact and saving is deterministic, so save -> load -> save
yields identical bytes.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from schemas.model import BackboneSpec, ClassifierHeadSpec, OptimConfig, SchedulerState
from schemas.results import TrainingLogEntry
from schemas.storage import StorageError, write_bytes

CHECKPOINT_MAGIC = b"DFCK"
TENSOR_MAGIC = b"NTF1"
FORMAT_VERSION = 1

Stage = Literal["backbone", "classifier"]
Objective = Literal["supcon", "bce"]


class CheckpointError(Exception):
    """Raised for unreadable, truncated or inconsistent checkpoint files."""

    pass


def tensor_hash(*groups: dict[str, np.ndarray]) -> str:
    """SHA-256 over names, shapes and little-endian float32 bytes, in group/insertion order."""
    h = hashlib.sha256()
    for group in groups:
        for name, array in group.items():
            h.update(name.encode("utf-8"))
            h.update(str(tuple(array.shape)).encode("utf-8"))
            h.update(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return h.hexdigest()


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype="<f4")
    head = TENSOR_MAGIC + struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape)
    return head + array.tobytes()


def decode_tensor(buffer: bytes, offset: int) -> tuple[np.ndarray, int]:
    """Decode one NTF block at offset; returns the array and the next offset."""
    if buffer[offset : offset + 4] != TENSOR_MAGIC:
        raise CheckpointError(f"bad tensor magic at byte {offset}")
    offset += 4
    if offset + 4 > len(buffer):
        raise CheckpointError("truncated tensor rank")
    (rank,) = struct.unpack_from("<I", buffer, offset)
    offset += 4
    if offset + 4 * rank > len(buffer):
        raise CheckpointError("truncated tensor extents")
    extents = struct.unpack_from(f"<{rank}I", buffer, offset)
    offset += 4 * rank
    nbytes = 4 * int(np.prod(extents, dtype=np.int64))
    if offset + nbytes > len(buffer):
        raise CheckpointError(f"truncated tensor data: need {nbytes} bytes at {offset}, have {len(buffer) - offset}")
    array = np.frombuffer(buffer, dtype="<f4", count=nbytes // 4, offset=offset).reshape(extents)
    return array.astype(np.float32), offset + nbytes


class CheckpointHeader(BaseModel):
    """JSON part of a checkpoint file."""

    model_config = ConfigDict(extra="forbid")

    format_version: int
    stage: Stage
    objective: Objective = "supcon"
    seed: int
    backbone: BackboneSpec
    head: ClassifierHeadSpec | None = None
    optim: OptimConfig | None = None
    step: int = 0
    scheduler: SchedulerState | None = None
    training_log: list[TrainingLogEntry] = Field(default_factory=list)
    backbone_hash: str
    tensors: list[str]


@dataclass
class ModelCheckpoint:
    """
    Backbone spec and tensors, optional head, and the optimizer/scheduler
    state of the stage that produced it.

    backbone_hash is fixed when stage 1 finishes; every later checkpoint
    carries the same value and load_checkpoint verifies it.
    """

    stage: Stage
    seed: int
    backbone_spec: BackboneSpec
    backbone_params: dict[str, np.ndarray]
    backbone_buffers: dict[str, np.ndarray] = field(default_factory=dict)
    head_spec: ClassifierHeadSpec | None = None
    head_params: dict[str, np.ndarray] = field(default_factory=dict)
    head_buffers: dict[str, np.ndarray] = field(default_factory=dict)
    objective: Objective = "supcon"
    optim: OptimConfig | None = None
    step: int = 0
    moments_m: dict[str, np.ndarray] = field(default_factory=dict)
    moments_v: dict[str, np.ndarray] = field(default_factory=dict)
    scheduler: SchedulerState | None = None
    training_log: list[TrainingLogEntry] = field(default_factory=list)
    backbone_hash: str = ""

    def __post_init__(self) -> None:
        if not self.backbone_hash:
            self.backbone_hash = self.compute_backbone_hash()

    @property
    def has_head(self) -> bool:
        return self.head_spec is not None and bool(self.head_params)

    def compute_backbone_hash(self) -> str:
        return tensor_hash(self.backbone_params, self.backbone_buffers)

    def tensor_groups(self) -> dict[str, dict[str, np.ndarray]]:
        return {
            "backbone.param": self.backbone_params,
            "backbone.buffer": self.backbone_buffers,
            "head.param": self.head_params,
            "head.buffer": self.head_buffers,
            "optim.m": self.moments_m,
            "optim.v": self.moments_v,
        }


def encode_checkpoint(checkpoint: ModelCheckpoint) -> bytes:
    names: list[str] = []
    blocks: list[bytes] = []
    for prefix, group in checkpoint.tensor_groups().items():
        for name, array in group.items():
            names.append(f"{prefix}:{name}")
            blocks.append(encode_tensor(array))

    header = CheckpointHeader(
        format_version=FORMAT_VERSION,
        stage=checkpoint.stage,
        objective=checkpoint.objective,
        seed=checkpoint.seed,
        backbone=checkpoint.backbone_spec,
        head=checkpoint.head_spec,
        optim=checkpoint.optim,
        step=checkpoint.step,
        scheduler=checkpoint.scheduler,
        # wall-clock timings are not part of the reproducible state
        training_log=[e.model_copy(update={"wall_ms": None}) for e in checkpoint.training_log],
        backbone_hash=checkpoint.backbone_hash,
        tensors=names,
    )
    header_bytes = json.dumps(header.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode("utf-8")
    prefix = CHECKPOINT_MAGIC + struct.pack("<II", FORMAT_VERSION, len(header_bytes))
    return prefix + header_bytes + b"".join(blocks)


def decode_checkpoint(buffer: bytes) -> ModelCheckpoint:
    """
    Raises:
        CheckpointError: On magic/version mismatch, truncation, or a backbone
            whose tensors no longer match the recorded hash.
    """
    if len(buffer) < 12 or buffer[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, header_len = struct.unpack_from("<II", buffer, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    if 12 + header_len > len(buffer):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = CheckpointHeader.model_validate_json(buffer[12 : 12 + header_len])
    except ValidationError as e:
        raise CheckpointError(f"invalid checkpoint header: {e}") from e

    groups: dict[str, dict[str, np.ndarray]] = {}
    offset = 12 + header_len
    for qualified in header.tensors:
        prefix, _, name = qualified.partition(":")
        array, offset = decode_tensor(buffer, offset)
        groups.setdefault(prefix, {})[name] = array
    if offset != len(buffer):
        raise CheckpointError(f"{len(buffer) - offset} trailing bytes after last tensor")

    checkpoint = ModelCheckpoint(
        stage=header.stage,
        seed=header.seed,
        backbone_spec=header.backbone,
        backbone_params=groups.get("backbone.param", {}),
        backbone_buffers=groups.get("backbone.buffer", {}),
        head_spec=header.head,
        head_params=groups.get("head.param", {}),
        head_buffers=groups.get("head.buffer", {}),
        objective=header.objective,
        optim=header.optim,
        step=header.step,
        moments_m=groups.get("optim.m", {}),
        moments_v=groups.get("optim.v", {}),
        scheduler=header.scheduler,
        training_log=list(header.training_log),
        backbone_hash=header.backbone_hash,
    )
    actual = checkpoint.compute_backbone_hash()
    if actual != header.backbone_hash:
        raise CheckpointError(f"backbone hash mismatch: header {header.backbone_hash[:12]}, tensors {actual[:12]}")
    return checkpoint


def save_checkpoint(checkpoint: ModelCheckpoint, path: Path | str) -> None:
    try:
        write_bytes(path, encode_checkpoint(checkpoint))
    except StorageError as e:
        raise CheckpointError(str(e)) from e


def load_checkpoint(path: Path | str) -> ModelCheckpoint:
    path = Path(path)
    try:
        buffer = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(buffer)
