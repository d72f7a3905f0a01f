"""
Offline (persisted) and online (per-batch) augmentation.

Images are float H x W x 3 arrays in [0, 1]. HSV images carry hue in degrees
[0, 360) and saturation/value in [0, 1].
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal

import numpy as np
import structlog
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy import ndimage

from schemas.dataset import DatasetManifest, ManifestRecord
from schemas.transforms import OFFLINE_KINDS, OnlineAugConfig, TransformSpec
from scripts.seeding import derive_rng
from scripts.synthdata import IMAGE_DIRNAME, MANIFEST_FILENAME, load_png, save_png

logger = structlog.get_logger()

OFFLINE_SOURCE = "real-offline-aug"


class AugmentError(Exception):
    """Raised for out-of-range transform parameters or failed augmentation writes."""

    pass


@dataclass(frozen=True)
class Sample:
    """A training sample as the online augmenter sees it."""

    id: str
    image: np.ndarray
    label: int


@dataclass(frozen=True)
class AppliedTransform:
    pipeline: int
    kind: str
    param: float | None


def color_convert(img: np.ndarray, direction: Literal["rgb->hsv", "hsv->rgb"]) -> np.ndarray:
    """Hexcone RGB <-> HSV, hue in degrees."""
    arr = np.asarray(img, dtype=np.float64)
    if direction == "rgb->hsv":
        hsv = rgb_to_hsv(np.clip(arr, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] * 360.0) % 360.0
        return hsv
    if direction == "hsv->rgb":
        hsv = arr.copy()
        hsv[..., 0] = (hsv[..., 0] % 360.0) / 360.0
        hsv[..., 1:] = np.clip(hsv[..., 1:], 0.0, 1.0)
        return hsv_to_rgb(hsv)
    raise AugmentError(f"unknown color conversion: {direction}")


def _rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0.0:
        return img.copy()
    # bilinear, reflect-padded, rotation about the center in the H x W plane
    return ndimage.rotate(img, degrees, axes=(1, 0), reshape=False, order=1, mode="reflect")


def apply_transform(img: np.ndarray, spec: TransformSpec, param: float | None = None) -> np.ndarray:
    """
    Apply one transform with an already-drawn parameter; output is clamped to [0, 1].

    Raises:
        AugmentError: If the parameter is outside its range (or given to a flip).
    """
    if not spec.accepts(param):
        raise AugmentError(f"{spec.kind} parameter {param} outside {spec.range}")
    img = np.asarray(img, dtype=np.float32)

    if spec.kind == "hflip":
        out = img[:, ::-1]
    elif spec.kind == "vflip":
        out = img[::-1, :]
    elif spec.kind == "brightness":
        out = img * np.float32(param)
    elif spec.kind == "rotation":
        out = _rotate(img, float(param))
    else:
        hsv = color_convert(img, "rgb->hsv")
        if spec.kind == "hue":
            if param == 0.0:
                return img.copy()
            hsv[..., 0] = (hsv[..., 0] + param) % 360.0
        else:
            if param == 1.0:
                return img.copy()
            hsv[..., 1] = np.clip(hsv[..., 1] * param, 0.0, 1.0)
        out = color_convert(hsv, "hsv->rgb")

    return np.ascontiguousarray(np.clip(out, 0.0, 1.0), dtype=np.float32)


def offline_count(n_real: int, fraction: float) -> int:
    """Number of new records offline augmentation adds: floor(fraction * n_real)."""
    if not 0.0 <= fraction <= 1.0:
        raise AugmentError(f"offline fraction must be in [0, 1], got {fraction}")
    return math.floor(fraction * n_real)


def _rebase(record: ManifestRecord, manifest: DatasetManifest, out_dir: Path) -> ManifestRecord:
    if manifest.root.resolve() == out_dir.resolve():
        return record
    relative = os.path.relpath(manifest.resolve(record), out_dir)
    return record.model_copy(update={"path": Path(relative).as_posix()})


def offline_augment(
    manifest: DatasetManifest,
    fraction: float,
    seed: int,
    out_dir: Path | str,
    threads: int = 1,
) -> DatasetManifest:
    """
    Persist augmented copies of floor(fraction * N_real) original real train images.

    Each chosen image gets one transform drawn uniformly from
    {rotation, brightness, hue, saturation} with a uniform parameter. New
    records (source real-offline-aug, id '<id>-aug') are appended after the
    originals, which are kept. The result is written to out_dir/manifest.jsonl.

    Raises:
        AugmentError: On write failures (names the path).
    """
    out_dir = Path(out_dir)
    reals = [r for r in manifest.select(split="train", label=1) if r.source == "real-orig"]
    count = offline_count(len(reals), fraction)
    order = derive_rng(seed, "offline-select").permutation(len(reals))
    chosen = [reals[i] for i in sorted(order[:count])]

    def augment_one(record: ManifestRecord) -> ManifestRecord:
        rng = derive_rng(seed, "offline", record.id)
        spec = TransformSpec(kind=OFFLINE_KINDS[int(rng.integers(len(OFFLINE_KINDS)))])
        image = load_png(manifest.resolve(record)).astype(np.float32) / 255.0
        augmented = apply_transform(image, spec, spec.draw(rng))
        new_id = f"{record.id}-aug"
        relpath = f"{IMAGE_DIRNAME}/{record.split}/{new_id}.png"
        try:
            save_png(augmented, out_dir / relpath)
        except Exception as e:
            raise AugmentError(f"failed to write {out_dir / relpath}: {e}") from e
        return ManifestRecord(id=new_id, path=relpath, label=1, source=OFFLINE_SOURCE, split=record.split)

    logger.info("offline_augment_started", reals=len(reals), fraction=fraction, new_records=count, threads=threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            added = list(pool.map(augment_one, chosen))
    else:
        added = [augment_one(r) for r in chosen]

    base = DatasetManifest(records=[_rebase(r, manifest, out_dir) for r in manifest.records])
    result = base.extend(added).with_root(out_dir)
    result.save(out_dir / MANIFEST_FILENAME)
    logger.info("offline_augment_complete", records=len(result.records), added=len(added))
    return result


def draw_online_transform(cfg: OnlineAugConfig, rng: np.random.Generator) -> AppliedTransform | None:
    """Trigger with probability p_aug, then pick a pipeline uniformly and draw its parameter."""
    if rng.random() >= cfg.p_aug:
        return None
    index = int(rng.integers(len(cfg.pipelines)))
    spec = TransformSpec(kind=cfg.pipelines[index])
    return AppliedTransform(pipeline=index, kind=spec.kind, param=spec.draw(rng))


def online_augment(sample: Sample, cfg: OnlineAugConfig, rng: np.random.Generator) -> Sample:
    """Possibly transform a sample's image; id and label are never touched."""
    applied = draw_online_transform(cfg, rng)
    if applied is None:
        return sample
    image = apply_transform(sample.image, TransformSpec(kind=applied.kind), applied.param)
    return replace(sample, image=image)
