"""
Synthetic labeled corpus.

Reals are smooth low-frequency patterns; fakes are reals passed through one of
four artifact injectors, each standing in for a family of deepfake
generators. Every sample draws from its own keyed random stream, so the
corpus is identical for any thread count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog
from PIL import Image

from schemas.dataset import (
    GENERATED_SOURCE,
    DatasetManifest,
    FakeMethodSpec,
    ManifestRecord,
    Split,
)
from scripts.seeding import derive_rng

logger = structlog.get_logger()

IMAGE_DIRNAME = "images"
MANIFEST_FILENAME = "manifest.jsonl"


class SynthDataError(Exception):
    """Raised for invalid injector parameters or failed dataset writes."""

    pass


def generate_real_image(seed: int, size: int = 32) -> np.ndarray:
    """
    Smooth pattern: a radial gradient centered near the middle plus two
    low-frequency sinusoids with random phase, amplitude and orientation,
    over a random base color. Values are clamped to [0, 1].
    """
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.25, 0.75, size=3)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    cy, cx = (size - 1) / 2 + rng.uniform(-0.1, 0.1, size=2) * size
    radius = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) / (size / np.sqrt(2))
    radial = 0.5 - radius
    radial_color = rng.uniform(0.15, 0.35, size=3) * rng.choice([-1.0, 1.0], size=3)
    img = base + radial[..., None] * radial_color

    for _ in range(2):
        freq = rng.uniform(0.5, 2.0)
        angle = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2 * np.pi)
        amplitude = rng.uniform(0.04, 0.12)
        tint = rng.uniform(0.5, 1.0, size=3)
        wave = np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) / size + phase)
        img = img + amplitude * wave[..., None] * tint

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _check_region(region: tuple[int, int, int, int], size: int) -> tuple[int, int, int, int]:
    row, col, height, width = region
    if height <= 0 or width <= 0 or row < 0 or col < 0 or row + height > size or col + width > size:
        raise SynthDataError(f"region {region} outside a {size}x{size} image")
    return region


def _random_region(rng: np.random.Generator, size: int, fraction: float) -> tuple[int, int, int, int]:
    side = max(2, int(round(size * fraction)))
    row = int(rng.integers(0, size - side + 1))
    col = int(rng.integers(0, size - side + 1))
    return row, col, side, side


def patch_swap_coords(size: int, strength: float, rng: np.random.Generator) -> tuple[int, int, int, int, int]:
    """
    Two disjoint equal patches: one around the center, one in a corner.

    Returns (side, row_a, col_a, row_b, col_b).
    """
    side = int(round(strength * (size * 5 // 16)))
    if side == 0:
        return 0, 0, 0, 0, 0
    jitter = max(0, (size // 2 - side) // 4)
    row_a = (size - side) // 2 + int(rng.integers(-jitter, jitter + 1))
    col_a = (size - side) // 2 + int(rng.integers(-jitter, jitter + 1))
    corner = int(rng.integers(0, 4))
    row_b = 0 if corner in (0, 1) else size - side
    col_b = 0 if corner in (0, 2) else size - side
    return side, row_a, col_a, row_b, col_b


def inject_fake_artifact(img: np.ndarray, spec: FakeMethodSpec, seed: int) -> np.ndarray:
    """
    Apply one artifact injector.

    blend-seam: alpha-blend a second generated pattern over a vertical band.
    checker-artifact: add a +/-strength pixel checkerboard inside a region.
    patch-swap: exchange two equal disjoint patches (an involution).
    color-shift: rescale one channel's statistics inside a region.

    Strength 0 returns the input unchanged; output is clamped to [0, 1].

    Raises:
        SynthDataError: If a fixed region lies outside the image.
    """
    img = np.asarray(img, dtype=np.float32)
    size = img.shape[0]
    if img.ndim != 3 or img.shape[1] != size or img.shape[2] != 3:
        raise SynthDataError(f"expected a square RGB image, got shape {img.shape}")
    rng = np.random.default_rng(seed)
    strength = float(spec.strength)
    if strength == 0.0:
        return np.clip(img, 0.0, 1.0)
    out = img.copy()

    if spec.kind == "blend-seam":
        if spec.region is not None:
            row, col, height, width = _check_region(spec.region, size)
        else:
            width = max(2, size * 3 // 8)
            col = int(rng.integers(0, size - width + 1))
            row, height = 0, size
        overlay = generate_real_image(int(rng.integers(0, 2**31 - 1)), size)
        band = (slice(row, row + height), slice(col, col + width))
        out[band] = (1.0 - strength) * img[band] + strength * overlay[band]

    elif spec.kind == "checker-artifact":
        row, col, height, width = (
            _check_region(spec.region, size) if spec.region is not None else _random_region(rng, size, 0.75)
        )
        yy, xx = np.mgrid[0:height, 0:width]
        checker = np.where((yy + xx) % 2 == 0, strength, -strength).astype(np.float32)
        out[row : row + height, col : col + width] += checker[..., None]

    elif spec.kind == "patch-swap":
        if spec.region is not None:
            # region = (row_a, col_a, row_b, col_b) with side derived from strength
            row_a, col_a, row_b, col_b = spec.region
            side = int(round(strength * (size * 5 // 16)))
            _check_region((row_a, col_a, max(side, 1), max(side, 1)), size)
            _check_region((row_b, col_b, max(side, 1), max(side, 1)), size)
        else:
            side, row_a, col_a, row_b, col_b = patch_swap_coords(size, strength, rng)
        if side > 0:
            a = (slice(row_a, row_a + side), slice(col_a, col_a + side))
            b = (slice(row_b, row_b + side), slice(col_b, col_b + side))
            out[a], out[b] = img[b].copy(), img[a].copy()

    elif spec.kind == "color-shift":
        row, col, height, width = (
            _check_region(spec.region, size) if spec.region is not None else _random_region(rng, size, 0.65)
        )
        channel = int(rng.integers(0, 3))
        block = out[row : row + height, col : col + width, channel]
        mean = float(block.mean())
        gain = 1.0 + strength if mean < 0.5 else 1.0 - strength
        out[row : row + height, col : col + width, channel] = block * gain

    return np.clip(out, 0.0, 1.0).astype(np.float32)


def quantize(img: np.ndarray) -> np.ndarray:
    """Unit-interval float image -> 8-bit."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: np.ndarray, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(quantize(img)).save(path, format="PNG")
    except OSError as e:
        raise SynthDataError(f"failed to write {path}: {e}") from e


def load_png(path: Path | str) -> np.ndarray:
    """8-bit RGB PNG -> uint8 array (H, W, 3)."""
    with Image.open(path) as image:
        return np.asarray(image.convert("RGB"), dtype=np.uint8)


def split_counts(total: int, mix: list[float]) -> list[int]:
    """
    Largest-remainder split of `total` by the proportions in `mix`.

    Each count is within one of total * share.
    """
    weights = np.asarray(mix, dtype=np.float64)
    if weights.size == 0 or np.any(weights < 0) or weights.sum() <= 0:
        raise SynthDataError(f"invalid method mix {mix}")
    exact = total * weights / weights.sum()
    counts = np.floor(exact).astype(int)
    remainder = total - int(counts.sum())
    order = sorted(range(len(mix)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return [int(c) for c in counts]


@dataclass(frozen=True)
class SampleJob:
    """Everything needed to render one sample independently of the others."""

    id: str
    split: Split
    label: int
    source: str
    methods: tuple[FakeMethodSpec, ...] = ()

    @property
    def relpath(self) -> str:
        return f"{IMAGE_DIRNAME}/{self.split}/{self.id}.png"


def render_sample(job: SampleJob, seed: int, size: int) -> np.ndarray:
    """Deterministic image for a job, keyed by (seed, sample id)."""
    rng = derive_rng(seed, "sample", job.id)
    img = generate_real_image(int(rng.integers(0, 2**63 - 1)), size)
    for spec in job.methods:
        img = inject_fake_artifact(img, spec, int(rng.integers(0, 2**63 - 1)))
    return img


def plan_jobs(
    train_real: int,
    train_fake: int,
    val_real: int,
    val_fake: int,
    methods: list[FakeMethodSpec],
    method_mix: list[float],
    generated_fakes: int = 0,
    seed: int = 0,
) -> list[SampleJob]:
    """Sample jobs in manifest order: per split, reals then fakes by method, then generated fakes."""
    if len(methods) != len(method_mix):
        raise SynthDataError(f"{len(methods)} fake methods but {len(method_mix)} mix weights")
    jobs: list[SampleJob] = []
    for split, n_real, n_fake in (("train", train_real, train_fake), ("val", val_real, val_fake)):
        jobs.extend(SampleJob(f"{split}-real-{i:06d}", split, 1, "real-orig") for i in range(n_real))
        for spec, count in zip(methods, split_counts(n_fake, method_mix)):
            jobs.extend(
                SampleJob(f"{split}-fake-m{spec.method_id}-{i:06d}", split, 0, spec.source, (spec,))
                for i in range(count)
            )
    if generated_fakes:
        if len(methods) < 2:
            raise SynthDataError("generated fakes chain two distinct methods; need at least two")
        for i in range(generated_fakes):
            rng = derive_rng(seed, "generated", i)
            first, second = rng.choice(len(methods), size=2, replace=False)
            pair = (methods[int(first)], methods[int(second)])
            jobs.append(SampleJob(f"train-gen-{i:06d}", "train", 0, GENERATED_SOURCE, pair))
    return jobs


def generate_dataset(
    out_dir: Path | str,
    seed: int,
    train_real: int = 2000,
    train_fake: int = 6000,
    val_real: int = 400,
    val_fake: int = 400,
    methods: list[FakeMethodSpec] | None = None,
    method_mix: list[float] | None = None,
    generated_fakes: int = 0,
    image_size: int = 32,
    threads: int = 1,
) -> DatasetManifest:
    """
    Render every sample to PNG under out_dir and write manifest.jsonl.

    Raises:
        SynthDataError: On invalid mixes or failed writes (names the path).
    """
    out_dir = Path(out_dir)
    methods = methods or FakeMethodSpec.defaults()
    method_mix = method_mix or [1.0 / len(methods)] * len(methods)
    jobs = plan_jobs(train_real, train_fake, val_real, val_fake, methods, method_mix, generated_fakes, seed)

    def write(job: SampleJob) -> ManifestRecord:
        save_png(render_sample(job, seed, image_size), out_dir / job.relpath)
        return ManifestRecord(id=job.id, path=job.relpath, label=job.label, source=job.source, split=job.split)

    logger.info("synth_started", samples=len(jobs), seed=seed, threads=threads, out_dir=str(out_dir))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(write, jobs))
    else:
        records = [write(job) for job in jobs]

    manifest = DatasetManifest(records=records).with_root(out_dir)
    manifest.save(out_dir / MANIFEST_FILENAME)
    logger.info("synth_complete", samples=len(records), real=sum(r.label for r in records))
    return manifest
