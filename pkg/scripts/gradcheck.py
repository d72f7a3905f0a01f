"""
Central-difference verification of analytic gradients.

The check runs on a float64 copy of the model so the comparison measures the
difference scheme, not float32 rounding. Dropout masks are held fixed by
reseeding the mask stream before every evaluation.

A coordinate whose +h or -h evaluation changes a ReLU activation pattern or a
max-pool winner straddles a kink; its difference quotient does not estimate
the derivative, so it is recorded but excluded from the verdict.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import structlog

from scripts.nn_core import Cache, Mode, Model

logger = structlog.get_logger()

# loss_fn(output) -> (scalar loss, d loss / d output)
LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]

INPUT_NAME = "<input>"


@dataclass
class CoordinateCheck:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    kinked: bool = False

    @property
    def error(self) -> float:
        return abs(self.analytic - self.numeric) / max(1.0, abs(self.numeric))


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference check; `worst` is the largest relative error."""

    passed: bool
    tolerance: float
    checked: int
    worst: CoordinateCheck | None
    coordinates: list[CoordinateCheck] = field(default_factory=list)

    @property
    def kinked(self) -> int:
        return sum(c.kinked for c in self.coordinates)

    @property
    def worst_error(self) -> float:
        return self.worst.error if self.worst else 0.0

    def summary(self) -> dict[str, object]:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "checked": self.checked,
            "kinked": self.kinked,
            "worst_error": self.worst_error,
            "worst_name": self.worst.name if self.worst else None,
            "worst_index": list(self.worst.index) if self.worst else None,
        }


def _sample_coordinates(
    arrays: dict[str, np.ndarray], min_total: int, rng: np.random.Generator
) -> list[tuple[str, tuple[int, ...]]]:
    """At least one coordinate per array, at least min_total overall."""
    names = [n for n, a in arrays.items() if a.size > 0]
    per_array = max(1, -(-min_total // max(1, len(names))))
    picked = []
    for name in names:
        array = arrays[name]
        count = min(per_array, array.size)
        flat = rng.choice(array.size, size=count, replace=False)
        picked.extend((name, tuple(int(i) for i in np.unravel_index(f, array.shape))) for f in sorted(flat))
    return picked


def _activation_pattern(caches: list[Cache]) -> bytes:
    """ReLU masks and max-pool winners of one forward pass."""
    parts = []
    for cache in caches:
        if "active" in cache:
            parts.append(np.packbits(cache["active"]).tobytes())
        if "idx" in cache:
            parts.append(cache["idx"].astype(np.int8).tobytes())
    return b"".join(parts)


def finite_diff_check(
    model: Model,
    loss_fn: LossFn,
    input_batch: np.ndarray,
    tolerance: float = 1e-3,
    h: float = 1e-3,
    min_coordinates: int = 64,
    mode: Mode = "train",
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare backprop gradients with central differences.

    Coordinates are sampled from every parameter tensor and from the input,
    so parameter-free layers are covered through the input gradient.
    Exceeding the tolerance yields a failing report rather than an exception;
    a report with no kink-free coordinate also fails.
    """
    model64 = model.astype(np.float64)
    x = np.array(input_batch, dtype=np.float64)

    def evaluate(inputs: np.ndarray) -> tuple[float, np.ndarray, list[Cache]]:
        rng = np.random.default_rng(seed)
        out, caches = model64.forward(inputs, mode=mode, rng=rng)
        loss, grad = loss_fn(out)
        return float(loss), np.asarray(grad, dtype=np.float64), caches

    _, grad_out, caches = evaluate(x)
    base_pattern = _activation_pattern(caches)
    grad_in, grads = model64.backward(caches, grad_out)

    params = model64.parameters()
    arrays = {**params, INPUT_NAME: x}
    analytic = {**grads, INPUT_NAME: grad_in}
    coords = _sample_coordinates(arrays, min_coordinates, np.random.default_rng(seed + 1))

    results = []
    for name, index in coords:
        target = arrays[name]
        original = target[index]
        target[index] = original + h
        plus, _, plus_caches = evaluate(x)
        target[index] = original - h
        minus, _, minus_caches = evaluate(x)
        target[index] = original
        numeric = (plus - minus) / (2.0 * h)
        kinked = _activation_pattern(plus_caches) != base_pattern or _activation_pattern(minus_caches) != base_pattern
        results.append(CoordinateCheck(name, index, float(analytic[name][index]), numeric, kinked))

    smooth = [c for c in results if not c.kinked]
    worst = max(smooth, key=lambda c: c.error) if smooth else None
    passed = bool(smooth) and all(np.isfinite(c.analytic) and c.error <= tolerance for c in smooth)
    report = GradCheckReport(passed=passed, tolerance=tolerance, checked=len(smooth), worst=worst, coordinates=results)
    logger.debug("gradcheck", model=model.name, **report.summary())
    return report
