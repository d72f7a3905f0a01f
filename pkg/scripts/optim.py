"""
Adam / AdamW updates and the reduce-on-plateau scheduler.
"""

from dataclasses import dataclass, field

import numpy as np
import structlog

from schemas.model import OptimConfig, SchedulerState

logger = structlog.get_logger()


class GradientError(Exception):
    """Raised when a gradient cannot be applied."""

    pass


@dataclass
class OptimizerState:
    """Per-parameter first/second moments and the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def _adaptive_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: OptimConfig,
    weight_decay: float,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    for name, g in grads.items():
        if name not in params:
            raise GradientError(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise GradientError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {name}")

    state.t += 1
    bias1 = 1.0 - cfg.beta1**state.t
    bias2 = 1.0 - cfg.beta2**state.t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name]
        v = state.v[name]
        m[...] = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v[...] = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        ratio = (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
        # decoupled decay sits outside the adaptive ratio
        update = ratio if weight_decay == 0.0 else ratio + weight_decay * theta
        theta -= cfg.lr * update
    return params, state


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: OptimConfig,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """
    One AdamW update, in place.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)

    Raises:
        GradientError: If a gradient is non-finite or mis-shaped (names the parameter).
    """
    return _adaptive_step(params, grads, state, cfg, cfg.weight_decay)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: OptimConfig,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One Adam update, in place; identical to adamw_step with weight_decay 0."""
    return _adaptive_step(params, grads, state, cfg, 0.0)


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: OptimConfig,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    step = adamw_step if cfg.algorithm == "adamw" else adam_step
    return step(params, grads, state, cfg)


def plateau_step(state: SchedulerState, val_loss: float) -> SchedulerState:
    """
    Advance the plateau scheduler by one epoch.

    Improvement is strict (val_loss < best_loss). After more than `patience`
    consecutive non-improving epochs the learning rate is multiplied by
    `factor` and the counter resets.
    """
    if not np.isfinite(val_loss):
        raise ValueError(f"validation loss must be finite, got {val_loss}")
    if state.best_loss is None or val_loss < state.best_loss:
        return state.model_copy(update={"best_loss": float(val_loss), "bad_count": 0})

    bad_count = state.bad_count + 1
    if bad_count > state.patience:
        reduced = state.model_copy(update={"bad_count": 0, "num_reductions": state.num_reductions + 1})
        logger.warning("lr_reduced", lr=reduced.current_lr, reductions=reduced.num_reductions)
        return reduced
    return state.model_copy(update={"bad_count": bad_count})
