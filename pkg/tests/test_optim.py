"""Tests for Adam/AdamW and the plateau scheduler."""

import numpy as np
import pytest

from schemas.model import OptimConfig, SchedulerConfig, SchedulerState
from scripts.optim import GradientError, OptimizerState, adam_step, adamw_step, optimizer_step, plateau_step


def fresh(values) -> dict[str, np.ndarray]:
    return {"w": np.array(values, dtype=np.float64)}


class TestAdamW:
    """Decoupled weight decay and the adaptive step."""

    def test_decay_only_step(self):
        """With a zero gradient, one AdamW step shrinks theta by lr * weight_decay."""
        theta = fresh([1.0, -2.0])
        cfg = OptimConfig(algorithm="adamw", lr=3e-5, weight_decay=1e-2)
        adamw_step(theta, {"w": np.zeros(2)}, OptimizerState.zeros_like(theta), cfg)
        np.testing.assert_allclose(theta["w"], [1.0 - 3e-7, -2.0 + 6e-7], rtol=0, atol=1e-12)

    def test_zero_decay_matches_adam(self):
        """AdamW with weight_decay 0 is bit-for-bit Adam."""
        rng = np.random.default_rng(0)
        a = fresh(rng.normal(size=5))
        b = {"w": a["w"].copy()}
        state_a, state_b = OptimizerState.zeros_like(a), OptimizerState.zeros_like(b)
        for _ in range(5):
            g = {"w": rng.normal(size=5)}
            adamw_step(a, g, state_a, OptimConfig(algorithm="adamw", lr=1e-2, weight_decay=0.0))
            adam_step(b, g, state_b, OptimConfig(algorithm="adam", lr=1e-2))
        np.testing.assert_array_equal(a["w"], b["w"])

    def test_first_step_moves_by_lr_times_sign(self):
        """The bias-corrected first step is lr * sign(g) up to eps."""
        theta = fresh([0.0, 0.0, 0.0])
        g = {"w": np.array([0.3, -2.0, 1e-3])}
        adam_step(theta, g, OptimizerState.zeros_like(theta), OptimConfig(algorithm="adam", lr=1e-3))
        np.testing.assert_allclose(theta["w"], -1e-3 * np.sign(g["w"]), rtol=1e-4)

    def test_zero_gradient_leaves_adam_unchanged(self):
        """Adam without decay does not move on a zero gradient."""
        theta = fresh([1.0, 2.0])
        adam_step(theta, {"w": np.zeros(2)}, OptimizerState.zeros_like(theta), OptimConfig(algorithm="adam"))
        np.testing.assert_array_equal(theta["w"], [1.0, 2.0])

    def test_constant_gradient_steps_do_not_grow(self):
        """The second step under a constant gradient is no larger than the first."""
        theta = fresh([0.0])
        state = OptimizerState.zeros_like(theta)
        cfg = OptimConfig(algorithm="adam", lr=1e-2)
        g = {"w": np.array([0.7])}
        adam_step(theta, g, state, cfg)
        first = abs(theta["w"][0])
        adam_step(theta, g, state, cfg)
        second = abs(theta["w"][0]) - first
        assert second <= first + 1e-9
        assert state.t == 2

    def test_non_finite_gradient_names_parameter(self):
        """A NaN gradient is refused and the parameter is named."""
        theta = {"layer.W": np.zeros(2)}
        with pytest.raises(GradientError, match="layer.W"):
            adamw_step(theta, {"layer.W": np.array([np.nan, 0.0])}, OptimizerState.zeros_like(theta), OptimConfig())
        np.testing.assert_array_equal(theta["layer.W"], [0.0, 0.0])

    def test_mis_shaped_gradient_rejected(self):
        """Gradient and parameter shapes must agree."""
        theta = fresh([0.0, 0.0])
        with pytest.raises(GradientError, match="shape"):
            adamw_step(theta, {"w": np.zeros(3)}, OptimizerState.zeros_like(theta), OptimConfig())

    def test_optimizer_step_dispatches_on_algorithm(self):
        """optimizer_step applies decay only for adamw."""
        a, b = fresh([1.0]), fresh([1.0])
        zero = {"w": np.zeros(1)}
        optimizer_step(a, zero, OptimizerState.zeros_like(a), OptimConfig(algorithm="adamw", weight_decay=0.1))
        optimizer_step(b, zero, OptimizerState.zeros_like(b), OptimConfig(algorithm="adam"))
        assert a["w"][0] < 1.0
        assert b["w"][0] == 1.0

    def test_adam_with_weight_decay_is_invalid(self):
        """Adam configs refuse a weight decay."""
        with pytest.raises(ValueError, match="weight_decay"):
            OptimConfig(algorithm="adam", weight_decay=1e-2)


class TestPlateauScheduler:
    """Reduce-on-plateau behavior."""

    def test_worked_example(self):
        """Losses 1.0, 0.95, 0.96, 0.97 with patience 1 reduce the rate after 0.97."""
        state = SchedulerState.start(5e-5, SchedulerConfig(factor=0.5, patience=1))
        lrs = []
        for loss in (1.0, 0.95, 0.96, 0.97):
            state = plateau_step(state, loss)
            lrs.append(state.current_lr)
        assert lrs == [5e-5, 5e-5, 5e-5, 2.5e-5]
        assert state.bad_count == 0
        assert state.best_loss == 0.95

    def test_equal_loss_is_not_improvement(self):
        """Improvement is strict."""
        state = plateau_step(SchedulerState.start(1e-3, SchedulerConfig(patience=0)), 1.0)
        state = plateau_step(state, 1.0)
        assert state.num_reductions == 1

    def test_rate_is_exact_power_of_factor(self):
        """After k reductions the rate is initial * factor**k with no drift."""
        state = SchedulerState.start(1e-3, SchedulerConfig(factor=0.5, patience=0))
        state = plateau_step(state, 1.0)
        for _ in range(7):
            state = plateau_step(state, 2.0)
        assert state.num_reductions == 7
        assert state.current_lr == 1e-3 * 0.5**7

    def test_rate_never_increases(self):
        """The learning rate is monotonically non-increasing."""
        rng = np.random.default_rng(0)
        state = SchedulerState.start(1e-3)
        previous = state.current_lr
        for loss in rng.uniform(0.0, 1.0, size=50):
            state = plateau_step(state, float(loss))
            assert state.current_lr <= previous
            previous = state.current_lr

    def test_non_finite_loss_rejected(self):
        """A NaN validation loss is an error."""
        with pytest.raises(ValueError):
            plateau_step(SchedulerState.start(1e-3), float("nan"))
