"""Tests for layers, model assembly and the backbone presets."""

import numpy as np
import pytest

from schemas.model import BackboneSpec, ClassifierHeadSpec, LayerSpec
from scripts.nn_core import (
    ShapeError,
    build_backbone,
    build_head,
    build_model,
    estimate_macs,
    layer_backward,
    layer_forward,
    make_layer,
)

PRESETS = ("local-cnn", "multiscale-cnn", "global-mlp")


def bound_layer(spec: LayerSpec, input_shape: tuple[int, ...], seed: int = 0):
    layer = make_layer(spec)
    layer.bind(input_shape)
    layer.init_params(np.random.default_rng(seed))
    return layer


class TestLayers:
    """Forward/backward behavior of individual layers."""

    def test_relu_forward_and_backward(self):
        """ReLU zeroes negatives and passes gradient only where the input was positive."""
        layer = bound_layer(LayerSpec(kind="relu"), (3,))
        out, cache = layer_forward(layer, np.array([[-1.0, 0.0, 2.0]]))
        assert out.tolist() == [[0.0, 0.0, 2.0]]
        grad_in, grads = layer_backward(layer, cache, np.array([[5.0, 5.0, 5.0]]))
        assert grad_in.tolist() == [[0.0, 0.0, 5.0]]
        assert grads == {}

    def test_dense_parameter_gradient_is_outer_product(self):
        """dL/dW = x^T g and dL/db = sum of g for a dense layer."""
        layer = bound_layer(LayerSpec.dense(2, 3), (2,))
        x = np.array([[1.0, 2.0]])
        g = np.array([[0.5, -1.0, 2.0]])
        _, cache = layer_forward(layer, x)
        _, grads = layer_backward(layer, cache, g)
        np.testing.assert_allclose(grads["W"], np.outer(x[0], g[0]))
        np.testing.assert_allclose(grads["b"], g[0])

    def test_dropout_is_identity_in_eval_mode(self):
        """Eval-mode dropout returns its input unchanged."""
        layer = bound_layer(LayerSpec.dropout(0.3), (5,))
        x = np.arange(10, dtype=np.float64).reshape(2, 5)
        out, _ = layer_forward(layer, x, mode="eval")
        np.testing.assert_array_equal(out, x)

    def test_dropout_preserves_expectation(self):
        """Inverted dropout keeps the mean activation unchanged in expectation."""
        layer = bound_layer(LayerSpec.dropout(0.3), (10_000,))
        out, _ = layer_forward(layer, np.ones((4, 10_000)), mode="train", rng=np.random.default_rng(0))
        assert abs(out.mean() - 1.0) < 0.02

    def test_batchnorm_train_output_is_standardized(self):
        """Train-mode batchnorm output has per-channel mean 0 and variance 1."""
        layer = bound_layer(LayerSpec.batchnorm(4), (4,))
        x = np.random.default_rng(1).normal(loc=3.0, scale=10.0, size=(64, 4))
        out, _ = layer_forward(layer, x, mode="train")
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-4)

    def test_batchnorm_updates_running_stats_only_in_train_mode(self):
        """Eval mode leaves the running statistics alone."""
        layer = bound_layer(LayerSpec.batchnorm(2), (2,))
        x = np.random.default_rng(2).normal(size=(16, 2))
        layer_forward(layer, x, mode="eval")
        np.testing.assert_array_equal(layer.buffers["running_mean"], [0.0, 0.0])
        layer_forward(layer, x, mode="train")
        assert np.any(layer.buffers["running_mean"] != 0.0)

    def test_batchnorm_single_sample_keeps_running_stats(self):
        """A one-sample train batch leaves running mean and variance unchanged."""
        layer = bound_layer(LayerSpec.batchnorm(2), (2,))
        layer_forward(layer, np.array([[3.0, -1.0]]), mode="train")
        np.testing.assert_array_equal(layer.buffers["running_mean"], [0.0, 0.0])
        np.testing.assert_array_equal(layer.buffers["running_var"], [1.0, 1.0])

    def test_maxpool_routes_gradient_to_window_max(self):
        """Max pooling sends each window's gradient to its maximum."""
        layer = bound_layer(LayerSpec(kind="maxpool2"), (2, 2, 1))
        x = np.array([1.0, 4.0, 3.0, 2.0]).reshape(1, 2, 2, 1)
        out, cache = layer_forward(layer, x)
        assert out.reshape(-1).tolist() == [4.0]
        grad_in, _ = layer_backward(layer, cache, np.ones((1, 1, 1, 1)))
        assert grad_in.reshape(-1).tolist() == [0.0, 1.0, 0.0, 0.0]

    def test_conv_keeps_spatial_size(self):
        """Same-padded convolution maps (H, W, C_in) to (H, W, C_out)."""
        layer = bound_layer(LayerSpec.conv(3, 5, kernel=5), (6, 6, 3))
        out, _ = layer_forward(layer, np.zeros((2, 6, 6, 3)))
        assert out.shape == (2, 6, 6, 5)
        assert layer.params["W"].shape == (3, 5, 5, 5)

    def test_patchify_backward_inverts_forward(self):
        """Patchify is a permutation, so backward of the forward output restores the input."""
        layer = bound_layer(LayerSpec(kind="patchify", patch=2), (4, 4, 3))
        x = np.random.default_rng(3).normal(size=(2, 4, 4, 3))
        out, cache = layer_forward(layer, x)
        restored, _ = layer_backward(layer, cache, out)
        np.testing.assert_array_equal(restored, x)

    def test_backward_rejects_mismatched_gradient_shape(self):
        """A gradient whose shape differs from the forward output is a shape error."""
        layer = bound_layer(LayerSpec.dense(2, 3), (2,))
        _, cache = layer_forward(layer, np.ones((4, 2)))
        with pytest.raises(ShapeError):
            layer_backward(layer, cache, np.ones((4, 2)))

    def test_forward_rejects_wrong_input_shape(self):
        """Layers check the per-sample input shape."""
        layer = bound_layer(LayerSpec.dense(2, 3), (2,))
        with pytest.raises(ShapeError):
            layer_forward(layer, np.ones((4, 5)))


class TestModel:
    """Model assembly, naming and hashing."""

    def test_incompatible_layers_raise_shape_error(self):
        """A dense layer after a conv layer without pooling is rejected at build time."""
        specs = [LayerSpec.conv(3, 4), LayerSpec.dense(4, 2)]
        with pytest.raises(ShapeError, match="layer 1"):
            build_model("bad", specs, (8, 8, 3), seed=0)

    def test_parameter_names_carry_index_and_kind(self):
        """Parameters are named '<index>.<kind>.<key>'."""
        model = build_model("m", [LayerSpec.dense(3, 2), LayerSpec(kind="relu"), LayerSpec.dense(2, 1)], (3,), seed=0)
        assert list(model.parameters()) == ["0.dense.W", "0.dense.b", "2.dense.W", "2.dense.b"]
        assert model.num_parameters() == 3 * 2 + 2 + 2 * 1 + 1

    def test_empty_model_is_identity(self):
        """A model with no layers returns its input."""
        model = build_model("identity", [], (4,), seed=0)
        x = np.arange(8.0).reshape(2, 4)
        np.testing.assert_array_equal(model.predict(x), x)

    def test_param_hash_tracks_values(self):
        """The parameter hash changes when any parameter changes."""
        model = build_model("m", [LayerSpec.dense(3, 2)], (3,), seed=0)
        before = model.param_hash()
        assert model.param_hash() == before
        model.parameters()["0.dense.b"][0] += 1.0
        assert model.param_hash() != before

    def test_load_arrays_checks_shapes(self):
        """Loading a tensor of the wrong shape is a shape error."""
        model = build_model("m", [LayerSpec.dense(3, 2)], (3,), seed=0)
        with pytest.raises(ShapeError):
            model.load_arrays({"0.dense.W": np.zeros((2, 3)), "0.dense.b": np.zeros(2)})

    def test_astype_copies(self):
        """astype returns an independent copy in the new dtype."""
        model = build_model("m", [LayerSpec.dense(3, 2)], (3,), seed=0)
        clone = model.astype(np.float64)
        assert clone.parameters()["0.dense.W"].dtype == np.float64
        clone.parameters()["0.dense.W"][...] = 0.0
        assert np.any(model.parameters()["0.dense.W"] != 0.0)


class TestBackbones:
    """The three preset backbones and the classifier head."""

    @pytest.mark.parametrize("name", PRESETS)
    def test_preset_output_shape(self, name):
        """Every preset maps 32x32 RGB images to 64-dimensional embeddings."""
        model = build_backbone(BackboneSpec.preset(name), seed=0)
        out = model.predict(np.zeros((2, 32, 32, 3), dtype=np.float32))
        assert out.shape == (2, 64)

    @pytest.mark.parametrize("image_size", [8, 12, 32, 36])
    def test_global_mlp_keeps_positions(self, image_size):
        """global-mlp maps its conv stem through a dense layer without pooling over space."""
        spec = BackboneSpec.preset("global-mlp", embedding_dim=8, image_size=image_size)
        kinds = [layer.kind for layer in spec.layers]
        assert kinds[0] == "conv3x3"
        assert "global_avg_pool" not in kinds
        model = build_backbone(spec, seed=0)
        assert model.predict(np.zeros((2, image_size, image_size, 3), dtype=np.float32)).shape == (2, 8)

    @pytest.mark.parametrize("name", PRESETS)
    def test_same_seed_same_parameters(self, name):
        """Initialization is a pure function of the seed."""
        spec = BackboneSpec.preset(name, embedding_dim=8, image_size=8)
        a, b = build_backbone(spec, seed=11), build_backbone(spec, seed=11)
        assert a.param_hash() == b.param_hash()
        assert build_backbone(spec, seed=12).param_hash() != a.param_hash()

    def test_presets_differ_in_cost(self):
        """The presets have distinct multiply-accumulate counts."""
        costs = {name: estimate_macs(BackboneSpec.preset(name)) for name in PRESETS}
        assert len(set(costs.values())) == 3
        assert all(cost > 0 for cost in costs.values())

    def test_head_outputs_one_logit(self):
        """The classifier head maps embeddings to a single logit."""
        head = build_head(ClassifierHeadSpec(hidden=16), embedding_dim=8, seed=0)
        assert head.predict(np.zeros((5, 8), dtype=np.float32)).shape == (5, 1)
