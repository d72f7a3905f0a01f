"""
Minimal tensor/network engine on numpy.

Activations are float32 arrays, images laid out NHWC. Every layer exposes an
exact forward/backward pair; forward returns a cache that backward consumes,
so a forward call can be replayed against any upstream gradient.
"""

import copy
from typing import Any, Literal

import numpy as np
import structlog
from numpy.lib.stride_tricks import sliding_window_view

from schemas.checkpoint import tensor_hash
from schemas.model import BackboneSpec, ClassifierHeadSpec, LayerSpec

logger = structlog.get_logger()

Mode = Literal["train", "eval"]
Cache = dict[str, Any]

BATCHNORM_MOMENTUM = 0.1
BATCHNORM_EPS = 1e-5


class NNError(Exception):
    """Base exception for network construction and execution."""

    pass


class ShapeError(NNError):
    """Raised when a tensor does not match what a layer expects."""

    pass


class Layer:
    """Base layer: shape binding, parameter init, forward/backward."""

    def __init__(self, spec: LayerSpec) -> None:
        self.spec = spec
        self.kind = spec.kind
        self.input_shape: tuple[int, ...] = ()
        self.output_shape: tuple[int, ...] = ()
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def bind(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Record the per-sample input shape and return the output shape."""
        self.input_shape = tuple(input_shape)
        self.output_shape = self._infer(self.input_shape)
        return self.output_shape

    def _infer(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def macs(self) -> int:
        return 0

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim < 1 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"{self.kind} expects (N, {self.input_shape}), got {x.shape}")

    def forward(self, x: np.ndarray, mode: Mode, rng: np.random.Generator | None) -> tuple[np.ndarray, Cache]:
        raise NotImplementedError

    def backward(self, cache: Cache, grad_out: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        raise NotImplementedError


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Dense(Layer):
    def _infer(self, shape):
        if shape != (self.spec.fan_in,):
            raise ShapeError(f"dense expects fan_in {self.spec.fan_in}, previous layer gives {shape}")
        return (self.spec.fan_out,)

    def init_params(self, rng):
        fan_in, fan_out = self.spec.fan_in, self.spec.fan_out
        self.params = {
            "W": _he_uniform(rng, (fan_in, fan_out), fan_in),
            "b": np.zeros(fan_out, dtype=np.float32),
        }

    def macs(self):
        return self.spec.fan_in * self.spec.fan_out

    def forward(self, x, mode, rng):
        self.check_input(x)
        return x @ self.params["W"] + self.params["b"], {"x": x}

    def backward(self, cache, grad_out):
        x = cache["x"]
        grads = {"W": x.T @ grad_out, "b": grad_out.sum(axis=0)}
        return grad_out @ self.params["W"].T, grads


class Conv(Layer):
    """Stride-1 'same' convolution via im2col; weights shaped (C_in, k, k, C_out)."""

    def _infer(self, shape):
        if len(shape) != 3 or shape[2] != self.spec.in_channels:
            raise ShapeError(f"{self.kind} expects (H, W, {self.spec.in_channels}), previous layer gives {shape}")
        return (shape[0], shape[1], self.spec.out_channels)

    def init_params(self, rng):
        k = self.spec.kernel_size
        c_in, c_out = self.spec.in_channels, self.spec.out_channels
        self.params = {
            "W": _he_uniform(rng, (c_in, k, k, c_out), c_in * k * k),
            "b": np.zeros(c_out, dtype=np.float32),
        }

    def macs(self):
        h, w, c_in = self.input_shape
        k = self.spec.kernel_size
        return h * w * c_in * k * k * self.spec.out_channels

    def forward(self, x, mode, rng):
        self.check_input(x)
        k = self.spec.kernel_size
        pad = k // 2
        n, h, w, c = x.shape
        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        # (N, H, W, C, k, k) -> rows ordered (C, kh, kw) to match W's layout
        cols = sliding_window_view(padded, (k, k), axis=(1, 2)).reshape(n * h * w, c * k * k)
        weights = self.params["W"].reshape(c * k * k, -1)
        out = cols @ weights + self.params["b"]
        return out.reshape(n, h, w, -1), {"cols": cols, "shape": x.shape}

    def backward(self, cache, grad_out):
        cols = cache["cols"]
        n, h, w, c = cache["shape"]
        k = self.spec.kernel_size
        pad = k // 2
        g = grad_out.reshape(n * h * w, -1)
        weights = self.params["W"].reshape(c * k * k, -1)
        grads = {"W": (cols.T @ g).reshape(self.params["W"].shape), "b": g.sum(axis=0)}
        dcols = (g @ weights.T).reshape(n, h, w, c, k, k)
        dpadded = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                dpadded[:, i : i + h, j : j + w, :] += dcols[..., i, j]
        return dpadded[:, pad : pad + h, pad : pad + w, :], grads


class BatchNorm(Layer):
    """Normalizes over every axis but the last (channel) axis."""

    def _infer(self, shape):
        if not shape or shape[-1] != self.spec.channels:
            raise ShapeError(f"batchnorm expects {self.spec.channels} channels, previous layer gives {shape}")
        return shape

    def init_params(self, rng):
        c = self.spec.channels
        self.params = {"gamma": np.ones(c, dtype=np.float32), "beta": np.zeros(c, dtype=np.float32)}
        self.buffers = {"running_mean": np.zeros(c, dtype=np.float32), "running_var": np.ones(c, dtype=np.float32)}

    def forward(self, x, mode, rng):
        self.check_input(x)
        axes = tuple(range(x.ndim - 1))
        gamma, beta = self.params["gamma"], self.params["beta"]
        if mode == "train":
            m = x.size // x.shape[-1]
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            # a single value per channel leaves the running stats untouched
            if m > 1:
                unbiased = var * (m / (m - 1))
                rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
                rm[...] = (1 - BATCHNORM_MOMENTUM) * rm + BATCHNORM_MOMENTUM * mean
                rv[...] = (1 - BATCHNORM_MOMENTUM) * rv + BATCHNORM_MOMENTUM * unbiased
        else:
            m = None
            mean = self.buffers["running_mean"].astype(x.dtype)
            var = self.buffers["running_var"].astype(x.dtype)
        inv_std = 1.0 / np.sqrt(var + BATCHNORM_EPS)
        xhat = (x - mean) * inv_std
        return gamma * xhat + beta, {"xhat": xhat, "inv_std": inv_std, "m": m, "mode": mode}

    def backward(self, cache, grad_out):
        xhat, inv_std, m = cache["xhat"], cache["inv_std"], cache["m"]
        axes = tuple(range(grad_out.ndim - 1))
        grads = {"gamma": (grad_out * xhat).sum(axis=axes), "beta": grad_out.sum(axis=axes)}
        dxhat = grad_out * self.params["gamma"]
        if cache["mode"] == "eval":
            return dxhat * inv_std, grads
        # Batch statistics are part of the function in train mode
        dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, grads


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-p); eval mode is identity."""

    def forward(self, x, mode, rng):
        self.check_input(x)
        p = self.spec.p
        if mode == "eval" or p == 0.0:
            return x, {"mask": None}
        if rng is None:
            raise NNError("dropout in train mode needs an rng")
        mask = (rng.random(x.shape) >= p).astype(x.dtype) * (1.0 / (1.0 - p))
        return x * mask, {"mask": mask}

    def backward(self, cache, grad_out):
        mask = cache["mask"]
        return (grad_out if mask is None else grad_out * mask), {}


class ReLU(Layer):
    def forward(self, x, mode, rng):
        self.check_input(x)
        active = x > 0
        return np.where(active, x, 0).astype(x.dtype), {"active": active}

    def backward(self, cache, grad_out):
        # derivative at exactly 0 is taken as 0
        return np.where(cache["active"], grad_out, 0).astype(grad_out.dtype), {}


class MaxPool2(Layer):
    def _infer(self, shape):
        if len(shape) != 3 or shape[0] % 2 or shape[1] % 2:
            raise ShapeError(f"maxpool2 expects (H, W, C) with even H, W; previous layer gives {shape}")
        return (shape[0] // 2, shape[1] // 2, shape[2])

    def forward(self, x, mode, rng):
        self.check_input(x)
        n, h, w, c = x.shape
        windows = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
        idx = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return out, {"idx": idx, "shape": x.shape}

    def backward(self, cache, grad_out):
        n, h, w, c = cache["shape"]
        dwindows = np.zeros((n, h // 2, w // 2, c, 4), dtype=grad_out.dtype)
        np.put_along_axis(dwindows, cache["idx"][..., None], grad_out[..., None], axis=-1)
        dx = dwindows.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        return dx, {}


class GlobalAvgPool(Layer):
    def _infer(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"global_avg_pool expects (H, W, C), previous layer gives {shape}")
        return (shape[2],)

    def forward(self, x, mode, rng):
        self.check_input(x)
        return x.mean(axis=(1, 2)), {"shape": x.shape}

    def backward(self, cache, grad_out):
        n, h, w, c = cache["shape"]
        scale = 1.0 / (h * w)
        dx = np.broadcast_to(grad_out[:, None, None, :] * scale, (n, h, w, c))
        return np.ascontiguousarray(dx, dtype=grad_out.dtype), {}


class Patchify(Layer):
    """Flattens an image into patch-major order: (N, H, W, C) -> (N, H*W*C)."""

    def _infer(self, shape):
        p = self.spec.patch
        if len(shape) != 3 or shape[0] % p or shape[1] % p:
            raise ShapeError(f"patchify({p}) expects (H, W, C) divisible by {p}; previous layer gives {shape}")
        return (shape[0] * shape[1] * shape[2],)

    def forward(self, x, mode, rng):
        self.check_input(x)
        n, h, w, c = x.shape
        p = self.spec.patch
        out = x.reshape(n, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, -1)
        return out, {"shape": x.shape}

    def backward(self, cache, grad_out):
        n, h, w, c = cache["shape"]
        p = self.spec.patch
        dx = grad_out.reshape(n, h // p, w // p, p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h, w, c)
        return dx, {}


LAYER_TYPES: dict[str, type[Layer]] = {
    "dense": Dense,
    "conv3x3": Conv,
    "conv5x5": Conv,
    "batchnorm": BatchNorm,
    "dropout": Dropout,
    "relu": ReLU,
    "maxpool2": MaxPool2,
    "global_avg_pool": GlobalAvgPool,
    "patchify": Patchify,
}


def make_layer(spec: LayerSpec) -> Layer:
    return LAYER_TYPES[spec.kind](spec)


def layer_forward(
    layer: Layer, x: np.ndarray, mode: Mode = "train", rng: np.random.Generator | None = None
) -> tuple[np.ndarray, Cache]:
    """Run one layer forward, returning its output and the cache for backward."""
    out, cache = layer.forward(x, mode, rng)
    cache["out_shape"] = tuple(out.shape)
    return out, cache


def layer_backward(layer: Layer, cache: Cache, grad_out: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Exact gradient of one layer's forward map, given the cache of that call."""
    expected = cache.get("out_shape")
    if expected is not None and tuple(grad_out.shape) != expected:
        raise ShapeError(f"{layer.kind} backward got grad {grad_out.shape}, forward produced {expected}")
    return layer.backward(cache, grad_out)


class Model:
    """Sequential network. Parameter names look like '3.dense.W'."""

    def __init__(self, name: str, layers: list[Layer], input_shape: tuple[int, ...]) -> None:
        self.name = name
        self.layers = layers
        self.input_shape = tuple(input_shape)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.layers[-1].output_shape if self.layers else self.input_shape

    def _named(self, attr: str) -> dict[str, np.ndarray]:
        named: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            for key, value in getattr(layer, attr).items():
                named[f"{i}.{layer.kind}.{key}"] = value
        return named

    def parameters(self) -> dict[str, np.ndarray]:
        """Ordered name -> array mapping; arrays are the live parameter storage."""
        return self._named("params")

    def buffers(self) -> dict[str, np.ndarray]:
        return self._named("buffers")

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def macs(self) -> int:
        return int(sum(layer.macs() for layer in self.layers))

    def forward(
        self, x: np.ndarray, mode: Mode = "train", rng: np.random.Generator | None = None
    ) -> tuple[np.ndarray, list[Cache]]:
        caches = []
        for layer in self.layers:
            x, cache = layer_forward(layer, x, mode, rng)
            caches.append(cache)
        return x, caches

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, mode="eval")[0]

    def backward(self, caches: list[Cache], grad_out: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        if len(caches) != len(self.layers):
            raise ShapeError(f"expected {len(self.layers)} caches, got {len(caches)}")
        grads: dict[str, np.ndarray] = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            grad_out, layer_grads = layer_backward(layer, caches[i], grad_out)
            for key, value in layer_grads.items():
                grads[f"{i}.{layer.kind}.{key}"] = value
        return grad_out, grads

    def load_arrays(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray] | None = None) -> None:
        """Copy stored arrays into this model, checking names and shapes."""
        for target, source in ((self.parameters(), params), (self.buffers(), buffers or {})):
            missing = set(target) - set(source)
            if missing:
                raise ShapeError(f"missing arrays for {sorted(missing)}")
            for name, array in target.items():
                value = np.asarray(source[name])
                if value.shape != array.shape:
                    raise ShapeError(f"{name}: stored shape {value.shape} != model shape {array.shape}")
                array[...] = value

    def param_hash(self) -> str:
        """SHA-256 over names, shapes and bytes of all parameters and buffers."""
        return tensor_hash(self.parameters(), self.buffers())

    def astype(self, dtype: np.dtype | type) -> "Model":
        """Deep copy with every parameter and buffer cast to dtype."""
        clone = copy.deepcopy(self)
        for layer in clone.layers:
            layer.params = {k: v.astype(dtype) for k, v in layer.params.items()}
            layer.buffers = {k: v.astype(dtype) for k, v in layer.buffers.items()}
        return clone

    def copy(self) -> "Model":
        return copy.deepcopy(self)


def build_model(
    name: str, layer_specs: list[LayerSpec], input_shape: tuple[int, ...], seed: int | None = None
) -> Model:
    """
    Bind layer shapes in order and initialize parameters.

    With seed=None parameters stay uninitialized (shape inference only).

    Raises:
        ShapeError: If consecutive layers disagree on shape.
    """
    layers = []
    shape = tuple(input_shape)
    for i, spec in enumerate(layer_specs):
        layer = make_layer(spec)
        try:
            shape = layer.bind(shape)
        except ShapeError as e:
            raise ShapeError(f"layer {i} ({spec.kind}): {e}") from e
        layers.append(layer)
    if seed is not None:
        rng = np.random.default_rng(seed)
        for layer in layers:
            layer.init_params(rng)
    return Model(name, layers, input_shape)


def build_backbone(spec: BackboneSpec, seed: int) -> Model:
    """Seeded He-uniform initialization of a backbone; output is (N, embedding_dim)."""
    input_shape = (spec.image_size, spec.image_size, spec.in_channels)
    model = build_model(spec.name, spec.layers, input_shape, seed)
    if model.output_shape != (spec.embedding_dim,):
        raise ShapeError(f"{spec.name} outputs {model.output_shape}, expected ({spec.embedding_dim},)")
    logger.debug("backbone_built", name=spec.name, params=model.num_parameters(), seed=seed)
    return model


def build_head(spec: ClassifierHeadSpec, embedding_dim: int, seed: int) -> Model:
    return build_model("classifier-head", spec.layers(embedding_dim), (embedding_dim,), seed)


def estimate_macs(spec: BackboneSpec) -> int:
    """Multiply-accumulates per sample for one forward pass."""
    input_shape = (spec.image_size, spec.image_size, spec.in_channels)
    return build_model(spec.name, spec.layers, input_shape).macs()
