from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator

from tensor_core import (
    DTYPE,
    DimensionError,
    Shape4,
    Tensor,
    concat_channels,
    conv2d,
    conv2d_backward,
    matmul,
    maxpool2d,
    maxpool2d_backward,
    reduce_mean_var,
)

BN_MOMENTUM = 0.1
NORM_EPS = 1e-5
EQUAL_GRAY_WEIGHTS = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
CHANNEL_AXES = (0, 2, 3)


@dataclass
class LayerState:
    params: dict[str, Tensor] = field(default_factory=dict)
    grads: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, Tensor] = field(default_factory=dict)
    cache: dict[str, Any] = field(default_factory=dict)


class CustomDropoutConfig(BaseModel):
    prob: float = Field(0.5, ge=0.0, le=1.0)
    gray_weights: tuple[float, float, float] = EQUAL_GRAY_WEIGHTS
    per_sample: bool = False

    @field_validator("gray_weights")
    @classmethod
    def _weights_are_convex(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(w < 0 for w in value):
            raise ValueError(f"gray_weights must be non-negative, got {value}")
        if abs(sum(value) - 1.0) > 1e-6:
            raise ValueError(f"gray_weights must sum to 1, got {sum(value)}")
        return value


# ---------------------------------------------------------------------------
# Functional kernels


def dense_forward(x: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, dict]:
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"Dense input {x.shape} does not match weight {weight.shape}.")
    out = matmul(x, weight) + bias
    return out, {"x": x, "weight": weight}


def dense_backward(grad_out: Tensor, cache: dict) -> tuple[Tensor, dict[str, Tensor]]:
    x, weight = cache["x"], cache["weight"]
    grad_x = grad_out @ weight.T
    return grad_x, {"weight": x.T @ grad_out, "bias": grad_out.sum(axis=0)}


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(grad_out: Tensor, x: Tensor) -> Tensor:
    return grad_out * (x > 0)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> tuple[float, Tensor, Tensor]:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Returns (loss, probs, grad_logits) with grad_logits = (probs - onehot) / n.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"Expected {n} labels, got shape {labels.shape}.")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"Labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}].")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    grad = probs.copy()
    grad[rows, labels] -= 1
    return loss, probs, grad / n


def _affine(x_hat: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    return gamma[None, :, None, None] * x_hat + beta[None, :, None, None]


def _normalize(
    x: Tensor,
    state: LayerState,
    mean: Tensor,
    var: Tensor,
    eps: float,
    axes: tuple[int, ...] | None,
) -> tuple[Tensor, dict]:
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    out = _affine(x_hat, state.params["gamma"], state.params["beta"])
    return out, {"x_hat": x_hat, "inv_std": inv_std, "axes": axes, "gamma": state.params["gamma"]}


def normalization_backward(grad_out: Tensor, cache: dict) -> tuple[Tensor, dict[str, Tensor]]:
    """Backward pass shared by batch, layer and instance normalization.

    `axes` is None when fixed (running) statistics were used, in which case
    the statistics are constants and only the scale path carries gradient.
    """
    x_hat, inv_std, axes, gamma = cache["x_hat"], cache["inv_std"], cache["axes"], cache["gamma"]
    grads = {
        "gamma": (grad_out * x_hat).sum(axis=CHANNEL_AXES),
        "beta": grad_out.sum(axis=CHANNEL_AXES),
    }
    grad_hat = grad_out * gamma[None, :, None, None]
    if axes is None:
        return grad_hat * inv_std, grads
    grad_x = inv_std * (
        grad_hat
        - grad_hat.mean(axis=axes, keepdims=True)
        - x_hat * (grad_hat * x_hat).mean(axis=axes, keepdims=True)
    )
    return grad_x, grads


def batch_norm(
    x: Tensor,
    state: LayerState,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = NORM_EPS,
) -> tuple[Tensor, dict]:
    n, c, h, w = Shape4.of(x)
    if not training:
        mean = state.buffers["running_mean"][None, :, None, None]
        var = state.buffers["running_var"][None, :, None, None]
        return _normalize(x, state, mean, var, eps, axes=None)
    if n * h * w < 2:
        raise DimensionError(f"Batch norm in training mode needs n*h*w >= 2 per channel, got {x.shape}.")
    mean, var = reduce_mean_var(x, CHANNEL_AXES, eps)
    out, cache = _normalize(x, state, mean, var, eps, CHANNEL_AXES)
    for key, stat in (("running_mean", mean), ("running_var", var)):
        running = state.buffers[key]
        state.buffers[key] = ((1 - momentum) * running + momentum * stat.reshape(c)).astype(running.dtype)
    return out, cache


def layer_norm(x: Tensor, state: LayerState, eps: float = NORM_EPS) -> tuple[Tensor, dict]:
    _, c, h, w = Shape4.of(x)
    if c * h * w < 2:
        raise DimensionError(f"Layer norm needs c*h*w >= 2, got {x.shape}.")
    mean, var = reduce_mean_var(x, (1, 2, 3), eps)
    return _normalize(x, state, mean, var, eps, (1, 2, 3))


def instance_norm(x: Tensor, state: LayerState, eps: float = NORM_EPS) -> tuple[Tensor, dict]:
    _, _, h, w = Shape4.of(x)
    if h * w < 2:
        raise DimensionError(f"Instance norm needs h*w >= 2, got {x.shape}.")
    mean, var = reduce_mean_var(x, (2, 3), eps)
    return _normalize(x, state, mean, var, eps, (2, 3))


def grayscale_concat(x: Tensor, gray_weights: Sequence[float] = EQUAL_GRAY_WEIGHTS) -> Tensor:
    if Shape4.of(x).c != 3:
        raise DimensionError(f"Grayscale concat needs exactly 3 channels, got {x.shape}.")
    weights = np.asarray(gray_weights, dtype=x.dtype)
    gray = np.tensordot(weights, x, axes=([0], [1]))[:, None]
    return concat_channels(x, gray)


def grayscale_concat_backward(grad_out: Tensor, gray_weights: Sequence[float]) -> Tensor:
    weights = np.asarray(gray_weights, dtype=grad_out.dtype)
    return grad_out[:, :3] + weights[None, :, None, None] * grad_out[:, 3:4]


def custom_channel_dropout(
    x: Tensor,
    prob: float,
    training: bool,
    rng: np.random.Generator,
    per_sample: bool = False,
) -> tuple[Tensor, Tensor]:
    """Zero the three colour channels, keeping the appended gray channel.

    In training one uniform draw decides for the whole batch (or one per
    sample with `per_sample`); the mask applies when the draw is below
    `prob`. Evaluation passes inputs through unchanged. Returns the output
    and the [n or 1, 4, 1, 1] mask that backward multiplies by.
    """
    n = Shape4.of(x).n
    if x.shape[1] != 4:
        raise DimensionError(f"Channel dropout needs 4 channels (RGB + gray), got {x.shape}.")
    draws = 1 if not per_sample else n
    mask = np.ones((draws, 4, 1, 1), dtype=x.dtype)
    if training:
        rand_prob = rng.uniform(size=draws)
        mask[rand_prob < prob, :3] = 0
    return x * mask, mask


# ---------------------------------------------------------------------------
# Layer objects


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(DTYPE)


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.state = LayerState()

    def forward(self, x: Tensor, training: bool) -> Tensor:
        raise NotImplementedError

    def backward(self, grad_out: Tensor) -> Tensor:
        raise NotImplementedError

    def __repr__(self) -> str:
        shapes = {k: tuple(v.shape) for k, v in self.state.params.items()}
        return f"{type(self).__name__}({self.name!r}, {shapes})"


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, name: str, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__(name)
        fan_in = in_channels * 9
        self.state.params["weight"] = he_normal(rng, (out_channels, in_channels, 3, 3), fan_in)
        self.state.params["bias"] = np.zeros(out_channels, dtype=DTYPE)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        self.state.cache["x"] = x
        return conv2d(x, self.state.params["weight"], self.state.params["bias"])

    def backward(self, grad_out: Tensor) -> Tensor:
        grad_x, grad_w, grad_b = conv2d_backward(
            grad_out, self.state.cache["x"], self.state.params["weight"]
        )
        self.state.grads = {"weight": grad_w, "bias": grad_b}
        return grad_x


class Dense(Layer):
    kind = "dense"

    def __init__(self, name: str, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__(name)
        self.state.params["weight"] = he_normal(rng, (in_features, out_features), in_features)
        self.state.params["bias"] = np.zeros(out_features, dtype=DTYPE)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        out, self.state.cache = dense_forward(x, self.state.params["weight"], self.state.params["bias"])
        return out

    def backward(self, grad_out: Tensor) -> Tensor:
        grad_x, self.state.grads = dense_backward(grad_out, self.state.cache)
        return grad_x


class ReLU(Layer):
    kind = "relu"

    def forward(self, x: Tensor, training: bool) -> Tensor:
        self.state.cache["x"] = x
        return relu(x)

    def backward(self, grad_out: Tensor) -> Tensor:
        return relu_backward(grad_out, self.state.cache["x"])


class MaxPool2D(Layer):
    kind = "maxpool"

    def forward(self, x: Tensor, training: bool) -> Tensor:
        out, argmax = maxpool2d(x)
        self.state.cache = {"argmax": argmax, "shape": x.shape}
        return out

    def backward(self, grad_out: Tensor) -> Tensor:
        return maxpool2d_backward(grad_out, self.state.cache["argmax"], self.state.cache["shape"])


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x: Tensor, training: bool) -> Tensor:
        self.state.cache["shape"] = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: Tensor) -> Tensor:
        return grad_out.reshape(self.state.cache["shape"])


class _Norm2D(Layer):
    def __init__(self, name: str, channels: int, eps: float = NORM_EPS):
        super().__init__(name)
        self.eps = eps
        self.state.params["gamma"] = np.ones(channels, dtype=DTYPE)
        self.state.params["beta"] = np.zeros(channels, dtype=DTYPE)

    def backward(self, grad_out: Tensor) -> Tensor:
        grad_x, self.state.grads = normalization_backward(grad_out, self.state.cache)
        return grad_x


class BatchNorm2D(_Norm2D):
    kind = "batch"

    def __init__(self, name: str, channels: int, momentum: float = BN_MOMENTUM, eps: float = NORM_EPS):
        super().__init__(name, channels, eps)
        self.momentum = momentum
        self.state.buffers["running_mean"] = np.zeros(channels, dtype=DTYPE)
        self.state.buffers["running_var"] = np.ones(channels, dtype=DTYPE)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        out, self.state.cache = batch_norm(x, self.state, training, self.momentum, self.eps)
        return out


class LayerNorm2D(_Norm2D):
    kind = "layer"

    def forward(self, x: Tensor, training: bool) -> Tensor:
        out, self.state.cache = layer_norm(x, self.state, self.eps)
        return out


class InstanceNorm2D(_Norm2D):
    kind = "instance"

    def forward(self, x: Tensor, training: bool) -> Tensor:
        out, self.state.cache = instance_norm(x, self.state, self.eps)
        return out


NORM_LAYERS: dict[str, type[_Norm2D]] = {
    "batch": BatchNorm2D,
    "layer": LayerNorm2D,
    "instance": InstanceNorm2D,
}


class GrayscaleConcat(Layer):
    kind = "grayscale"

    def __init__(self, name: str, gray_weights: Sequence[float] = EQUAL_GRAY_WEIGHTS):
        super().__init__(name)
        self.gray_weights = tuple(gray_weights)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return grayscale_concat(x, self.gray_weights)

    def backward(self, grad_out: Tensor) -> Tensor:
        return grayscale_concat_backward(grad_out, self.gray_weights)


class ChannelDropout(Layer):
    kind = "channel_dropout"

    def __init__(self, name: str, prob: float, rng: np.random.Generator, per_sample: bool = False):
        super().__init__(name)
        self.prob = prob
        self.rng = rng
        self.per_sample = per_sample

    def forward(self, x: Tensor, training: bool) -> Tensor:
        out, mask = custom_channel_dropout(x, self.prob, training, self.rng, self.per_sample)
        self.state.cache["mask"] = mask
        return out

    def backward(self, grad_out: Tensor) -> Tensor:
        return grad_out * self.state.cache["mask"]
