from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator

from layers import (
    NORM_LAYERS,
    ChannelDropout,
    Conv2D,
    CustomDropoutConfig,
    Dense,
    Flatten,
    GrayscaleConcat,
    Layer,
    MaxPool2D,
    ReLU,
)
from tensor_core import Tensor

IMAGE_SIZE = 32
POOLS = 3

NormKind = Literal["batch", "layer", "instance", "none"]
InputStage = Literal["plain3", "gray4"]

NORM_PREFIX = {"batch": "batch_norm", "layer": "layer_norm", "instance": "instance_norm"}


class ModelConfig(BaseModel):
    conv_widths: tuple[int, int, int] = (32, 64, 128)
    dense_widths: tuple[int, int] = (512, 256)
    classes: Literal[10] = 10
    norm: NormKind = "batch"
    input_stage: InputStage = "plain3"
    dropout: CustomDropoutConfig = Field(default_factory=CustomDropoutConfig)
    seed: int = Field(0, ge=0)

    @field_validator("conv_widths", "dense_widths")
    @classmethod
    def _positive(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if any(w <= 0 for w in value):
            raise ValueError(f"Layer widths must be positive, got {value}")
        return value

    @property
    def in_channels(self) -> int:
        return 4 if self.input_stage == "gray4" else 3


class Model:
    def __init__(self, config: ModelConfig, layers: list[Layer]):
        self.config = config
        self.layers = layers

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad_logits: Tensor) -> Tensor:
        grad = grad_logits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict_proba(self, x: Tensor) -> Tensor:
        logits = self.forward(x, training=False)
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)

    def named_parameters(self) -> dict[str, Tensor]:
        return {
            f"{layer.name}.{key}": value
            for layer in self.layers
            for key, value in layer.state.params.items()
        }

    def named_gradients(self) -> dict[str, Tensor]:
        return {
            f"{layer.name}.{key}": value
            for layer in self.layers
            for key, value in layer.state.grads.items()
        }

    def named_buffers(self) -> dict[str, Tensor]:
        return {
            f"{layer.name}.{key}": value
            for layer in self.layers
            for key, value in layer.state.buffers.items()
        }

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.named_parameters().values()))

    def state_dict(self) -> dict[str, Tensor]:
        state = {**self.named_parameters(), **self.named_buffers()}
        return {name: value.copy() for name, value in state.items()}

    def load_state(self, state: dict[str, Tensor]) -> None:
        expected = {**self.named_parameters(), **self.named_buffers()}
        missing = sorted(set(expected) - set(state))
        if missing:
            raise KeyError(f"State is missing tensors: {', '.join(missing)}")
        for layer in self.layers:
            for store in (layer.state.params, layer.state.buffers):
                for key, current in store.items():
                    value = np.asarray(state[f"{layer.name}.{key}"])
                    if value.shape != current.shape:
                        raise ValueError(
                            f"Shape mismatch for {layer.name}.{key}: {value.shape} vs {current.shape}"
                        )
                    store[key] = value.astype(current.dtype, copy=True)


def build_model(config: ModelConfig) -> Model:
    """[input stage] -> (conv, norm, relu, pool) x3 -> dense, relu x2 -> decision."""
    init_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(init_seq)
    layers: list[Layer] = []

    if config.input_stage == "gray4":
        layers.append(GrayscaleConcat("grayscale", config.dropout.gray_weights))
        layers.append(
            ChannelDropout(
                "channel_dropout",
                config.dropout.prob,
                np.random.default_rng(dropout_seq),
                per_sample=config.dropout.per_sample,
            )
        )

    in_channels = config.in_channels
    for i, width in enumerate(config.conv_widths, start=1):
        layers.append(Conv2D(f"conv{i}", in_channels, width, rng))
        if config.norm != "none":
            layers.append(NORM_LAYERS[config.norm](f"{NORM_PREFIX[config.norm]}{i}", width))
        layers.append(ReLU(f"relu{i}"))
        layers.append(MaxPool2D(f"pool{i}"))
        in_channels = width

    side = IMAGE_SIZE // 2**POOLS
    in_features = in_channels * side * side
    layers.append(Flatten("flatten"))
    for i, width in enumerate(config.dense_widths, start=1):
        layers.append(Dense(f"dense{i}", in_features, width, rng))
        layers.append(ReLU(f"relu{len(config.conv_widths) + i}"))
        in_features = width
    layers.append(Dense("decision", in_features, config.classes, rng))
    return Model(config, layers)
