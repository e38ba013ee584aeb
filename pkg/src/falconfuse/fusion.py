"""Concatenated dual-backbone classifier.

Both branches see the same preprocessed 128×128 input; their pooled
feature vectors are concatenated and fed through dropout and a single
dense layer into a 3-way softmax. Single-branch variants (used by the
model comparison) reuse the same head machinery on one feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import ops
from .convnext import ConvNeXtConfig, convnext_forward, he_uniform, init_convnext_params
from .efficientnet import (
    EfficientNetConfig,
    efficientnet_forward,
    init_efficientnet_params,
)
from .errors import ConfigError, ShapeError
from .tensor import Parameter, Tensor, no_grad

INPUT_SIZE = 128
IN_CHANNELS = 3
BRANCH_CHOICES = ("ab", "a", "b")


def dropout_rng(seed: int, epoch: int, step: int) -> np.random.Generator:
    """Counter-based stream so dropout masks depend only on (seed, epoch, step)."""
    bitgen = np.random.Philox(counter=[step, epoch, 0, 0], key=[seed & (2**64 - 1), 0xD7])
    return np.random.Generator(bitgen)


@dataclass
class ModelConfig:
    convnext: ConvNeXtConfig = field(default_factory=ConvNeXtConfig)
    efficientnet: EfficientNetConfig = field(default_factory=EfficientNetConfig)
    num_classes: int = 3
    dropout_rate: float = 0.2
    seed: int = 0
    branches: str = "ab"  # "ab" concatenated, "a"/"b" single-branch variants

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be positive, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(
                f"dropout_rate must lie in [0, 1), got {self.dropout_rate}"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned int, got {self.seed}")
        if self.branches not in BRANCH_CHOICES:
            raise ConfigError(
                f"branches must be one of {BRANCH_CHOICES}, got {self.branches!r}"
            )
        self.convnext.validate()
        self.efficientnet.validate()

    @property
    def fused_dim(self) -> int:
        dim = 0
        if "a" in self.branches:
            dim += self.convnext.feature_dim
        if "b" in self.branches:
            dim += self.efficientnet.feature_dim
        return dim


class FusionModel:
    """Parameter collection plus mode; forward logic lives in the branches."""

    def __init__(
        self,
        config: ModelConfig,
        params: Dict[str, Parameter],
        buffers: Dict[str, np.ndarray],
    ):
        self.config = config
        self.params = params
        self.buffers = buffers
        self.mode = "train"
        self.epoch = 0
        self.step = 0

    def train(self) -> "FusionModel":
        self.mode = "train"
        return self

    def eval(self) -> "FusionModel":
        self.mode = "eval"
        return self

    @property
    def training(self) -> bool:
        return self.mode == "train"

    def set_rng_context(self, epoch: int, step: int) -> None:
        """Position the dropout stream; called by the training loop."""
        self.epoch = epoch
        self.step = step

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.tensor.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def forward(self, batch: Tensor) -> Tuple[Tensor, Tensor]:
        """Run both branches and the head; returns (logits, probs).

        Dropout is active only in training mode, drawn from the
        (seed, epoch, step) stream.
        """
        cfg = self.config
        if batch.data.ndim != 4 or batch.shape[1:] != (IN_CHANNELS, INPUT_SIZE, INPUT_SIZE):
            raise ShapeError(
                f"expected batch of shape N×{IN_CHANNELS}×{INPUT_SIZE}×{INPUT_SIZE}, "
                f"got {batch.shape}"
            )
        feats = []
        if "a" in cfg.branches:
            feats.append(convnext_forward(batch, cfg.convnext, self.params, "branch_a"))
        if "b" in cfg.branches:
            feats.append(
                efficientnet_forward(
                    batch, cfg.efficientnet, self.params, self.buffers,
                    "branch_b", self.training,
                )
            )
        fused = feats[0] if len(feats) == 1 else ops.concat_features(feats[0], feats[1])
        if self.training and cfg.dropout_rate > 0.0:
            fused = ops.dropout(
                fused, cfg.dropout_rate, dropout_rng(cfg.seed, self.epoch, self.step)
            )
        logits = ops.dense(
            fused,
            self.params["head.dense.weight"].tensor,
            self.params["head.dense.bias"].tensor,
        )
        probs = Tensor(ops.softmax(logits.data))
        return logits, probs

    def predict(self, image: Tensor, class_names: Optional[List[str]] = None):
        """Classify a single 3×128×128 image.

        Returns (class_name, confidence, probabilities); ties resolve to
        the lowest class index (argmax of the first maximum).
        """
        if class_names is None:
            from .data import CLASS_NAMES

            class_names = list(CLASS_NAMES)
        if len(class_names) != self.config.num_classes:
            raise ConfigError(
                f"class table has {len(class_names)} names for "
                f"{self.config.num_classes} classes"
            )
        if image.data.ndim != 3:
            raise ShapeError(f"predict expects a single 3-D image, got {image.shape}")
        if self.training:
            raise ConfigError("predict requires eval mode")
        batch = Tensor(image.data[None])
        with no_grad():
            _, probs = self.forward(batch)
        row = probs.data[0]
        idx = int(np.argmax(row))
        return class_names[idx], float(row[idx]), [float(v) for v in row]


def build_model(config: ModelConfig, dtype=np.float32) -> FusionModel:
    """Construct and initialize a model deterministically from config.seed.

    He-uniform conv/dense weights, zero biases, unit/zero norm affines,
    layer scales at their configured init value.
    """
    config.validate()
    rng = np.random.Generator(np.random.Philox(key=int(config.seed) & (2**64 - 1)))
    params: Dict[str, Parameter] = {}
    buffers: Dict[str, np.ndarray] = {}
    if "a" in config.branches:
        params.update(init_convnext_params(config.convnext, rng, "branch_a", IN_CHANNELS, dtype))
    if "b" in config.branches:
        p, b = init_efficientnet_params(config.efficientnet, rng, "branch_b", IN_CHANNELS, dtype)
        params.update(p)
        buffers.update(b)
    d = config.fused_dim
    params["head.dense.weight"] = Parameter(
        "head.dense.weight", Tensor(he_uniform(rng, (d, config.num_classes), d, dtype))
    )
    params["head.dense.bias"] = Parameter(
        "head.dense.bias", Tensor(np.zeros(config.num_classes, dtype=dtype))
    )
    return FusionModel(config, params, buffers)
