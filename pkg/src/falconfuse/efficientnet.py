"""EfficientNet-style feature extractor branch.

Conv stem, a sequence of MBConv blocks (pointwise expand → depthwise
conv → squeeze-and-excitation → pointwise project, batch norm after
every conv, Swish activations, residual when shape-preserving), then a
pointwise head conv and global average pool. Depth/width compound
scaling follows the canonical repeat-ceil and multiple-of-8 width
rounding rules; input resolution is pinned by the data pipeline, so no
resolution coefficient is exposed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from . import ops
from .convnext import he_uniform
from .errors import ConfigError
from .tensor import Parameter, Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-3


@dataclass
class MBConvSpec:
    expansion: int
    kernel: int
    stride: int
    in_ch: int
    out_ch: int
    se_ratio: float = 0.25
    repeats: int = 1

    def validate(self) -> None:
        if self.expansion < 1:
            raise ConfigError(f"expansion must be >= 1, got {self.expansion}")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ConfigError(f"kernel must be odd and positive, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.in_ch < 1 or self.out_ch < 1:
            raise ConfigError("channel counts must be positive")
        if not 0.0 < self.se_ratio <= 1.0:
            raise ConfigError(f"se_ratio must be in (0, 1], got {self.se_ratio}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be positive, got {self.repeats}")

    @property
    def has_residual(self) -> bool:
        return self.stride == 1 and self.in_ch == self.out_ch

    @property
    def squeeze_width(self) -> int:
        return max(1, int(self.in_ch * self.se_ratio))


def _default_base_blocks() -> Tuple[MBConvSpec, ...]:
    return (
        MBConvSpec(expansion=1, kernel=3, stride=1, in_ch=16, out_ch=16, repeats=1),
        MBConvSpec(expansion=6, kernel=3, stride=2, in_ch=16, out_ch=24, repeats=2),
        MBConvSpec(expansion=6, kernel=5, stride=2, in_ch=24, out_ch=40, repeats=2),
    )


@dataclass
class EfficientNetConfig:
    base_blocks: Tuple[MBConvSpec, ...] = field(default_factory=_default_base_blocks)
    stem_width: int = 16
    head_width: int = 128
    depth_coeff: float = 1.0
    width_coeff: float = 1.0

    def __post_init__(self):
        self.base_blocks = tuple(
            b if isinstance(b, MBConvSpec) else MBConvSpec(**b) for b in self.base_blocks
        )

    def validate(self) -> None:
        if self.stem_width < 1 or self.head_width < 1:
            raise ConfigError("stem_width and head_width must be positive")
        if self.depth_coeff < 1.0 or self.width_coeff < 1.0:
            raise ConfigError(
                f"scaling coefficients must be >= 1, got depth={self.depth_coeff}, "
                f"width={self.width_coeff}"
            )
        if not self.base_blocks:
            raise ConfigError("base_blocks must be nonempty")
        for b in self.base_blocks:
            b.validate()

    @property
    def feature_dim(self) -> int:
        return self.head_width


def round_width(width: int, coeff: float) -> int:
    """Scale a channel count: nearest multiple of 8 (ties up), never below
    8, bumped one step if rounding fell below 90% of the scaled value."""
    v = width * coeff
    rounded = max(8, int(v + 4) // 8 * 8)
    if rounded < 0.9 * v:
        rounded += 8
    return rounded


def round_repeats(repeats: int, coeff: float) -> int:
    return int(math.ceil(coeff * repeats))


def compound_scale(config: EfficientNetConfig) -> List[MBConvSpec]:
    """Resolve the base block list under the depth/width coefficients.

    Identity for coefficients of 1. Stage input channels are re-chained
    after width scaling so consecutive stages stay compatible.
    """
    config.validate()
    if config.depth_coeff == 1.0 and config.width_coeff == 1.0:
        return [replace(b) for b in config.base_blocks]
    resolved = []
    in_ch = round_width(config.base_blocks[0].in_ch, config.width_coeff)
    for b in config.base_blocks:
        out_ch = round_width(b.out_ch, config.width_coeff)
        resolved.append(
            replace(
                b,
                in_ch=in_ch,
                out_ch=out_ch,
                repeats=round_repeats(b.repeats, config.depth_coeff),
            )
        )
        in_ch = out_ch
    return resolved


def scaled_stem_width(config: EfficientNetConfig) -> int:
    if config.width_coeff == 1.0:
        return config.stem_width
    return round_width(config.stem_width, config.width_coeff)


def expand_block_list(config: EfficientNetConfig) -> List[MBConvSpec]:
    """Per-repeat block instances: only the first repeat of a stage
    strides and changes channels."""
    blocks: List[MBConvSpec] = []
    for spec in compound_scale(config):
        for i in range(spec.repeats):
            if i == 0:
                blocks.append(replace(spec, repeats=1))
            else:
                blocks.append(
                    replace(spec, in_ch=spec.out_ch, stride=1, repeats=1)
                )
    return blocks


def _bn_param(params, buffers, name, c, dtype):
    params[f"{name}.gamma"] = Parameter(f"{name}.gamma", Tensor(np.ones(c, dtype=dtype)))
    params[f"{name}.beta"] = Parameter(f"{name}.beta", Tensor(np.zeros(c, dtype=dtype)))
    buffers[f"{name}.running_mean"] = np.zeros(c, dtype=dtype)
    buffers[f"{name}.running_var"] = np.ones(c, dtype=dtype)


def init_efficientnet_params(
    config: EfficientNetConfig,
    rng: np.random.Generator,
    prefix: str,
    in_channels: int = 3,
    dtype=np.float32,
) -> Tuple[Dict[str, Parameter], Dict[str, np.ndarray]]:
    """Build parameters and batch-norm running buffers, seed-deterministic.

    Convs followed by batch norm carry no bias; the SE gate uses biased
    dense layers.
    """
    config.validate()
    params: Dict[str, Parameter] = {}
    buffers: Dict[str, np.ndarray] = {}
    stem = scaled_stem_width(config)

    def conv(name, o, c, k):
        params[f"{name}.weight"] = Parameter(
            f"{name}.weight", Tensor(he_uniform(rng, (o, c, k, k), c * k * k, dtype))
        )

    def dense_p(name, fan_in, fan_out):
        params[f"{name}.weight"] = Parameter(
            f"{name}.weight", Tensor(he_uniform(rng, (fan_in, fan_out), fan_in, dtype))
        )
        params[f"{name}.bias"] = Parameter(
            f"{name}.bias", Tensor(np.zeros(fan_out, dtype=dtype))
        )

    conv(f"{prefix}.stem.conv", stem, in_channels, 3)
    _bn_param(params, buffers, f"{prefix}.stem.bn", stem, dtype)

    in_ch = stem
    for bi, spec in enumerate(expand_block_list(config)):
        if spec.in_ch != in_ch:
            raise ConfigError(
                f"block {bi} expects {spec.in_ch} input channels but gets {in_ch}; "
                f"over stem width or stage chaining"
            )
        base = f"{prefix}.block{bi}"
        exp_ch = spec.in_ch * spec.expansion
        if spec.expansion != 1:
            conv(f"{base}.expand", exp_ch, spec.in_ch, 1)
            _bn_param(params, buffers, f"{base}.bn1", exp_ch, dtype)
        conv(f"{base}.dwconv", exp_ch, 1, spec.kernel)
        _bn_param(params, buffers, f"{base}.bn2", exp_ch, dtype)
        dense_p(f"{base}.se.squeeze", exp_ch, spec.squeeze_width)
        dense_p(f"{base}.se.expand", spec.squeeze_width, exp_ch)
        conv(f"{base}.project", spec.out_ch, exp_ch, 1)
        _bn_param(params, buffers, f"{base}.bn3", spec.out_ch, dtype)
        in_ch = spec.out_ch

    conv(f"{prefix}.head.conv", config.head_width, in_ch, 1)
    _bn_param(params, buffers, f"{prefix}.head.bn", config.head_width, dtype)
    return params, buffers


def squeeze_excite(
    x: Tensor,
    squeeze_w: Tensor,
    squeeze_b: Tensor,
    expand_w: Tensor,
    expand_b: Tensor,
) -> Tensor:
    """Channel gate: sigmoid(dense(swish(dense(pooled)))) applied per channel.

    Every gate value lies strictly inside (0, 1).
    """
    pooled = ops.global_avg_pool(x)
    z = ops.silu(ops.dense(pooled, squeeze_w, squeeze_b))
    gate = ops.sigmoid(ops.dense(z, expand_w, expand_b))
    return ops.scale_channels(x, gate)


def _bn(x, params, buffers, name, training):
    return ops.batch_norm(
        x,
        params[f"{name}.gamma"].tensor,
        params[f"{name}.beta"].tensor,
        buffers[f"{name}.running_mean"],
        buffers[f"{name}.running_var"],
        momentum=BN_MOMENTUM,
        eps=BN_EPS,
        training=training,
    )


def mbconv_block(
    x: Tensor,
    spec: MBConvSpec,
    params: Dict[str, Parameter],
    buffers: Dict[str, np.ndarray],
    base: str,
    training: bool,
) -> Tensor:
    """expand → BN → swish → depthwise → BN → swish → SE → project → BN
    (+ residual when stride 1 and channel-preserving)."""
    spec.validate()
    h = x
    if spec.expansion != 1:
        h = ops.conv2d(h, params[f"{base}.expand.weight"].tensor)
        h = ops.silu(_bn(h, params, buffers, f"{base}.bn1", training))
    h = ops.conv2d(
        h,
        params[f"{base}.dwconv.weight"].tensor,
        stride=spec.stride,
        padding=spec.kernel // 2,
        groups=spec.in_ch * spec.expansion,
    )
    h = ops.silu(_bn(h, params, buffers, f"{base}.bn2", training))
    h = squeeze_excite(
        h,
        params[f"{base}.se.squeeze.weight"].tensor,
        params[f"{base}.se.squeeze.bias"].tensor,
        params[f"{base}.se.expand.weight"].tensor,
        params[f"{base}.se.expand.bias"].tensor,
    )
    h = ops.conv2d(h, params[f"{base}.project.weight"].tensor)
    h = _bn(h, params, buffers, f"{base}.bn3", training)
    if spec.has_residual:
        h = ops.add(x, h)
    return h


def efficientnet_forward(
    x: Tensor,
    config: EfficientNetConfig,
    params: Dict[str, Parameter],
    buffers: Dict[str, np.ndarray],
    prefix: str,
    training: bool,
) -> Tensor:
    """Full branch: stem → MBConv sequence → head conv → pool."""
    h = ops.conv2d(x, params[f"{prefix}.stem.conv.weight"].tensor, stride=2, padding=1)
    h = ops.silu(_bn(h, params, buffers, f"{prefix}.stem.bn", training))
    for bi, spec in enumerate(expand_block_list(config)):
        if min(h.shape[2], h.shape[3]) < spec.stride:
            raise ConfigError(
                f"spatial size {h.shape[2]}×{h.shape[3]} too small for block {bi} "
                f"stride {spec.stride}"
            )
        h = mbconv_block(h, spec, params, buffers, f"{prefix}.block{bi}", training)
    h = ops.conv2d(h, params[f"{prefix}.head.conv.weight"].tensor)
    h = ops.silu(_bn(h, params, buffers, f"{prefix}.head.bn", training))
    return ops.global_avg_pool(h)


def efficientnet_param_count(config: EfficientNetConfig, in_channels: int = 3) -> int:
    """Closed-form trainable parameter count (see README)."""
    stem = scaled_stem_width(config)
    total = stem * in_channels * 9 + 2 * stem
    in_ch = stem
    for spec in expand_block_list(config):
        e = spec.in_ch * spec.expansion
        sq = spec.squeeze_width
        if spec.expansion != 1:
            total += e * spec.in_ch + 2 * e
        total += e * spec.kernel**2 + 2 * e
        total += e * sq + sq + sq * e + e
        total += spec.out_ch * e + 2 * spec.out_ch
        in_ch = spec.out_ch
    total += config.head_width * in_ch + 2 * config.head_width
    return total
