"""ConvNeXt-style feature extractor branch.

Patchify stem, three stages of residual blocks (depthwise 7×7 conv →
layer norm over channels → pointwise expand → GELU → pointwise project
→ learned per-channel scale → residual add), 2×2 stride-2 downsample
convs between stages, then a final layer norm and global average pool.

The toy default (depths [2,2,2], widths [24,48,96]) keeps CPU training
at 128×128 in the minutes range; the parameter count has a closed form,
see README.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import ops
from .errors import ConfigError
from .tensor import Parameter, Tensor

LN_EPS = 1e-6


@dataclass
class ConvNeXtConfig:
    stage_depths: tuple = (2, 2, 2)
    stage_widths: tuple = (24, 48, 96)
    stem_patch: int = 4
    expansion_ratio: int = 4
    layer_scale_init: float = 1e-6

    def __post_init__(self):
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        self.stage_widths = tuple(int(w) for w in self.stage_widths)

    def validate(self) -> None:
        if len(self.stage_depths) != len(self.stage_widths):
            raise ConfigError(
                f"stage_depths ({len(self.stage_depths)}) and stage_widths "
                f"({len(self.stage_widths)}) must have equal length"
            )
        if not self.stage_depths:
            raise ConfigError("at least one stage is required")
        if any(d < 1 for d in self.stage_depths) or any(w < 1 for w in self.stage_widths):
            raise ConfigError("stage depths and widths must be positive")
        if self.stem_patch < 1:
            raise ConfigError(f"stem_patch must be positive, got {self.stem_patch}")
        if self.expansion_ratio < 1:
            raise ConfigError(
                f"expansion_ratio must be positive, got {self.expansion_ratio}"
            )
        if self.layer_scale_init < 0:
            raise ConfigError(
                f"layer_scale_init must be nonnegative, got {self.layer_scale_init}"
            )

    @property
    def num_stages(self) -> int:
        return len(self.stage_depths)

    @property
    def feature_dim(self) -> int:
        return self.stage_widths[-1]

    @property
    def spatial_divisor(self) -> int:
        """Input height/width must be divisible by this."""
        return self.stem_patch * 2 ** (self.num_stages - 1)

    def check_input_size(self, h: int, w: int) -> None:
        d = self.spatial_divisor
        if h % d or w % d:
            raise ConfigError(
                f"input size {h}×{w} not divisible by stem_patch * 2^(stages-1) = {d}"
            )


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _conv_param(params, rng, name, o, c, k, dtype, bias=True):
    params[f"{name}.weight"] = Parameter(
        f"{name}.weight", Tensor(he_uniform(rng, (o, c, k, k), c * k * k, dtype))
    )
    if bias:
        params[f"{name}.bias"] = Parameter(
            f"{name}.bias", Tensor(np.zeros(o, dtype=dtype))
        )


def _norm_param(params, name, c, dtype):
    params[f"{name}.gamma"] = Parameter(f"{name}.gamma", Tensor(np.ones(c, dtype=dtype)))
    params[f"{name}.beta"] = Parameter(f"{name}.beta", Tensor(np.zeros(c, dtype=dtype)))


def init_convnext_params(
    config: ConvNeXtConfig,
    rng: np.random.Generator,
    prefix: str,
    in_channels: int = 3,
    dtype=np.float32,
) -> Dict[str, Parameter]:
    """Build the branch's parameters in a fixed, seed-deterministic order."""
    config.validate()
    params: Dict[str, Parameter] = {}
    widths = config.stage_widths
    _conv_param(params, rng, f"{prefix}.stem", widths[0], in_channels, config.stem_patch, dtype)
    for s, (depth, width) in enumerate(zip(config.stage_depths, widths)):
        if s > 0:
            _conv_param(params, rng, f"{prefix}.down{s}", width, widths[s - 1], 2, dtype)
        for i in range(depth):
            base = f"{prefix}.stage{s}.block{i}"
            hidden = width * config.expansion_ratio
            _conv_param(params, rng, f"{base}.dwconv", width, 1, 7, dtype)
            _norm_param(params, f"{base}.norm", width, dtype)
            _conv_param(params, rng, f"{base}.pw1", hidden, width, 1, dtype)
            _conv_param(params, rng, f"{base}.pw2", width, hidden, 1, dtype)
            params[f"{base}.layer_scale"] = Parameter(
                f"{base}.layer_scale",
                Tensor(np.full(width, config.layer_scale_init, dtype=dtype)),
            )
    _norm_param(params, f"{prefix}.final_norm", widths[-1], dtype)
    return params


def convnext_block(x: Tensor, params: Dict[str, Parameter], base: str) -> Tensor:
    """One residual block; preserves shape.

    x + scale ⊙ pw_project(gelu(pw_expand(layer_norm(depthwise7×7(x)))))
    """
    c = x.shape[1]
    w_dw = params[f"{base}.dwconv.weight"]
    if w_dw.data.shape[0] != c:
        raise ConfigError(
            f"block {base} sized for {w_dw.data.shape[0]} channels, input has {c}"
        )
    h = ops.conv2d(x, w_dw.tensor, params[f"{base}.dwconv.bias"].tensor,
                   stride=1, padding=3, groups=c)
    h = ops.layer_norm(h, params[f"{base}.norm.gamma"].tensor,
                       params[f"{base}.norm.beta"].tensor, eps=LN_EPS)
    h = ops.conv2d(h, params[f"{base}.pw1.weight"].tensor, params[f"{base}.pw1.bias"].tensor)
    h = ops.gelu(h)
    h = ops.conv2d(h, params[f"{base}.pw2.weight"].tensor, params[f"{base}.pw2.bias"].tensor)
    h = ops.scale_channels(h, params[f"{base}.layer_scale"].tensor)
    return ops.add(x, h)


def convnext_forward(
    x: Tensor,
    config: ConvNeXtConfig,
    params: Dict[str, Parameter],
    prefix: str,
) -> Tensor:
    """Full branch: stem → stages (downsample between) → norm → pool."""
    config.check_input_size(x.shape[2], x.shape[3])
    h = ops.conv2d(
        x,
        params[f"{prefix}.stem.weight"].tensor,
        params[f"{prefix}.stem.bias"].tensor,
        stride=config.stem_patch,
    )
    for s in range(config.num_stages):
        if s > 0:
            h = ops.conv2d(
                h,
                params[f"{prefix}.down{s}.weight"].tensor,
                params[f"{prefix}.down{s}.bias"].tensor,
                stride=2,
            )
        for i in range(config.stage_depths[s]):
            h = convnext_block(h, params, f"{prefix}.stage{s}.block{i}")
    h = ops.layer_norm(
        h,
        params[f"{prefix}.final_norm.gamma"].tensor,
        params[f"{prefix}.final_norm.beta"].tensor,
        eps=LN_EPS,
    )
    return ops.global_avg_pool(h)


def convnext_param_count(config: ConvNeXtConfig, in_channels: int = 3) -> int:
    """Closed-form parameter count (see README for the derivation)."""
    config.validate()
    widths = config.stage_widths
    e = config.expansion_ratio
    total = widths[0] * in_channels * config.stem_patch ** 2 + widths[0]
    for s, (depth, c) in enumerate(zip(config.stage_depths, widths)):
        if s > 0:
            total += c * widths[s - 1] * 4 + c
        # per block: dw 49C+C, norm 2C, pw1 eC^2+eC, pw2 eC^2+C, scale C
        total += depth * (2 * e * c * c + (54 + e) * c)
    total += 2 * widths[-1]
    return total
