"""Adam optimizer with bias correction.

Defaults (lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8) are the standard
small-batch fine-tuning settings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from .errors import ConfigError, FalconfuseError
from .tensor import Parameter


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"Adam lr must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(
                f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}"
            )


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name."""

    hyper: AdamHyper = field(default_factory=AdamHyper)
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update; gradients are left untouched."""
    state.hyper.validate()
    h = state.hyper
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - h.beta1**t
    bc2 = 1.0 - h.beta2**t
    for p in params:
        g = p.tensor.grad
        if g is None:
            raise FalconfuseError(
                f"adam_step: parameter {p.name!r} has no gradient; run backward first"
            )
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.tensor.data -= h.lr * mhat / (np.sqrt(vhat) + h.eps)
