"""Finite-difference gradient checking.

The numerical side never touches the autodiff tape: it re-runs the
forward function with perturbed raw arrays and central differences, so
it is an independent oracle for the hand-written backward passes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor


def numerical_grad_at(
    f: Callable[[], Tensor],
    array: np.ndarray,
    index: tuple,
    h: float = 1e-5,
) -> float:
    """Central difference of scalar f with respect to array[index]."""
    orig = array[index]
    array[index] = orig + h
    fp = f().item()
    array[index] = orig - h
    fm = f().item()
    array[index] = orig
    return (fp - fm) / (2.0 * h)


def check_gradients(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    rng: np.random.Generator,
    samples_per_tensor: int = 10,
    h: float = 1e-5,
    rel_tol: float = 1e-5,
    abs_floor: float = 1e-8,
) -> float:
    """Compare analytic grads of scalar f() against central differences.

    ``f`` must rebuild the graph on every call (the tape is one-shot).
    For each tensor, up to ``samples_per_tensor`` coordinates are drawn
    and the relative error |a - n| / max(|a|, |n|, abs_floor) is checked
    against ``rel_tol``. Returns the worst relative error seen.

    Inputs should be float64: the oracle's truncation error (~h^2) is
    what the tolerances are calibrated for.
    """
    for t in tensors:
        t.zero_grad()
    loss = f()
    loss.backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "tensor unreachable from the loss"
        n_coords = min(samples_per_tensor, t.size)
        flat_ids = rng.choice(t.size, size=n_coords, replace=False)
        for fid in flat_ids:
            index = np.unravel_index(fid, t.shape)
            num = numerical_grad_at(f, t.data, index, h=h)
            ana = float(t.grad[index])
            denom = max(abs(ana), abs(num), abs_floor)
            rel = abs(ana - num) / denom
            worst = max(worst, rel)
            assert rel < rel_tol, (
                f"gradient mismatch at {index} of tensor shape {t.shape}: "
                f"analytic {ana:.8e} vs numeric {num:.8e} (rel err {rel:.3e})"
            )
    return worst


def check_parameter_gradients(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    rng: np.random.Generator,
    samples_per_tensor: int = 10,
    h: float = 1e-5,
    rel_tol: float = 1e-4,
) -> float:
    """check_gradients over a named parameter collection."""
    return check_gradients(
        f,
        [p.tensor for p in params],
        rng,
        samples_per_tensor=samples_per_tensor,
        h=h,
        rel_tol=rel_tol,
    )
