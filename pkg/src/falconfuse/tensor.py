"""Dense tensor with reverse-mode automatic differentiation.

A Tensor wraps a float32/float64 numpy array. Operations (see ops.py)
build a tape of parent links and backward closures; calling
``backward(loss)`` on a scalar loss runs the tape in reverse topological
order and accumulates gradients into every reachable tensor that has
``requires_grad`` set.

The tape is one-shot: a second backward through the same graph raises,
and a fresh forward pass is required after each backward (gradients are
reset separately by the caller).
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import GradientTapeError, ShapeError

SUPPORTED_DTYPES = (np.float32, np.float64)

# Global switch consulted by ops when deciding whether to record the tape.
# Eval-mode forward passes run inside no_grad() to skip closure bookkeeping.
_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad():
    """Disable tape recording inside the block (used for eval passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float array, optionally attached to an autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple = (),
        _backward: Optional[Callable[[np.ndarray], None]] = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray, own: bool = False) -> None:
        """Add an incoming gradient contribution.

        ``own=True`` asserts the caller hands over a freshly allocated
        array that nothing else references, so the first store can keep
        it. Otherwise the first store copies: ops such as residual adds
        hand the *same* array to several parents, and later in-place
        accumulation must not alias.
        """
        if self.grad is None:
            if own and g.dtype == self.data.dtype:
                self.grad = g
            else:
                self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar tensor through its tape."""
        if self.data.size != 1:
            raise GradientTapeError(
                f"backward root must be a scalar, got shape {self.shape}"
            )
        if self._consumed:
            raise GradientTapeError(
                "backward called twice on the same tape; rebuild the graph "
                "with a fresh forward pass first"
            )
        order = _toposort(self)
        self.accumulate_grad(np.ones((), dtype=self.data.dtype))
        for node in order:
            fn = node._backward
            if fn is not None and node.grad is not None:
                fn(node.grad)
            node._consumed = True
            # Release closures and non-leaf gradients so the graph memory
            # is reclaimed as soon as backward finishes.
            node._backward = None
            node._parents = ()
            if not node.requires_grad:
                node.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"


def _toposort(root: Tensor) -> list:
    """Iterative post-order over the tape, returned root-first."""
    order: list = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], None],
) -> Tensor:
    """Wrap an op result, recording the tape only when a parent needs it."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def backward(loss: Tensor, parameters: Optional[Iterable["Parameter"]] = None) -> None:
    """Backpropagate from a scalar loss.

    When ``parameters`` is given, any parameter the loss does not reach
    gets an explicit all-zeros gradient so optimizers see a full set.
    """
    loss.backward()
    if parameters is not None:
        for p in parameters:
            if p.tensor.grad is None:
                p.tensor.grad = np.zeros_like(p.tensor.data)


@dataclass
class Parameter:
    """A named trainable tensor; the dotted name encodes module provenance."""

    name: str
    tensor: Tensor

    def __post_init__(self):
        self.tensor.requires_grad = True

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad
