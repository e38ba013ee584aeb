"""Differentiable operations on Tensors.

Every op validates shapes, computes the forward result with vectorized
numpy, and registers a hand-written backward closure on the tape.
Convolutions use an im2col layout (one strided-slice copy per kernel
offset) so the arithmetic runs through BLAS matmuls.

Semantics are the framework-standard ones: convolution is
cross-correlation with zero padding, GELU uses the tanh approximation,
softmax is computed with max subtraction.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import ConfigError, DataError, ShapeError
from .tensor import Tensor, make_result

GELU_TANH_COEFF = 0.7978845608028654  # sqrt(2/pi)
GELU_CUBIC_COEFF = 0.044715


def _as2tuple(shape, name):
    if len(shape) != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {tuple(shape)}")


# ---------------------------------------------------------------------------
# elementwise arithmetic (same-shape only; the backbones never broadcast here)
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b for identically shaped tensors (residual joins)."""
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return make_result(out, (a, b), _bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a * b for identically shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = a.data * b.data

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data, own=True)
        if b.requires_grad:
            b.accumulate_grad(g * a.data, own=True)

    return make_result(out, (a, b), _bw)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = x.data.sum()

    def _bw(g):
        x.accumulate_grad(np.broadcast_to(g, x.shape))

    return make_result(np.asarray(out, dtype=x.dtype), (x,), _bw)


def mean_all(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    n = x.size
    out = x.data.mean()

    def _bw(g):
        x.accumulate_grad(np.broadcast_to(g / n, x.shape))

    return make_result(np.asarray(out, dtype=x.dtype), (x,), _bw)


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """Multiply an N×C×H×W tensor by a per-channel scale.

    ``s`` is either (C,), a learned scale shared across the batch
    (layer-scale), or (N, C), a per-sample gate (squeeze-excitation).
    """
    if x.data.ndim != 4:
        raise ShapeError(f"scale_channels expects N×C×H×W input, got {x.shape}")
    n, c, h, w = x.shape
    if s.shape == (c,):
        sb = s.data.reshape(1, c, 1, 1)
        reduce_axes = (0, 2, 3)
    elif s.shape == (n, c):
        sb = s.data.reshape(n, c, 1, 1)
        reduce_axes = (2, 3)
    else:
        raise ShapeError(
            f"scale shape {s.shape} incompatible with input {x.shape}; "
            f"expected ({c},) or ({n}, {c})"
        )
    out = x.data * sb

    def _bw(g):
        if x.requires_grad:
            x.accumulate_grad(g * sb, own=True)
        if s.requires_grad:
            s.accumulate_grad(
                (g * x.data).sum(axis=reduce_axes).reshape(s.shape), own=True
            )

    return make_result(out, (x, s), _bw)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # scipy's expit: single C pass, overflow-safe at both tails.
    return expit(z)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def _bw(g):
        x.accumulate_grad(g * (x.data > 0), own=True)

    return make_result(out, (x,), _bw)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)

    def _bw(g):
        x.accumulate_grad(g * out * (1.0 - out), own=True)

    return make_result(out, (x,), _bw)


def _use_kernels(arr: np.ndarray) -> bool:
    return _kernels.HAVE_NUMBA and arr.flags.c_contiguous


def silu(x: Tensor) -> Tensor:
    """Swish with beta=1: x * sigmoid(x)."""
    z = x.data
    s = _sigmoid(z)
    out = z * s

    def _bw(g):
        # d/dx = s + x*s*(1-s) = s + out*(1-s), reusing the forward output
        x.accumulate_grad(g * (s + out * (1.0 - s)), own=True)

    return make_result(out, (x,), _bw)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5x(1 + tanh(c(x + 0.044715 x^3)))."""
    z = x.data
    z2 = z * z
    t = np.tanh(GELU_TANH_COEFF * z * (1.0 + GELU_CUBIC_COEFF * z2))
    out = 0.5 * z * (1.0 + t)

    def _bw(g):
        du = GELU_TANH_COEFF * (1.0 + 3.0 * GELU_CUBIC_COEFF * z2)
        local = 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du
        x.accumulate_grad(g * local, own=True)

    return make_result(out, (x,), _bw)


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "silu": silu, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity dispatch; kind in {relu, gelu, silu, sigmoid}."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(
            f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(x)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation, N×C×H×W layout.

    groups=C gives a depthwise convolution, kernel 1×1 a pointwise one.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be N×C×H×W, got {x.shape}")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d weight must be O×(C/g)×kH×kW, got {weight.shape}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ConfigError(
            f"conv2d needs stride>=1, padding>=0, groups>=1; got "
            f"stride={stride}, padding={padding}, groups={groups}"
        )
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups or o % groups:
        raise ConfigError(
            f"groups={groups} must divide both input channels {c} and output channels {o}"
        )
    if cg != c // groups:
        raise ShapeError(
            f"weight expects {cg * groups} input channels but input has {c}"
        )
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} != ({o},)")
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d output would be {ho}×{wo} for input {h}×{w}, "
            f"kernel {kh}×{kw}, stride {stride}, padding {padding}"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data

    if groups == c and cg == 1 and o == c:
        return _conv2d_depthwise(x, weight, bias, stride, padding, xp, ho, wo)

    og = o // groups
    k = cg * kh * kw
    length = ho * wo
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        # 1×1 stride-1: the im2col matrix is just a reshaped view of the input.
        cols4 = xp.reshape(n, groups, k, length)
    else:
        # One contiguous slice copy per kernel offset; every subsequent
        # reshape below is free (no transposes anywhere on this path).
        cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = xp[
                    :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
                ]
        cols4 = cols.reshape(n, groups, k, length)
    w3 = weight.data.reshape(groups, og, k)
    out = (w3 @ cols4).reshape(n, o, ho, wo)
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        g4 = g.reshape(n, groups, og, length)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)), own=True)
        if weight.requires_grad:
            gw = (g4 @ cols4.transpose(0, 1, 3, 2)).sum(axis=0)
            weight.accumulate_grad(gw.reshape(o, cg, kh, kw), own=True)
        if x.requires_grad:
            gcols4 = w3.transpose(0, 2, 1) @ g4
            if pointwise:
                x.accumulate_grad(gcols4.reshape(n, c, h, w), own=True)
                return
            gcols = gcols4.reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[
                        :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
                    ] += gcols[:, :, i, j]
            if padding:
                gxp = np.ascontiguousarray(
                    gxp[:, :, padding : padding + h, padding : padding + w]
                )
            x.accumulate_grad(gxp, own=True)

    return make_result(out, parents, _bw)


def _conv2d_depthwise(x, weight, bias, stride, padding, xp, ho, wo):
    """Depthwise special case: slide-and-accumulate, no im2col expansion.

    The im2col route would materialize a kH*kW-times-larger column
    buffer and dispatch one tiny GEMM per (sample, channel); the direct
    accumulation avoids both. Uses the numba kernels when available,
    otherwise one fused broadcast multiply-add per kernel offset.
    """
    n, c, h, w = x.shape
    _, _, kh, kw = weight.shape
    wv = weight.data.reshape(c, kh, kw)
    use_numba = _kernels.HAVE_NUMBA and xp.flags.c_contiguous and stride in (1, 2)
    split = None
    if use_numba and stride == 2:
        split = (
            np.ascontiguousarray(xp[:, :, :, 0::2]),
            np.ascontiguousarray(xp[:, :, :, 1::2]),
        )
    if use_numba:
        out = np.empty((n, c, ho, wo), dtype=x.dtype)
        if stride == 2:
            _kernels.dw_forward_s2(split[0], split[1], wv, out)
        else:
            _kernels.dw_forward(xp, wv, out, stride)
    else:
        out = np.zeros((n, c, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                out += wv[:, i, j].reshape(1, c, 1, 1) * xp[
                    :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
                ]
    if bias is not None:
        out += bias.data.reshape(1, c, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)), own=True)
        g = np.ascontiguousarray(g)
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            if use_numba and stride == 2:
                _kernels.dw_backward_weight_s2(g, split[0], split[1], gw)
            elif use_numba:
                _kernels.dw_backward_weight(g, xp, gw, stride)
            else:
                for i in range(kh):
                    for j in range(kw):
                        sl = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                        gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, sl)
            weight.accumulate_grad(gw, own=True)
        if x.requires_grad:
            if use_numba and stride == 2:
                gxpe = np.zeros_like(split[0])
                gxpo = np.zeros_like(split[1])
                _kernels.dw_backward_input_s2(g, wv, gxpe, gxpo)
                gxp = np.empty_like(xp)
                gxp[:, :, :, 0::2] = gxpe
                gxp[:, :, :, 1::2] = gxpo
            else:
                gxp = np.zeros_like(xp)
                if use_numba:
                    _kernels.dw_backward_input(g, wv, gxp, stride)
                else:
                    for i in range(kh):
                        for j in range(kw):
                            gxp[
                                :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
                            ] += wv[:, i, j].reshape(1, c, 1, 1) * g
            if padding:
                gxp = np.ascontiguousarray(
                    gxp[:, :, padding : padding + h, padding : padding + w]
                )
            x.accumulate_grad(gxp, own=True)

    return make_result(out, parents, _bw)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis (axis 1) at every position.

    For N×C×H×W input each spatial position is normalized across its C
    values; for N×C input each row is normalized.
    """
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    if x.data.ndim < 2:
        raise ShapeError(f"layer_norm expects at least 2-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}"
        )
    if _use_kernels(x.data):
        return _layer_norm_kernel(x, gamma, beta, eps)
    bshape = (1, c) + (1,) * (x.data.ndim - 2)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    reduce_axes = (0,) + tuple(range(2, x.data.ndim))

    def _bw(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=reduce_axes), own=True)
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=reduce_axes), own=True)
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(bshape)
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            x.accumulate_grad(inv * (dxhat - m1 - xhat * m2), own=True)

    return make_result(out, (x, gamma, beta), _bw)


def _layer_norm_kernel(x, gamma, beta, eps):
    n, c = x.shape[0], x.shape[1]
    x3 = x.data.reshape(n, c, -1)
    length = x3.shape[2]
    inv = np.empty((n, length), dtype=x.dtype)
    xhat = np.empty_like(x3)
    out = np.empty_like(x3)
    _kernels.ln_forward(x3, gamma.data, beta.data, inv, xhat, out, eps)

    def _bw(g):
        g3 = np.ascontiguousarray(g).reshape(n, c, length)
        if gamma.requires_grad or beta.requires_grad:
            dgamma = np.empty(c, dtype=x.dtype)
            dbeta = np.empty(c, dtype=x.dtype)
            _kernels.ln_backward_affine(g3, xhat, dgamma, dbeta)
            if gamma.requires_grad:
                gamma.accumulate_grad(dgamma, own=True)
            if beta.requires_grad:
                beta.accumulate_grad(dbeta, own=True)
        if x.requires_grad:
            gx = np.empty_like(x3)
            _kernels.ln_backward_input(g3, xhat, gamma.data, inv, gx)
            x.accumulate_grad(gx.reshape(x.shape), own=True)

    return make_result(out.reshape(x.shape), (x, gamma, beta), _bw)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float = 0.1,
    eps: float = 1e-3,
    training: bool = False,
) -> Tensor:
    """Per-channel batch normalization for N×C×H×W input.

    Training mode normalizes with batch statistics (population variance)
    and updates the running buffers in place; eval mode normalizes with
    the running buffers. Freshly initialized buffers are (0, 1), so an
    eval pass before any update is well defined.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm expects N×C×H×W input, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}"
        )
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError("running stats must have one entry per channel")
    if training and n * h * w < 2:
        raise ShapeError(
            f"batch_norm training mode needs N*H*W >= 2, got {n}*{h}*{w}"
        )
    if training and _use_kernels(x.data):
        return _batch_norm_train_kernel(
            x, gamma, beta, running_mean, running_var, momentum, eps
        )
    gb = gamma.data.reshape(1, c, 1, 1)
    bb = beta.data.reshape(1, c, 1, 1)
    axes = (0, 2, 3)
    m = n * h * w
    if training:
        mu = x.data.mean(axis=axes)
        xhat = x.data - mu.reshape(1, c, 1, 1)
        var = np.einsum("nchw,nchw->c", xhat, xhat) / m
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
        inv = (1.0 / np.sqrt(var + eps)).reshape(1, c, 1, 1)
        xhat *= inv
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).reshape(1, c, 1, 1)
        xhat = (x.data - running_mean.reshape(1, c, 1, 1)) * inv
    out = gb * xhat
    out += bb

    def _bw(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes), own=True)
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes), own=True)
        if x.requires_grad:
            dxhat = g * gb
            if training:
                s1 = dxhat.sum(axis=axes).reshape(1, c, 1, 1)
                s2 = np.einsum("nchw,nchw->c", dxhat, xhat).reshape(1, c, 1, 1)
                x.accumulate_grad(inv * (dxhat - s1 / m - xhat * (s2 / m)), own=True)
            else:
                x.accumulate_grad(dxhat * inv, own=True)

    return make_result(out, (x, gamma, beta), _bw)


def _batch_norm_train_kernel(x, gamma, beta, running_mean, running_var, momentum, eps):
    n, c, h, w = x.shape
    mu = np.empty(c, dtype=x.dtype)
    var = np.empty(c, dtype=x.dtype)
    inv = np.empty(c, dtype=x.dtype)
    xhat = np.empty_like(x.data)
    out = np.empty_like(x.data)
    _kernels.bn_train_forward(x.data, gamma.data, beta.data, mu, var, inv, xhat, out, eps)
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu
    running_var *= 1.0 - momentum
    running_var += momentum * var

    def _bw(g):
        g = np.ascontiguousarray(g)
        dgamma = np.empty(c, dtype=x.dtype)
        dbeta = np.empty(c, dtype=x.dtype)
        if x.requires_grad:
            gx = np.empty_like(x.data)
            _kernels.bn_train_backward(g, xhat, gamma.data, inv, gx, dgamma, dbeta)
            x.accumulate_grad(gx, own=True)
        else:
            dgamma[:] = np.einsum("nchw,nchw->c", g, xhat)
            dbeta[:] = g.sum(axis=(0, 2, 3))
        if gamma.requires_grad:
            gamma.accumulate_grad(dgamma, own=True)
        if beta.requires_grad:
            beta.accumulate_grad(dbeta, own=True)

    return make_result(out, (x, gamma, beta), _bw)


# ---------------------------------------------------------------------------
# pooling / reshaping / fusion
# ---------------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial plane: N×C×H×W -> N×C."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects N×C×H×W input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def _bw(g):
        x.accumulate_grad(
            np.broadcast_to((g / (h * w))[:, :, None, None], (n, c, h, w))
        )

    return make_result(out, (x,), _bw)


def concat_features(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two N×C feature matrices along the feature axis."""
    _as2tuple(a.shape, "concat_features lhs")
    _as2tuple(b.shape, "concat_features rhs")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(
            f"batch mismatch in concat_features: {a.shape[0]} vs {b.shape[0]}"
        )
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(g[:, :ca])
        if b.requires_grad:
            b.accumulate_grad(g[:, ca:])

    return make_result(out, (a, b), _bw)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map x @ W (+ b) for N×F input and F×K weight."""
    _as2tuple(x.shape, "dense input")
    _as2tuple(weight.shape, "dense weight")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"dense inner dimensions disagree: input {x.shape} vs weight {weight.shape}"
        )
    k = weight.shape[1]
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"dense bias shape {bias.shape} != ({k},)")
    out = x.data @ weight.data
    if bias is not None:
        out += bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0), own=True)
        if weight.requires_grad:
            weight.accumulate_grad(x.data.T @ g, own=True)
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data.T, own=True)

    return make_result(out, parents, _bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = 1.0 / (1.0 - rate)
    out = x.data * keep * scale

    def _bw(g):
        x.accumulate_grad(g * keep * scale, own=True)

    return make_result(out, (x,), _bw)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction, plain ndarray in/out."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]):
    """Mean negative log-likelihood over the batch.

    Returns (loss, probs): a scalar loss tensor on the tape and the
    detached N×K probability matrix for metric bookkeeping.
    """
    _as2tuple(logits.shape, "softmax_cross_entropy logits")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(
            f"label out of range: got values in [{labels.min()}, {labels.max()}] "
            f"for {k} classes"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    probs = np.exp(logp)
    loss = -logp[np.arange(n), labels].mean()

    def _bw(g):
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        logits.accumulate_grad(grad * (g / n), own=True)

    loss_t = make_result(np.asarray(loss, dtype=logits.dtype), (logits,), _bw)
    return loss_t, Tensor(probs)
