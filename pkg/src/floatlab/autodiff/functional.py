"""Differentiable operators: convolution, linear, ReLU, pooling, batch norm,
cross-entropy, weight-noise injection, and slicing for width-scaled forwards.

Every forward output is checked for NaN/Inf and raises ``NumericError`` on
violation.  Backward closures write gradients only into parents that require
them, so attack-time forwards built from constant parameters leave model
gradients untouched.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DataError, DimensionError, NumericError, StateError
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {op} output")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input and [C_o, C_i, k, k] weight, no bias."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input/weight, got {x.data.ndim}-D/{w.data.ndim}-D")
    n, c_in, h, wd = x.data.shape
    c_out, c_in_w, kh, kw = w.data.shape
    if kh != kw:
        raise DimensionError("conv2d supports square kernels only")
    if c_in != c_in_w:
        raise DimensionError(f"conv2d channel mismatch: input {c_in}, weight {c_in_w}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    k = kh
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (wd + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError(f"conv2d output collapsed: input {h}x{wd}, kernel {k}, pad {padding}")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out_data = np.einsum("nchwij,ocij->nohw", windows, w.data, optimize=True)
    _check_finite(out_data, "conv2d")
    out = Tensor(out_data, requires_grad=x.requires_grad or w.requires_grad, _parents=(x, w))

    def _bwd(g):
        if w.requires_grad:
            w.accumulate(np.einsum("nchwij,nohw->ocij", windows, g, optimize=True))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for ki in range(k):
                for kj in range(k):
                    # (N, H_o, W_o, C_i) contribution of kernel tap (ki, kj)
                    t = np.tensordot(g, w.data[:, :, ki, kj], axes=([1], [0]))
                    gxp[:, :, ki : ki + stride * h_out : stride, kj : kj + stride * w_out : stride] += (
                        t.transpose(0, 3, 1, 2)
                    )
            if padding:
                x.accumulate(gxp[:, :, padding : padding + h, padding : padding + wd])
            else:
                x.accumulate(gxp)

    out._backward = _bwd
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fully-connected layer: y = x @ w.T (+ b); x is (N, F), w is (K, F)."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise DimensionError("linear expects 2-D input and weight")
    if x.data.shape[1] != w.data.shape[1]:
        raise DimensionError(f"linear feature mismatch: {x.data.shape[1]} vs {w.data.shape[1]}")
    out_data = x.data @ w.data.T
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise DimensionError("linear bias shape mismatch")
        out_data = out_data + b.data
    _check_finite(out_data, "linear")
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(out_data, requires_grad=any(p.requires_grad for p in parents), _parents=parents)

    def _bwd(g):
        if x.requires_grad:
            x.accumulate(g @ w.data)
        if w.requires_grad:
            w.accumulate(g.T @ x.data)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))

    out._backward = _bwd
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), requires_grad=x.requires_grad, _parents=(x,))

    def _bwd(g):
        x.accumulate(g * (x.data > 0))

    out._backward = _bwd
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    if x.data.ndim != 4:
        raise DimensionError("global_avg_pool expects NCHW input")
    n, c, h, w = x.data.shape
    scale = 1.0 / (h * w)
    out = Tensor(x.data.mean(axis=(2, 3)), requires_grad=x.requires_grad, _parents=(x,))

    def _bwd(g):
        x.accumulate(np.broadcast_to((g * scale)[:, :, None, None], x.data.shape).copy())

    out._backward = _bwd
    return out


class BNStats:
    """Running statistics of one batch-norm branch (exponential moving average)."""

    __slots__ = ("running_mean", "running_var", "batches")

    def __init__(self, channels: int, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.batches = 0

    @property
    def populated(self) -> bool:
        return self.batches > 0


def batch_norm(x: Tensor, stats: BNStats, gamma: Tensor, beta: Tensor, mode: str) -> Tensor:
    """Channel batch normalization over an NCHW tensor.

    Modes: ``train`` normalizes with batch statistics and updates ``stats``;
    ``frozen`` uses batch statistics without updating them (attack-time use);
    ``eval`` normalizes with the stored running statistics.  Variance is the
    population (biased) variance everywhere.
    """
    if mode not in ("train", "frozen", "eval"):
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    if x.data.ndim != 4:
        raise DimensionError("batch_norm expects NCHW input")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(f"batch_norm affine shape mismatch for {c} channels")
    g4 = gamma.data[None, :, None, None]
    b4 = beta.data[None, :, None, None]

    if mode == "eval":
        if not stats.populated:
            raise StateError("batch_norm eval mode requires populated running statistics")
        inv_std = 1.0 / np.sqrt(stats.running_var + BN_EPS)
        xhat = (x.data - stats.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        out_data = g4 * xhat + b4
        _check_finite(out_data, "batch_norm")
        out = Tensor(out_data, requires_grad=any(t.requires_grad for t in (x, gamma, beta)), _parents=(x, gamma, beta))

        def _bwd_eval(g):
            if x.requires_grad:
                x.accumulate(g * g4 * inv_std[None, :, None, None])
            if gamma.requires_grad:
                gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                beta.accumulate(g.sum(axis=(0, 2, 3)))

        out._backward = _bwd_eval
        return out

    n, _, h, w = x.data.shape
    m = n * h * w
    if m == 0:
        raise DataError("batch_norm train mode got an empty batch")
    mu = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = g4 * xhat + b4
    _check_finite(out_data, "batch_norm")
    if mode == "train":
        one = np.asarray(1.0, dtype=stats.running_mean.dtype)
        stats.running_mean[:] = (one - BN_MOMENTUM) * stats.running_mean + BN_MOMENTUM * mu
        stats.running_var[:] = (one - BN_MOMENTUM) * stats.running_var + BN_MOMENTUM * var
        stats.batches += 1

    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in (x, gamma, beta)), _parents=(x, gamma, beta))

    def _bwd_batch(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = g * g4  # gradient w.r.t. xhat
            mean_gx = gx.mean(axis=(0, 2, 3))
            mean_gx_xhat = (gx * xhat).mean(axis=(0, 2, 3))
            x.accumulate(
                inv_std[None, :, None, None]
                * (gx - mean_gx[None, :, None, None] - xhat * mean_gx_xhat[None, :, None, None])
            )

    out._backward = _bwd_batch
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy with log-sum-exp stabilization."""
    if logits.data.ndim != 2:
        raise DimensionError("cross_entropy expects (N, K) logits")
    n, k = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy labels shape {labels.shape} does not match batch {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise DataError(f"cross_entropy labels must lie in [0, {k})")
    _check_finite(logits.data, "cross_entropy")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()
    out = Tensor(np.asarray(loss, dtype=logits.data.dtype), requires_grad=logits.requires_grad, _parents=(logits,))

    def _bwd(g):
        if logits.requires_grad:
            softmax = np.exp(log_probs)
            softmax[rows, labels] -= 1.0
            logits.accumulate(softmax * (float(g) / n))

    out._backward = _bwd
    return out


def scaled_noise_add(theta: Tensor, alpha: Tensor, eta: np.ndarray, scale: float) -> Tensor:
    """theta + (scale * alpha) * eta with eta treated as a constant.

    Gradient contract: identity into theta; the alpha gradient is the inner
    product of the output gradient with eta, times scale (reparameterization).
    A zero ``scale`` must be short-circuited by the caller; here it still
    produces an exact pass-through of theta's values but keeps alpha on the
    tape with zero sensitivity only when scale == 0 numerically.
    """
    if eta.shape != theta.data.shape:
        raise DimensionError(f"noise shape {eta.shape} does not match weight {theta.data.shape}")
    if alpha.data.shape != ():
        raise DimensionError("alpha must be a scalar tensor")
    s = scale * float(alpha.data)
    out_data = theta.data + s * eta
    out = Tensor(out_data, requires_grad=theta.requires_grad or alpha.requires_grad, _parents=(theta, alpha))

    def _bwd(g):
        if theta.requires_grad:
            theta.accumulate(g)
        if alpha.requires_grad:
            alpha.accumulate(np.asarray(scale * np.sum(g * eta), dtype=alpha.data.dtype))

    out._backward = _bwd
    return out


def slice_filters(w: Tensor, c_out: int, c_in: int) -> Tensor:
    """Leading-filter / leading-channel view of a conv weight for width scaling."""
    if w.data.ndim != 4:
        raise DimensionError("slice_filters expects a 4-D conv weight")
    full_out, full_in = w.data.shape[:2]
    if not (1 <= c_out <= full_out and 1 <= c_in <= full_in):
        raise DimensionError(f"slice ({c_out}, {c_in}) outside weight ({full_out}, {full_in})")
    if c_out == full_out and c_in == full_in:
        return w
    out = Tensor(w.data[:c_out, :c_in], requires_grad=w.requires_grad, _parents=(w,))

    def _bwd(g):
        if w.requires_grad:
            full = np.zeros_like(w.data)
            full[:c_out, :c_in] = g
            w.accumulate(full)

    out._backward = _bwd
    return out


def slice_features(w: Tensor, n_features: int) -> Tensor:
    """Leading-column view of an FC weight (outputs kept, input features cut)."""
    if w.data.ndim != 2:
        raise DimensionError("slice_features expects a 2-D weight")
    full = w.data.shape[1]
    if not 1 <= n_features <= full:
        raise DimensionError(f"feature slice {n_features} outside weight width {full}")
    if n_features == full:
        return w
    out = Tensor(w.data[:, :n_features], requires_grad=w.requires_grad, _parents=(w,))

    def _bwd(g):
        if w.requires_grad:
            buf = np.zeros_like(w.data)
            buf[:, :n_features] = g
            w.accumulate(buf)

    out._backward = _bwd
    return out
