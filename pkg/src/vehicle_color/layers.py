"""Forward and backward passes for the network's layer types.

All functions are pure: backward passes take the forward inputs again
rather than relying on hidden layer state. Arrays are (N, C, H, W) for
image-like data and (N, features) for fully connected data.
"""

from dataclasses import dataclass

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidLabelError, InvalidParameterError, ShapeError
from .tensor import rng_for

# Upper bound on im2col buffer elements per backward chunk (~64 MB float32).
_COLS_BUDGET = 16_000_000


@dataclass
class ConvParams:
    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"conv weights must be (O, C, k, k), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} kernels"
            )
        if self.stride < 1 or self.pad < 0:
            raise InvalidParameterError(f"bad stride/pad {self.stride}/{self.pad}")

    @property
    def kernel_size(self):
        return self.weights.shape[2]


@dataclass(frozen=True)
class LrnParams:
    alpha: float = 1e-4
    beta: float = 0.75
    n: int = 5

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise InvalidParameterError(f"LRN window must be odd and positive, got {self.n}")


@dataclass
class SoftmaxOutput:
    probabilities: np.ndarray
    loss: float


def window_extent(size, kernel, stride, pad=0):
    """Output extent of a sliding window; floor division, no partial windows."""
    extent = (size + 2 * pad - kernel) // stride + 1
    if size + 2 * pad < kernel or extent < 1:
        raise ShapeError(
            f"window {kernel} (stride {stride}, pad {pad}) does not fit extent {size}"
        )
    return extent


# ---------------------------------------------------------------- convolution


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv_output_shape(input_shape, p):
    n, c, h, w = input_shape
    if c != p.weights.shape[1]:
        raise ShapeError(f"input has {c} channels, kernels expect {p.weights.shape[1]}")
    k = p.kernel_size
    return (
        n,
        p.weights.shape[0],
        window_extent(h, k, p.stride, p.pad),
        window_extent(w, k, p.stride, p.pad),
    )


@numba.njit(cache=True)
def _accumulate_rows(cols, w_t, bias, out):
    # out[r, o] = bias[o] + cols[r, 0] * w_t[0, o] + cols[r, 1] * w_t[1, o] + ...
    # Each output sums in patch order (channel, row, column); the inner loop
    # runs across kernels so it vectorises without reordering any sum.
    n_rows, n_patch = cols.shape
    n_out = w_t.shape[1]
    for r0 in range(0, n_rows, 4):
        r1 = min(n_rows, r0 + 4)
        for r in range(r0, r1):
            for o in range(n_out):
                out[r, o] = bias[o]
        for q in range(n_patch):
            for r in range(r0, r1):
                v = cols[r, q]
                for o in range(n_out):
                    out[r, o] += v * w_t[q, o]


def conv_forward(x, p):
    """Cross-correlation of ``x`` with every kernel, plus bias.

    Summation order per output is fixed (bias, then channel, row, column),
    so results do not depend on batch size or thread count.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv input must be 4-D, got {x.shape}")
    n, o, out_h, out_w = conv_output_shape(x.shape, p)
    c, k = x.shape[1], p.kernel_size
    dtype = np.result_type(x.dtype, p.weights.dtype)
    w_t = np.ascontiguousarray(p.weights.reshape(o, c * k * k).T, dtype=dtype)
    bias = np.ascontiguousarray(p.bias, dtype=dtype)
    out = np.empty((n, out_h, out_w, o), dtype=dtype)
    chunk = max(1, _COLS_BUDGET // (out_h * out_w * c * k * k))
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        xp = _pad(x[sl].astype(dtype, copy=False), p.pad)
        cols = np.ascontiguousarray(_im2col(xp, k, p.stride, out_h, out_w))
        _accumulate_rows(cols, w_t, bias, out[sl].reshape(-1, o))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _im2col(xp, k, stride, out_h, out_w):
    """(N, C, Hp, Wp) -> (N * out_h * out_w, C * k * k)."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * k * k)


def conv_backward(x, p, grad_out, input_grad=True):
    """Gradients of a scalar loss w.r.t. input, weights and bias.

    With ``input_grad=False`` the input gradient is skipped and returned as None.
    """
    shape = conv_output_shape(x.shape, p)
    if grad_out.shape != shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {shape}")
    n, o, out_h, out_w = shape
    c, k, s, pad = x.shape[1], p.kernel_size, p.stride, p.pad
    dtype = np.result_type(x.dtype, p.weights.dtype, grad_out.dtype)
    w_mat = p.weights.reshape(o, c * k * k).astype(dtype, copy=False)
    grad_w = np.zeros((o, c * k * k), dtype=dtype)
    hp, wp = x.shape[2] + 2 * pad, x.shape[3] + 2 * pad
    grad_xp = np.zeros((n, c, hp, wp), dtype=dtype) if input_grad else None

    per_item = out_h * out_w * c * k * k
    chunk = max(1, _COLS_BUDGET // per_item)
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        m = sl.stop - sl.start
        xp = _pad(x[sl].astype(dtype, copy=False), pad)
        cols = _im2col(xp, k, s, out_h, out_w)
        g_mat = grad_out[sl].transpose(0, 2, 3, 1).reshape(m * out_h * out_w, o)
        grad_w += g_mat.T @ cols
        if not input_grad:
            continue
        g_cols = (g_mat @ w_mat).reshape(m, out_h, out_w, c, k, k)
        dst = grad_xp[sl]
        for i in range(k):
            for j in range(k):
                dst[:, :, i : i + s * out_h : s, j : j + s * out_w : s] += g_cols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)

    grad_b = grad_out.sum(axis=(0, 2, 3), dtype=dtype)
    grad_x = None
    if input_grad:
        grad_x = np.ascontiguousarray(grad_xp[:, :, pad : pad + x.shape[2], pad : pad + x.shape[3]])
    return grad_x, grad_w.reshape(p.weights.shape), grad_b


# ----------------------------------------------------------------------- ReLU


def relu(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


# ------------------------------------------------- local response normalization


def _channel_window_sum(sq, n):
    """Sum over channels [i - n//2, i + n//2], clamped at the edges."""
    half = n // 2
    c = sq.shape[1]
    padded = np.pad(sq, ((0, 0), (half, half), (0, 0), (0, 0)))
    total = np.zeros_like(sq)
    for offset in range(n):
        total += padded[:, offset : offset + c]
    return total


def _lrn_denominator(x, p):
    return 1.0 + (p.alpha / p.n) * _channel_window_sum(x * x, p.n)


def lrn_forward(x, p=LrnParams()):
    """Divide each activation by (1 + alpha/n * sum of neighbouring squares)^beta."""
    return (x * _lrn_denominator(x, p) ** -p.beta).astype(x.dtype, copy=False)


def lrn_backward(x, p, grad_out):
    d = _lrn_denominator(x, p)
    d_pow = d**-p.beta
    # The window is symmetric, so channel j receives from every i whose window holds j.
    inner = _channel_window_sum(grad_out * x * d_pow / d, p.n)
    grad = grad_out * d_pow - (2.0 * p.alpha * p.beta / p.n) * x * inner
    return grad.astype(x.dtype, copy=False)


# ---------------------------------------------------------------- max pooling


def maxpool_forward(x, size=3, stride=2):
    """Window max and the flat in-window argmax (first occurrence on ties)."""
    if x.ndim != 4:
        raise ShapeError(f"pool input must be 4-D, got {x.shape}")
    out_h = window_extent(x.shape[2], size, stride)
    out_w = window_extent(x.shape[3], size, stride)
    win = sliding_window_view(x, (size, size), axis=(2, 3))
    win = win[:, :, : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride]
    flat = win.reshape(win.shape[:4] + (size * size,))
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(input_shape, argmax, grad_out, size=3, stride=2):
    if argmax.shape != grad_out.shape:
        raise ShapeError(f"argmax {argmax.shape} and grad {grad_out.shape} disagree")
    grad = np.zeros(input_shape, dtype=grad_out.dtype)
    out_h, out_w = grad_out.shape[2:]
    for k in range(size * size):
        i, j = divmod(k, size)
        grad[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += np.where(
            argmax == k, grad_out, 0
        )
    return grad


# ------------------------------------------------------------ fully connected


def fc_forward(x, weights, bias):
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeError(f"fc input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"fc bias {bias.shape} != ({weights.shape[0]},)")
    return x @ weights.T + bias


def fc_backward(x, weights, grad_out):
    if grad_out.shape != (x.shape[0], weights.shape[0]):
        raise ShapeError(f"fc grad_out {grad_out.shape} has wrong shape")
    return grad_out @ weights, grad_out.T @ x, grad_out.sum(axis=0)


# -------------------------------------------------------------------- dropout


def _check_rate(rate):
    if not 0 <= rate < 1:
        raise InvalidParameterError(f"dropout rate must be in [0, 1), got {rate}")


def dropout_mask(shape, rate, seed):
    """Keep-mask already scaled by 1 / (1 - rate)."""
    _check_rate(rate)
    keep = rng_for(seed).random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate, mode="train", seed=0):
    """Inverted dropout; identity in eval mode or at rate 0."""
    _check_rate(rate)
    if mode == "eval" or rate == 0:
        return x
    return (x * dropout_mask(x.shape, rate, seed)).astype(x.dtype, copy=False)


def dropout_backward(grad_out, rate, mode="train", seed=0):
    return dropout(grad_out, rate, mode, seed)


# ------------------------------------------------------- softmax + cross-entropy


def _check_labels(labels, k):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise InvalidLabelError(f"labels must be a 1-D integer vector, got {labels!r}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InvalidLabelError(f"labels must lie in [0, {k}), got {labels}")
    return labels


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_loss(logits, labels):
    """Row-wise softmax and mean cross-entropy."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, k), got {logits.shape}")
    labels = _check_labels(labels, logits.shape[1])
    if labels.shape[0] != logits.shape[0]:
        raise InvalidLabelError(f"{labels.shape[0]} labels for {logits.shape[0]} rows")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(len(labels)), labels] - log_norm
    probs = np.exp(shifted - log_norm[:, None])
    return SoftmaxOutput(probabilities=probs, loss=float(-log_p.mean()))


def softmax_loss_backward(output, labels):
    probs = output.probabilities
    labels = _check_labels(labels, probs.shape[1])
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)
