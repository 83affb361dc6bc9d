"""Differentiable building blocks on top of Tensor: softmax, losses, norms, convolutions"""

from __future__ import annotations

import numpy as np

from ..errors import InputValidationError, NumericError
from .tensor import Tensor, as_tensor

IGNORE_INDEX = -100


# ============ Softmax family ============

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`, stabilized by max subtraction"""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        x._send(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor._make(out, (x,), "softmax", backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g: np.ndarray) -> None:
        x._send(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return Tensor._make(out, (x,), "log_softmax", backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a rows × cols tensor; each row sums to 1"""
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows received NaN input", where="softmax_rows")
    if x.ndim != 2:
        raise InputValidationError(f"softmax_rows expects a 2-d tensor, got shape {x.shape}")
    return softmax(x, axis=-1)


# ============ Losses ============

def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    smoothing: float = 0.0,
    weight: float = 1.0,
    ignore_index: int = IGNORE_INDEX,
) -> Tensor:
    """
    Label-smoothed cross-entropy averaged over non-ignored positions.

    The smoothed target puts (1 - smoothing) on the gold id plus smoothing / V on
    every id. Positions whose target equals `ignore_index` are excluded; with no
    remaining position the loss is 0.

    Args:
        logits: positions × vocab scores
        targets: gold id per position (or ignore_index)
        smoothing: label smoothing rate in [0, 1)
        weight: non-negative multiplier applied to the mean

    Returns:
        Scalar tensor
    """
    if not 0.0 <= smoothing < 1.0:
        raise InputValidationError(f"smoothing must be in [0, 1), got {smoothing}")
    if weight < 0:
        raise InputValidationError(f"loss weight must be non-negative, got {weight}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n_pos, vocab = logits.shape
    if targets.shape[0] != n_pos:
        raise InputValidationError(f"{targets.shape[0]} targets for {n_pos} logit rows")
    valid = targets != ignore_index
    if (targets[valid] >= vocab).any() or (targets[valid] < 0).any():
        bad = int(targets[valid][(targets[valid] >= vocab) | (targets[valid] < 0)][0])
        raise InputValidationError(f"target id {bad} outside vocabulary of size {vocab}")

    count = int(valid.sum())
    if count == 0:
        return Tensor._make(
            np.zeros((), dtype=logits.dtype), (logits,), "cross_entropy", lambda g: None
        )

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.nonzero(valid)[0]
    gold = targets[valid]
    nll = -log_probs[rows, gold]
    uniform = -log_probs[rows].mean(axis=1)
    per_position = (1.0 - smoothing) * nll + smoothing * uniform
    scale = weight / count
    loss = per_position.sum() * scale

    def backward(g: np.ndarray) -> None:
        grad = np.zeros_like(logits.data)
        probs = np.exp(log_probs[rows])
        target_dist = np.full_like(probs, smoothing / vocab)
        target_dist[np.arange(len(rows)), gold] += 1.0 - smoothing
        grad[rows] = (probs - target_dist) * (scale * g)
        logits._send(grad)

    return Tensor._make(np.asarray(loss, dtype=logits.dtype), (logits,), "cross_entropy", backward)


def mse(a: Tensor, b) -> Tensor:
    diff = a - as_tensor(b)
    return (diff * diff).mean()


# ============ Layers ============

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias); weight is in_features × out_features"""
    out = x @ weight
    return out + bias if bias is not None else out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis"""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv_std * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            x._send(dx)
        gamma._send(g * xhat)
        beta._send(g)

    return Tensor._make(out, (x, gamma, beta), "layer_norm", backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]"""
    return table[np.asarray(ids, dtype=np.int64)]


# ============ Convolutions (single image, channels-first) ============

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    channels, height, width = x.shape
    out_h = conv_output_size(height, kernel, stride, padding)
    out_w = conv_output_size(width, kernel, stride, padding)
    padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((channels, kernel, kernel, out_h, out_w), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            cols[:, i, j] = padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
    return cols.reshape(channels * kernel * kernel, out_h * out_w), out_h, out_w


def _col2im(
    cols: np.ndarray,
    shape: tuple[int, int, int],
    kernel: int,
    stride: int,
    padding: int,
    grid_h: int,
    grid_w: int,
) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back onto a channels × H × W image"""
    channels, height, width = shape
    cols = cols.reshape(channels, kernel, kernel, grid_h, grid_w)
    padded = np.zeros((channels, height + 2 * padding, width + 2 * padding), dtype=cols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            padded[:, i:i + stride * grid_h:stride, j:j + stride * grid_w:stride] += cols[:, i, j]
    return padded[:, padding:padding + height, padding:padding + width]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-d convolution of one C×H×W image.

    Args:
        x: input, channels × height × width
        weight: out_channels × in_channels × k × k
        bias: out_channels
    """
    out_channels, in_channels, kernel, _ = weight.shape
    if x.shape[0] != in_channels:
        raise InputValidationError(f"conv2d expects {in_channels} channels, got {x.shape[0]}")
    cols, out_h, out_w = _im2col(x.data, kernel, stride, padding)
    w2 = weight.data.reshape(out_channels, -1)
    out = (w2 @ cols + bias.data[:, None]).reshape(out_channels, out_h, out_w)

    def backward(g: np.ndarray) -> None:
        g2 = g.reshape(out_channels, -1)
        weight._send((g2 @ cols.T).reshape(weight.shape))
        bias._send(g2.sum(axis=1))
        if x.requires_grad:
            x._send(_col2im(w2.T @ g2, x.shape, kernel, stride, padding, out_h, out_w))

    return Tensor._make(out, (x, weight, bias), "conv2d", backward)


def conv_transpose2d(
    x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """
    Transposed convolution (the adjoint of conv2d with the same geometry).

    Args:
        x: input, in_channels × h × w
        weight: in_channels × out_channels × k × k
        bias: out_channels
    """
    in_channels, out_channels, kernel, _ = weight.shape
    if x.shape[0] != in_channels:
        raise InputValidationError(
            f"conv_transpose2d expects {in_channels} channels, got {x.shape[0]}"
        )
    _, grid_h, grid_w = x.shape
    out_h = (grid_h - 1) * stride - 2 * padding + kernel
    out_w = (grid_w - 1) * stride - 2 * padding + kernel
    w2 = weight.data.reshape(in_channels, -1)
    x2 = x.data.reshape(in_channels, -1)
    cols = w2.T @ x2
    out = _col2im(cols, (out_channels, out_h, out_w), kernel, stride, padding, grid_h, grid_w)
    out = out + bias.data[:, None, None]

    def backward(g: np.ndarray) -> None:
        gcols, _, _ = _im2col(g, kernel, stride, padding)
        weight._send((x2 @ gcols.T).reshape(weight.shape))
        bias._send(g.sum(axis=(1, 2)))
        if x.requires_grad:
            x._send((w2 @ gcols).reshape(x.shape))

    return Tensor._make(out, (x, weight, bias), "conv_transpose2d", backward)
