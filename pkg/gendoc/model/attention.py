"""Multi-head attention with content-to-layout (disentangled) score terms"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..numerics import Tensor, linear, softmax
from .params import ModelParams

NEG_INF = -1e9


def rel_bucket(i: int, j: int, k: int) -> int:
    """Clamped relative distance bucket in [0, 2k)"""
    return min(2 * k - 1, max(0, i - j + k))


def rel_buckets(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    """rel_bucket over all (a[i], b[j]) pairs → len(a) × len(b)"""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return np.clip(a[:, None] - b[None, :] + k, 0, 2 * k - 1)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """L × d → heads × L × d_head"""
    length, d = x.shape
    return x.reshape(length, heads, d // heads).transpose(1, 0, 2)


def merge_heads(x: Tensor) -> Tensor:
    heads, length, dh = x.shape
    return x.transpose(1, 0, 2).reshape(length, heads * dh)


def attention_bias(
    query_len: int,
    key_mask: Optional[np.ndarray],
    causal: bool = False,
) -> Optional[np.ndarray]:
    """Additive bias: NEG_INF on masked keys and (when causal) on future positions"""
    key_len = query_len if key_mask is None else len(key_mask)
    bias = np.zeros((query_len, key_len))
    used = False
    if key_mask is not None and not np.all(key_mask):
        bias[:, ~np.asarray(key_mask, dtype=bool)] = NEG_INF
        used = True
    if causal:
        bias[np.triu_indices(query_len, k=1, m=key_len)] = NEG_INF
        used = True
    return bias if used else None


def disentangled_scores(
    q: Tensor,
    k: Tensor,
    layout_x: Tensor,
    layout_y: Tensor,
    x_bins: np.ndarray,
    y_bins: np.ndarray,
    half_window: int,
) -> Tensor:
    """
    Scaled logits A_ij = (q_i·k_j + q_i·Kx[δx(i,j)] + q_i·Ky[δy(i,j)]) / sqrt(3·d_head)
    per head. q, k: heads × L × d_head; layout tables: heads × 2k × d_head.
    """
    dh = q.shape[-1]
    length = q.shape[1]
    content = q @ k.transpose(0, 2, 1)
    bx = rel_buckets(x_bins, x_bins, half_window)
    by = rel_buckets(y_bins, y_bins, half_window)
    rows = np.arange(length)[:, None]
    c2x = (q @ layout_x.transpose(0, 2, 1))[:, rows, bx]
    c2y = (q @ layout_y.transpose(0, 2, 1))[:, rows, by]
    return (content + c2x + c2y) * (1.0 / math.sqrt(3 * dh))


def content_scores(q: Tensor, k: Tensor) -> Tensor:
    return (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(q.shape[-1]))


def _weighted(scores: Tensor, v: Tensor, bias: Optional[np.ndarray]) -> Tensor:
    if bias is not None:
        scores = scores + bias
    return softmax(scores, axis=-1) @ v


def self_attention(
    x: Tensor,
    params: ModelParams,
    prefix: str,
    key_mask: Optional[np.ndarray] = None,
    causal: bool = False,
    coords: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> Tensor:
    """
    Multi-head self attention. With `coords` (x/y center bins) and the model's
    disentangled flag on, the content-to-layout terms are added.
    """
    heads = params.config.heads
    q = split_heads(linear(x, params[f"{prefix}.q.weight"], params[f"{prefix}.q.bias"]), heads)
    k = split_heads(linear(x, params[f"{prefix}.k.weight"], params[f"{prefix}.k.bias"]), heads)
    v = split_heads(linear(x, params[f"{prefix}.v.weight"], params[f"{prefix}.v.bias"]), heads)
    if coords is not None and params.config.disentangled:
        scores = disentangled_scores(
            q, k,
            params[f"{prefix}.layout_x"], params[f"{prefix}.layout_y"],
            coords[0], coords[1],
            params.config.rel_half_window,
        )
    else:
        scores = content_scores(q, k)
    out = merge_heads(_weighted(scores, v, attention_bias(x.shape[0], key_mask, causal)))
    return linear(out, params[f"{prefix}.o.weight"], params[f"{prefix}.o.bias"])


def cross_attention(
    x: Tensor,
    memory: Tensor,
    params: ModelParams,
    prefix: str,
    memory_mask: Optional[np.ndarray] = None,
) -> Tensor:
    heads = params.config.heads
    q = split_heads(linear(x, params[f"{prefix}.q.weight"], params[f"{prefix}.q.bias"]), heads)
    k = split_heads(linear(memory, params[f"{prefix}.k.weight"], params[f"{prefix}.k.bias"]), heads)
    v = split_heads(linear(memory, params[f"{prefix}.v.weight"], params[f"{prefix}.v.bias"]), heads)
    bias = None
    if memory_mask is not None and not np.all(memory_mask):
        bias = attention_bias(x.shape[0], memory_mask)
    out = merge_heads(_weighted(content_scores(q, k), v, bias))
    return linear(out, params[f"{prefix}.o.weight"], params[f"{prefix}.o.bias"])
