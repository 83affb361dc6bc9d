"""Pre-norm transformer encoder over the fused text + visual sequence"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from ..errors import NumericError
from ..numerics import Tensor, layer_norm, linear
from .attention import self_attention
from .params import ModelParams

if TYPE_CHECKING:
    from ..inputs import EncoderInput


def feed_forward(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    hidden = linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]).gelu()
    return linear(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _norm(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def encoder_forward(inputs: EncoderInput, params: ModelParams) -> Tensor:
    """
    L × d_model hidden states. Every layer attends with content-to-content plus
    content-to-layout terms; there is no content-to-1d-position term.

    Raises:
        NumericError: a layer produced NaN (names the layer index)
    """
    x = inputs.embeddings
    coords = (inputs.x_bins, inputs.y_bins)
    for layer in range(params.config.encoder_layers):
        p = f"encoder.{layer}"
        x = x + self_attention(_norm(x, params, f"{p}.ln1"), params, f"{p}.attn",
                               key_mask=inputs.mask, coords=coords)
        x = x + feed_forward(_norm(x, params, f"{p}.ln2"), params, f"{p}.ffn")
        if np.isnan(x.data).any():
            raise NumericError(f"NaN in encoder layer {layer}", where=f"encoder.{layer}")
    if params.config.encoder_layers:
        x = _norm(x, params, "encoder.ln_f")
    return x
