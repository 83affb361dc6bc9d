"""Decoder with shared attention sublayers and per-modality expert FFNs"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import InputValidationError, NumericError
from ..numerics import Tensor, layer_norm
from .attention import cross_attention, self_attention
from .encoder import feed_forward
from .params import EXPERTS, ModelParams


def check_expert(expert: Optional[str]) -> str:
    if expert not in EXPERTS:
        raise InputValidationError(f"decoder needs an expert tag in {EXPERTS}, got {expert!r}")
    return expert


def _norm(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def embed_decoder_inputs(ids: Sequence[int], params: ModelParams) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    limit = params.config.max_decoder_positions
    if len(ids) > limit:
        raise InputValidationError(f"decoder input of {len(ids)} exceeds {limit} positions")
    return params["embed.tokens"][ids] + params["embed.decoder_pos"][np.arange(len(ids))]


def decoder_hidden(
    ids: Sequence[int],
    memory: Tensor,
    expert: str,
    params: ModelParams,
    memory_mask: Optional[np.ndarray] = None,
    input_additions: Optional[Tensor] = None,
) -> Tensor:
    """
    Causal decoder states (T × d_model). Each layer's FFN sublayer runs only the
    `expert` FFN. `input_additions` (T × d_model) is added to the input embeddings.
    """
    expert = check_expert(expert)
    x = embed_decoder_inputs(ids, params)
    if input_additions is not None:
        x = x + input_additions
    for layer in range(params.config.decoder_layers):
        p = f"decoder.{layer}"
        x = x + self_attention(_norm(x, params, f"{p}.ln1"), params, f"{p}.self_attn", causal=True)
        x = x + cross_attention(_norm(x, params, f"{p}.ln2"), memory, params, f"{p}.cross_attn",
                                memory_mask=memory_mask)
        x = x + feed_forward(_norm(x, params, f"{p}.ln3"), params, f"{p}.experts.{expert}")
        if np.isnan(x.data).any():
            raise NumericError(f"NaN in decoder layer {layer}", where=f"decoder.{layer}")
    return _norm(x, params, "decoder.ln_f")


def output_logits(hidden: Tensor, params: ModelParams) -> Tensor:
    """Projection tied to the token embedding table"""
    return hidden @ params["embed.tokens"].T + params["decoder.out_bias"]


def decoder_forward(
    ids: Sequence[int],
    memory: Tensor,
    expert: str,
    params: ModelParams,
    memory_mask: Optional[np.ndarray] = None,
    input_additions: Optional[Tensor] = None,
) -> Tensor:
    """T × vocab logits over the shared vocabulary"""
    return output_logits(
        decoder_hidden(ids, memory, expert, params, memory_mask, input_additions), params
    )
