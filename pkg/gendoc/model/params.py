"""Named parameter store for the backbone, encoder, decoder experts and task heads"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..config import ModelConfig
from ..errors import InputValidationError
from ..numerics import Tensor, parameter
from ..vocab import Vocab

EXPERTS = ("text", "visual", "layout")
LAYOUT_FIELDS = ("x1", "y1", "x2", "y2", "width", "height")
BACKBONE_CHANNELS_IN = 1


@dataclass
class ModelParams:
    """
    Every learnable tensor keyed by a dotted name, e.g. "encoder.0.attn.layout_x".

    `layout_bins` is the B of the six layout tables (each B+1 rows, last row = padding).
    """

    config: ModelConfig
    vocab_size: int
    layout_bins: int
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self.tensors))

    def names(self, prefix: str = "") -> list[str]:
        return sorted(n for n in self.tensors if n.startswith(prefix))

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {n: self.tensors[n] for n in self.names(prefix)}

    def lr_multipliers(self, backbone_mult: float) -> dict[str, float]:
        return {"backbone.": backbone_mult}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def add_head(self, name: str, rows: int, rng: np.random.Generator) -> None:
        """Linear classifier head `head.<name>` mapping d_model → rows"""
        if rows < 1:
            raise InputValidationError(f"head {name!r} needs at least one output")
        d = self.config.d_model
        self.tensors[f"head.{name}.weight"] = parameter(rng.normal(0.0, self.config.init_std, (d, rows)))
        self.tensors[f"head.{name}.bias"] = parameter(np.zeros(rows))

    def head_size(self, name: str) -> int:
        return self[f"head.{name}.weight"].shape[1]


def _normal(rng: np.random.Generator, std: float, shape: tuple[int, ...]) -> Tensor:
    return parameter(rng.normal(0.0, std, size=shape))


def _linear(tensors: dict, rng, prefix: str, d_in: int, d_out: int, std: float) -> None:
    tensors[f"{prefix}.weight"] = _normal(rng, std, (d_in, d_out))
    tensors[f"{prefix}.bias"] = parameter(np.zeros(d_out))


def _norm(tensors: dict, prefix: str, d: int) -> None:
    tensors[f"{prefix}.gamma"] = parameter(np.ones(d))
    tensors[f"{prefix}.beta"] = parameter(np.zeros(d))


def _ffn(tensors: dict, rng, prefix: str, d: int, hidden: int, std: float) -> None:
    tensors[f"{prefix}.w1"] = _normal(rng, std, (d, hidden))
    tensors[f"{prefix}.b1"] = parameter(np.zeros(hidden))
    tensors[f"{prefix}.w2"] = _normal(rng, std, (hidden, d))
    tensors[f"{prefix}.b2"] = parameter(np.zeros(d))


def init_params(config: ModelConfig, vocab: Vocab, rng: np.random.Generator) -> ModelParams:
    """Random initialization; visual and layout experts start as copies of the text expert"""
    d, std = config.d_model, config.init_std
    heads, dh = config.heads, config.d_model // config.heads
    hidden = d * config.ffn_mult
    buckets = 2 * config.rel_half_window
    B = vocab.layout_bins
    t: dict[str, Tensor] = {}

    t["embed.tokens"] = _normal(rng, std, (vocab.size, d))
    t["embed.text_pos"] = _normal(rng, std, (config.max_text_positions, d))
    t["embed.visual_pos"] = _normal(rng, std, (config.grid * config.grid, d))
    t["embed.decoder_pos"] = _normal(rng, std, (config.max_decoder_positions, d))
    t["embed.visual_mask"] = _normal(rng, std, (1, d))
    for name in LAYOUT_FIELDS:
        t[f"embed.layout.{name}"] = _normal(rng, std, (B + 1, d))

    c1, c2 = config.backbone_channels
    for i, (cin, cout) in enumerate([(BACKBONE_CHANNELS_IN, c1), (c1, c2), (c2, d)], start=1):
        fan_in = cin * 9
        t[f"backbone.conv{i}.weight"] = parameter(
            rng.uniform(-1.0, 1.0, (cout, cin, 3, 3)) * math.sqrt(3.0 / fan_in)
        )
        t[f"backbone.conv{i}.bias"] = parameter(np.zeros(cout))

    for layer in range(config.encoder_layers):
        p = f"encoder.{layer}"
        _norm(t, f"{p}.ln1", d)
        for proj in ("q", "k", "v", "o"):
            _linear(t, rng, f"{p}.attn.{proj}", d, d, std)
        t[f"{p}.attn.layout_x"] = _normal(rng, std, (heads, buckets, dh))
        t[f"{p}.attn.layout_y"] = _normal(rng, std, (heads, buckets, dh))
        _norm(t, f"{p}.ln2", d)
        _ffn(t, rng, f"{p}.ffn", d, hidden, std)
    if config.encoder_layers:
        _norm(t, "encoder.ln_f", d)

    for layer in range(config.decoder_layers):
        p = f"decoder.{layer}"
        _norm(t, f"{p}.ln1", d)
        for proj in ("q", "k", "v", "o"):
            _linear(t, rng, f"{p}.self_attn.{proj}", d, d, std)
        _norm(t, f"{p}.ln2", d)
        for proj in ("q", "k", "v", "o"):
            _linear(t, rng, f"{p}.cross_attn.{proj}", d, d, std)
        _norm(t, f"{p}.ln3", d)
        _ffn(t, rng, f"{p}.experts.text", d, hidden, std)
        for expert in ("visual", "layout"):
            for part in ("w1", "b1", "w2", "b2"):
                t[f"{p}.experts.{expert}.{part}"] = parameter(t[f"{p}.experts.text.{part}"].data.copy())
    _norm(t, "decoder.ln_f", d)
    t["decoder.out_bias"] = parameter(np.zeros(vocab.size))

    return ModelParams(config=config, vocab_size=vocab.size, layout_bins=B, tensors=t)


def _interpolate_rows(rows: np.ndarray, new_count: int) -> np.ndarray:
    """Resample `rows` (n × d) to new_count rows by linear interpolation over [0, 1]"""
    old = np.linspace(0.0, 1.0, rows.shape[0])
    new = np.linspace(0.0, 1.0, new_count)
    return np.stack([np.interp(new, old, rows[:, c]) for c in range(rows.shape[1])], axis=1)


def remap_embeddings(params: ModelParams, old: Vocab, new: Vocab) -> ModelParams:
    """
    Carry a model over to a vocabulary with a different layout-bin count.

    Non-layout token rows move to their new ids; layout token rows and the six layout
    tables are linearly interpolated onto the new bin grid (padding rows are kept).
    """
    if old.subwords != new.subwords or old.visual_size != new.visual_size or old.classes != new.classes:
        raise InputValidationError("remap_embeddings only supports a change of layout bins")
    tensors = dict(params.tensors)
    dtype = params["embed.tokens"].dtype

    def remap(table: np.ndarray) -> np.ndarray:
        out = np.empty((new.size,) + table.shape[1:], dtype=dtype)
        out[:old.layout_offset] = table[:old.layout_offset]
        layout_rows = table[old.layout_offset:old.class_offset]
        if table.ndim == 1:
            out[new.layout_offset:new.class_offset] = _interpolate_rows(layout_rows[:, None], new.layout_bins)[:, 0]
        else:
            out[new.layout_offset:new.class_offset] = _interpolate_rows(layout_rows, new.layout_bins)
        out[new.class_offset:] = table[old.class_offset:]
        return out

    tensors["embed.tokens"] = parameter(remap(params["embed.tokens"].data))
    tensors["decoder.out_bias"] = parameter(remap(params["decoder.out_bias"].data))
    for name in LAYOUT_FIELDS:
        table = params[f"embed.layout.{name}"].data
        grown = np.concatenate([_interpolate_rows(table[:-1], new.layout_bins), table[-1:]], axis=0)
        tensors[f"embed.layout.{name}"] = parameter(grown.astype(dtype))
    return ModelParams(
        config=params.config, vocab_size=new.size, layout_bins=new.layout_bins, tensors=tensors
    )
