"""Encoder with disentangled layout attention and mixture-of-modality-experts decoder"""

from .attention import disentangled_scores, rel_bucket, rel_buckets
from .decoder import decoder_forward, decoder_hidden, output_logits
from .encoder import encoder_forward
from .params import EXPERTS, ModelParams, init_params, remap_embeddings

__all__ = [
    "EXPERTS",
    "ModelParams",
    "decoder_forward",
    "decoder_hidden",
    "disentangled_scores",
    "encoder_forward",
    "init_params",
    "output_logits",
    "rel_bucket",
    "rel_buckets",
    "remap_embeddings",
]
