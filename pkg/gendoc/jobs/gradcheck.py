"""Gradient-check job - finite differences over every trainable component of a tiny model"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..config import CorpusSpec, RunConfig
from ..data import generate_document, vocab_texts
from ..downstream.classification import HEAD as CLS_HEAD
from ..downstream.classification import classification_example, classification_loss
from ..downstream.labeling import HEAD as NER_HEAD
from ..downstream.labeling import labeling_example, labeling_loss, tag_set
from ..errors import ConfigError
from ..inputs import INSTRUCTIONS, build_text_input, encode, prepare_image
from ..model import EXPERTS, decoder_forward, init_params
from ..numerics import GradReport, Tensor, cross_entropy, grad_check, mse, no_grad
from ..observability import get_logger
from ..vocab import BOS, EOS, Vocab, build_vocab
from ..vqvae import init_vqvae_params, lookup_codes, nearest_codes, straight_through, vq_decode, vq_encode

logger = get_logger("jobs.gradcheck")

MAX_D_MODEL = 64
WORD_TOKENS = 32
VQ_IMAGE = 32
COORDS = 12


@dataclass
class ComponentCheck:
    loss: Callable[[], Tensor]
    tensors: dict[str, Tensor]
    names: list[str]
    numeric: Optional[Callable[[], Tensor]] = None


def text_limit(vocab: Vocab, instruction: str, question: Optional[str] = None) -> int:
    """Room for BOS, instruction, SEP, question, SEP and WORD_TOKENS of document text"""
    prefix = 2 + len(vocab.encode_text(instruction))
    if question is not None:
        prefix += 1 + len(vocab.encode_text(question))
    return prefix + WORD_TOKENS


def _fixture(config: RunConfig):
    spec = CorpusSpec(seed=config.seed, documents=1, page_size=128, words_min=8, words_max=12,
                      archetypes=["receipt"], qa_pairs=1)
    doc = generate_document(spec, 0)
    vocab = build_vocab(vocab_texts([doc]), config.vocab)
    rng = np.random.default_rng(config.seed)
    params = init_params(config.model, vocab, rng)
    params.add_head(NER_HEAD, len(tag_set(config.finetune.entity_labels)), rng)
    params.add_head(CLS_HEAD, spec.class_count, rng)
    return doc, vocab, params, rng


def _vqvae_checks(config: RunConfig, page: np.ndarray, rng: np.random.Generator) -> dict[str, ComponentCheck]:
    """
    The nearest-code lookup is piecewise constant, so each side is checked on a loss that is
    smooth in its own parameters: decoder and codebook with the codes held fixed, the encoder
    on the commitment term, and the straight-through copy against the decoder fed z_q.
    """
    vq = init_vqvae_params(config.vqvae, 8, rng)
    raster = prepare_image(page, VQ_IMAGE)
    with no_grad():
        z0 = vq_encode(raster, vq).data.astype(np.float64)
    h, w, d = z0.shape
    codes = nearest_codes(z0.reshape(h * w, d), vq["codebook"].data)
    zq0 = vq["codebook"].data[codes].reshape(h, w, d).astype(np.float64)
    latent = {"latent": Tensor(z0.copy(), requires_grad=True)}

    def decoder_side() -> Tensor:
        z_q = lookup_codes(codes, vq, h, w)
        return mse(vq_decode(z_q, vq), Tensor(raster[None])) + mse(z_q, Tensor(z0))

    def encoder_side() -> Tensor:
        return mse(vq_encode(raster, vq), Tensor(zq0))

    def through_copy() -> Tensor:
        return mse(vq_decode(straight_through(latent["latent"], Tensor(zq0)), vq), Tensor(raster[None]))

    def decoder_on_codes() -> Tensor:
        # moving the latent by delta moves the decoder input z_q by the same delta
        return mse(vq_decode(latent["latent"] + Tensor(zq0 - z0), vq), Tensor(raster[None]))

    return {
        "vqvae.decoder": ComponentCheck(decoder_side, vq, [
            "decoder.deconv1.weight", "decoder.deconv3.weight", "decoder.deconv3.bias", "codebook",
        ]),
        "vqvae.encoder": ComponentCheck(encoder_side, vq, [
            "encoder.conv1.weight", "encoder.conv3.weight", "encoder.conv3.bias",
        ]),
        "vqvae.straight_through": ComponentCheck(through_copy, {**vq, **latent}, ["latent"],
                                                 numeric=decoder_on_codes),
    }


def _component_checks(config: RunConfig) -> dict[str, ComponentCheck]:
    doc, vocab, params, rng = _fixture(config)
    image = prepare_image(doc.image, config.model.image_size)
    question = doc.qa[0].question
    source = build_text_input(vocab, INSTRUCTIONS["qa"], doc.tokens, question=question,
                              max_len=text_limit(vocab, INSTRUCTIONS["qa"], question))
    answer = vocab.encode_text(doc.qa[0].answers[0])
    visual = [vocab.visual_token(int(c)) for c in rng.integers(vocab.visual_size, size=4)]
    layout = [vocab.layout_token(int(b)) for b in rng.integers(vocab.layout_bins, size=4)]
    targets = {"text": answer, "visual": visual, "layout": layout}

    def seq_loss(expert: str) -> Callable[[], Tensor]:
        ids = targets[expert]

        def loss() -> Tensor:
            memory, encoded = encode(source, image, params)
            logits = decoder_forward([BOS] + ids, memory, expert, params, memory_mask=encoded.mask)
            return cross_entropy(logits, np.asarray(ids + [EOS]))
        return loss

    def existing(names: list[str]) -> list[str]:
        return [n for n in names if n in params]

    checks: dict[str, ComponentCheck] = {
        "encoder": ComponentCheck(seq_loss("text"), params.tensors, existing([
            "encoder.0.attn.layout_x", "encoder.0.attn.layout_y", "encoder.0.attn.q.weight",
            "encoder.0.ffn.w1", "backbone.conv1.weight", "embed.visual_pos", "embed.text_pos",
        ])),
    }
    for expert in EXPERTS:
        checks[f"expert.{expert}"] = ComponentCheck(seq_loss(expert), params.tensors, [
            f"decoder.0.experts.{expert}.w1", f"decoder.0.experts.{expert}.b1",
            f"decoder.0.experts.{expert}.w2", "decoder.0.cross_attn.v.weight", "decoder.out_bias",
        ])

    tags = tag_set(config.finetune.entity_labels)
    ner = labeling_example(doc, vocab, tags, config.model.image_size,
                           text_limit(vocab, INSTRUCTIONS["ner"]))
    checks["head.ner"] = ComponentCheck(lambda: labeling_loss(ner, params), params.tensors,
                                        [f"head.{NER_HEAD}.weight", f"head.{NER_HEAD}.bias", "decoder.ln_f.gamma"])
    cls = classification_example(doc, vocab, params, text_limit(vocab, INSTRUCTIONS["classify"]))
    checks["head.cls"] = ComponentCheck(lambda: classification_loss(cls, params), params.tensors,
                                        [f"head.{CLS_HEAD}.weight", f"head.{CLS_HEAD}.bias"])

    checks.update(_vqvae_checks(config, doc.image, rng))
    return checks


def run_grad_check(config: RunConfig, float64: bool = False, max_coords: int = COORDS) -> dict[str, GradReport]:
    """
    Check reverse-mode gradients of the encoder (disentangled layout tables included),
    each decoder expert, the task heads and the VQ-VAE.

    Raises:
        ConfigError: d_model above the tiny-model limit
    """
    if config.model.d_model > MAX_D_MODEL:
        raise ConfigError(f"grad-check needs a tiny model (d_model <= {MAX_D_MODEL}), got {config.model.d_model}")
    reports: dict[str, GradReport] = {}
    for name, check in _component_checks(config).items():
        numeric = (lambda _p, fn=check.numeric: fn()) if check.numeric is not None else None
        reports[name] = grad_check(lambda _p, fn=check.loss: fn(), check.tensors, names=check.names,
                                   float64=float64, max_coords=max_coords, seed=config.seed,
                                   numeric_fn=numeric)
        logger.info(f"{name}: worst relative error {reports[name].worst()[1]:.3e}")
    return reports


def summarize(reports: dict[str, GradReport]) -> dict:
    return {
        "passed": all(r.passed for r in reports.values()),
        "components": {name: r.to_dict() for name, r in sorted(reports.items())},
    }
