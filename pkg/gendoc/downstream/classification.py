"""Document classification from the decoder's final <eos> state"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..entities import Document, TokenSeq
from ..errors import ConfigError, InputValidationError
from ..inputs import INSTRUCTIONS, build_text_input, encode, prepare_image
from ..model import ModelParams, decoder_hidden
from ..numerics import Tensor, cross_entropy, linear, no_grad
from ..vocab import BOS, EOS, Vocab

HEAD = "cls"
CLASSIFICATION_EXPERT = "text"


@dataclass
class ClassificationExample:
    source: TokenSeq
    decoder_ids: list[int]
    image: np.ndarray
    label: int


def decoder_text(doc: Document, vocab: Vocab, limit: int) -> list[int]:
    """<bos> document text <eos>, the text cut to fit `limit` positions"""
    ids = vocab.encode_text(doc.text)[: max(0, limit - 2)]
    return [BOS] + ids + [EOS]


def classification_example(
    doc: Document, vocab: Vocab, params: ModelParams, max_len: int = 512
) -> ClassificationExample:
    """Empty OCR text is allowed: the decoder then reads <bos> <eos> only"""
    source = build_text_input(vocab, INSTRUCTIONS["classify"], doc.tokens, max_len=max_len)
    label = -1 if doc.class_id is None else int(doc.class_id)
    return ClassificationExample(
        source=source,
        decoder_ids=decoder_text(doc, vocab, params.config.max_decoder_positions),
        image=prepare_image(doc.image, params.config.image_size),
        label=label,
    )


def class_logits(example: ClassificationExample, params: ModelParams) -> Tensor:
    memory, encoded = encode(example.source, example.image, params)
    hidden = decoder_hidden(example.decoder_ids, memory, CLASSIFICATION_EXPERT, params,
                            memory_mask=encoded.mask)
    last = hidden[len(example.decoder_ids) - 1:]
    return linear(last, params[f"head.{HEAD}.weight"], params[f"head.{HEAD}.bias"])


def classification_loss(
    example: ClassificationExample, params: ModelParams, smoothing: float = 0.1
) -> Tensor:
    if not 0 <= example.label < params.head_size(HEAD):
        raise InputValidationError(
            f"class id {example.label} outside the {params.head_size(HEAD)}-way head"
        )
    return cross_entropy(class_logits(example, params), np.array([example.label]),
                         smoothing=smoothing)


def classify(doc: Document, params: ModelParams, vocab: Vocab, max_len: int = 512) -> int:
    """Argmax class id"""
    if f"head.{HEAD}.weight" not in params:
        raise ConfigError(f"model has no {HEAD} head; fine-tune for classify first")
    example = classification_example(doc, vocab, params, max_len)
    with no_grad():
        logits = class_logits(example, params).data[0]
    return int(np.argmax(logits))


def class_record(doc: Document, class_id: int) -> dict:
    return {"doc_id": doc.doc_id, "class_id": class_id}
