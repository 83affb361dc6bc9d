"""BIO sequence labeling over OCR words with encoder states added to the decoder inputs"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..entities import OUTSIDE, Document, EntitySpan, TokenSeq, bio_decode
from ..errors import ConfigError, InputValidationError
from ..inputs import INSTRUCTIONS, build_text_input, encode, prepare_image
from ..model import ModelParams, decoder_hidden
from ..numerics import IGNORE_INDEX, Tensor, cross_entropy, linear, no_grad
from ..vocab import Vocab

HEAD = "ner"
LABELING_EXPERT = "text"


def tag_set(labels: Sequence[str]) -> list[str]:
    """["O", "B-a", "I-a", "B-b", ...] in label order"""
    tags = [OUTSIDE]
    for label in labels:
        tags.extend([f"B-{label}", f"I-{label}"])
    return tags


def check_head(params: ModelParams, tags: Sequence[str]) -> None:
    if f"head.{HEAD}.weight" not in params:
        raise ConfigError(f"model has no {HEAD} head; fine-tune for ner first")
    if params.head_size(HEAD) != len(tags):
        raise ConfigError(
            f"{HEAD} head has {params.head_size(HEAD)} outputs but the tag set has {len(tags)}"
        )


@dataclass
class LabelingExample:
    source: TokenSeq
    image: np.ndarray
    targets: np.ndarray


def labeling_source(doc: Document, vocab: Vocab, max_len: int = 512) -> TokenSeq:
    return build_text_input(vocab, INSTRUCTIONS["ner"], doc.tokens, max_len=max_len)


def labeling_example(
    doc: Document, vocab: Vocab, tags: Sequence[str], image_size: int, max_len: int = 512
) -> LabelingExample:
    """
    Targets are per text position: the word's tag index at each word's first id,
    IGNORE_INDEX everywhere else.

    Raises:
        InputValidationError: missing tags, or a tag outside the configured tag set
    """
    if doc.tags is None:
        raise InputValidationError(f"document {doc.doc_id} has no entity tags")
    if len(doc.tags) != len(doc.tokens):
        raise InputValidationError(
            f"document {doc.doc_id}: {len(doc.tags)} tags for {len(doc.tokens)} words"
        )
    index = {tag: i for i, tag in enumerate(tags)}
    source = labeling_source(doc, vocab, max_len)
    targets = np.full(len(source), IGNORE_INDEX, dtype=np.int64)
    for tag, position in zip(doc.tags, source.word_starts):
        if tag not in index:
            raise InputValidationError(f"tag {tag!r} is not in the configured tag set {tags}")
        if position >= 0:
            targets[position] = index[tag]
    return LabelingExample(source, prepare_image(doc.image, image_size), targets)


def labeling_logits(source: TokenSeq, image: np.ndarray, params: ModelParams) -> Tensor:
    """
    The decoder reads the encoder's text stream; the encoder state of each text
    position is added to the matching decoder input embedding.
    """
    memory, encoded = encode(source, image, params)
    additions = memory[: encoded.text_len]
    hidden = decoder_hidden(source.ids, memory, LABELING_EXPERT, params,
                            memory_mask=encoded.mask, input_additions=additions)
    return linear(hidden, params[f"head.{HEAD}.weight"], params[f"head.{HEAD}.bias"])


def labeling_loss(example: LabelingExample, params: ModelParams, smoothing: float = 0.0) -> Tensor:
    return cross_entropy(labeling_logits(example.source, example.image, params), example.targets,
                         smoothing=smoothing)


def predict_tags(
    doc: Document, params: ModelParams, vocab: Vocab, tags: Sequence[str], max_len: int = 512
) -> list[str]:
    """One tag per OCR word; words cut by truncation are tagged O"""
    check_head(params, tags)
    source = labeling_source(doc, vocab, max_len)
    image = prepare_image(doc.image, params.config.image_size)
    with no_grad():
        logits = labeling_logits(source, image, params).data
    return [
        tags[int(np.argmax(logits[p]))] if p >= 0 else OUTSIDE for p in source.word_starts
    ]


def label_entities(
    doc: Document, params: ModelParams, vocab: Vocab, labels: Sequence[str], max_len: int = 512
) -> list[EntitySpan]:
    """Sorted, disjoint entity spans over the document's OCR words"""
    if not doc.tokens:
        raise InputValidationError(f"document {doc.doc_id} has no OCR words to label")
    return bio_decode(predict_tags(doc, params, vocab, tag_set(labels), max_len))


def entity_record(doc: Document, spans: Sequence[EntitySpan]) -> dict:
    return {
        "doc_id": doc.doc_id,
        "entities": [{"label": s.label, "start": s.start, "end": s.end} for s in spans],
    }
