"""Abstractive question answering: text-expert generation with beam search"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..entities import Document, TokenSeq
from ..errors import InputValidationError
from ..inputs import INSTRUCTIONS, build_text_input, encode, prepare_image
from ..model import ModelParams, decoder_forward
from ..numerics import Tensor, cross_entropy, no_grad
from ..vocab import BOS, EOS, Vocab
from .decoding import beam_search, model_step_fn

QA_EXPERT = "text"


@dataclass
class QASample:
    """One (document, question, answer); a question with several answers yields several samples"""
    doc: Document
    question: str
    answer: str


def qa_samples(docs: Sequence[Document]) -> list[QASample]:
    return [
        QASample(doc, pair.question, answer)
        for doc in docs
        for pair in doc.qa
        for answer in pair.answers
    ]


def qa_source(
    doc: Document, question: str, vocab: Vocab, params: ModelParams, doc_len: int = 800
) -> TokenSeq:
    """
    [bos] instruction [sep] question [sep] document text

    Raises:
        InputValidationError: empty question
    """
    if not question.strip():
        raise InputValidationError("question must not be empty")
    return build_text_input(
        vocab, INSTRUCTIONS["qa"], doc.tokens, question=question,
        max_len=params.config.max_text_positions, doc_len=doc_len,
    )


def answer_target(answer: str, vocab: Vocab, max_len: int = 200) -> list[int]:
    return vocab.encode_text(answer)[: max_len - 1] + [EOS]


def qa_loss(
    sample: QASample,
    vocab: Vocab,
    params: ModelParams,
    smoothing: float = 0.1,
    doc_len: int = 800,
    max_answer_len: int = 200,
    image: np.ndarray | None = None,
) -> Tensor:
    source = qa_source(sample.doc, sample.question, vocab, params, doc_len)
    if image is None:
        image = prepare_image(sample.doc.image, params.config.image_size)
    memory, encoded = encode(source, image, params)
    target = answer_target(sample.answer, vocab, max_answer_len)
    logits = decoder_forward([BOS] + target[:-1], memory, QA_EXPERT, params,
                             memory_mask=encoded.mask)
    return cross_entropy(logits, np.array(target), smoothing=smoothing)


def answer_question(
    doc: Document,
    question: str,
    params: ModelParams,
    vocab: Vocab,
    beam: int = 4,
    max_len: int = 200,
    doc_len: int = 800,
) -> str:
    """Beam-searched answer restricted to text-legal ids (subwords and <eos>)"""
    source = qa_source(doc, question, vocab, params, doc_len)
    image = prepare_image(doc.image, params.config.image_size)
    with no_grad():
        memory, encoded = encode(source, image, params)
    step = model_step_fn(memory, QA_EXPERT, params, encoded.mask, vocab.text_legal_ids())
    best = beam_search(step, beam=beam, max_len=max_len, bos=BOS, eos=EOS)
    return vocab.decode_text(best.tokens)


def answer_record(doc: Document, question: str, answer: str) -> dict:
    return {"doc_id": doc.doc_id, "question": question, "answer": answer}
