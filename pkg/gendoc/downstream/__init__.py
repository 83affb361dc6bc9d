"""Downstream heads: question answering, layout detection, entity labeling and classification"""

from .classification import classify
from .decoding import Hypothesis, beam_search, greedy_decode
from .detection import dequantize_box, detect, make_detection_sequence, quantize_box
from .finetune import HEADS, FineTuner, FinetuneResult, make_head
from .labeling import bio_decode, label_entities, tag_set
from .qa import answer_question, qa_samples

__all__ = [
    "HEADS",
    "FineTuner",
    "FinetuneResult",
    "Hypothesis",
    "answer_question",
    "beam_search",
    "bio_decode",
    "classify",
    "dequantize_box",
    "detect",
    "greedy_decode",
    "label_entities",
    "make_detection_sequence",
    "make_head",
    "qa_samples",
    "quantize_box",
    "tag_set",
]
