"""Text infilling, masked image-token prediction and masked coordinate prediction examples"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..downstream.detection import quantize_box
from ..entities import BBox, Document, TokenSeq
from ..errors import InputValidationError
from ..inputs import INSTRUCTIONS, build_text_input
from ..numerics import IGNORE_INDEX
from ..vocab import BOS, EOS, SEP, Vocab
from ..vqvae import ImageTokenGrid
from .masking import MaskPlan

TASK_EXPERTS = {"ti": "text", "itp": "visual", "cp": "layout"}


@dataclass
class TaskExample:
    """
    One encoder/decoder pair. `target_ids` are the gold tokens fed (shifted) to the
    decoder; `targets` is the loss view where excluded positions hold IGNORE_INDEX.
    """
    task: str
    source: TokenSeq
    image: np.ndarray
    target_ids: list[int]
    targets: np.ndarray
    patch_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if len(self.targets) != len(self.target_ids):
            raise InputValidationError("targets and target_ids differ in length")

    @property
    def decoder_input(self) -> list[int]:
        return [BOS] + list(self.target_ids[:-1])


@dataclass
class TaskBatch:
    task: str
    expert: str
    weight: float = 1.0
    examples: list[TaskExample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    @classmethod
    def merge(cls, batches: Sequence["TaskBatch"]) -> "TaskBatch":
        if not batches:
            raise InputValidationError("cannot merge zero batches")
        first = batches[0]
        examples = [ex for b in batches for ex in b.examples]
        return cls(first.task, first.expert, first.weight, examples)


def _single(task: str, example: TaskExample, weight: float) -> TaskBatch:
    return TaskBatch(task=task, expert=TASK_EXPERTS[task], weight=weight, examples=[example])


def build_ti_batch(
    doc: Document,
    plan: MaskPlan,
    vocab: Vocab,
    image: np.ndarray,
    max_len: int = 512,
    weight: float = 1.0,
) -> TaskBatch:
    """Each span becomes one <mask>; target = span texts joined by <sep>, then <eos>"""
    source = build_text_input(
        vocab, INSTRUCTIONS["ti"], doc.tokens, max_len=max_len, mask_spans=plan.spans
    )
    target: list[int] = []
    for n, (start, length) in enumerate(plan.spans):
        if n:
            target.append(SEP)
        target.extend(vocab.encode_text(" ".join(doc.words[start:start + length])))
    target.append(EOS)
    return _single("ti", TaskExample("ti", source, image, target, target), weight)


def build_itp_batch(
    doc: Document,
    grid: ImageTokenGrid,
    vocab: Vocab,
    image: np.ndarray,
    rng: np.random.Generator,
    model_grid: int,
    ratio: float = 0.5,
    masked_only: bool = False,
    max_len: int = 512,
    weight: float = 1.0,
) -> TaskBatch:
    """
    floor(ratio · h · w) random patches get the learned mask embedding; the target is
    the full visual-token grid in raster order, then <eos>.

    Raises:
        InputValidationError: token grid does not match the backbone patch grid
    """
    if (grid.h, grid.w) != (model_grid, model_grid):
        raise InputValidationError(
            f"visual token grid {grid.h}x{grid.w} does not match patch grid {model_grid}x{model_grid}"
        )
    cells = grid.h * grid.w
    count = int(np.floor(ratio * cells))
    patch_mask = np.zeros(cells, dtype=bool)
    patch_mask[rng.choice(cells, size=count, replace=False)] = True
    target = [vocab.visual_token(int(code)) for code in grid.tokens] + [EOS]
    loss_view = np.array(target, dtype=np.int64)
    if masked_only:
        loss_view[:cells][~patch_mask] = IGNORE_INDEX
    source = build_text_input(vocab, INSTRUCTIONS["itp"], doc.tokens, max_len=max_len)
    return _single("itp", TaskExample("itp", source, image, target, loss_view, patch_mask), weight)


def span_union(doc: Document, start: int, length: int) -> BBox:
    return BBox.union([t.box for t in doc.tokens[start:start + length]])


def build_cp_batch(
    doc: Document,
    plan: MaskPlan,
    vocab: Vocab,
    image: np.ndarray,
    max_len: int = 512,
    weight: float = 1.0,
) -> TaskBatch:
    """Span words keep their ids but get the padding layout; target = union boxes as layout tokens"""
    source = build_text_input(
        vocab, INSTRUCTIONS["cp"], doc.tokens, max_len=max_len, hide_layout_spans=plan.spans
    )
    target: list[int] = []
    for n, (start, length) in enumerate(plan.spans):
        if n:
            target.append(SEP)
        target.extend(quantize_box(span_union(doc, start, length), vocab))
    target.append(EOS)
    return _single("cp", TaskExample("cp", source, image, target, target), weight)
