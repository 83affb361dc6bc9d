"""Encoder input assembly: text stream, backbone patches, 1-d positions and 2-d layout"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .entities import BBox, OcrToken, TokenSeq
from .errors import InputValidationError
from .model.encoder import encoder_forward
from .model.params import LAYOUT_FIELDS, ModelParams
from .numerics import Tensor, concat, conv2d, where
from .vocab import BOS, MASK, SEP, Vocab

INSTRUCTIONS = {
    "ti": "What is the complete text for <mask> tokens?",
    "itp": "What are the values for masked image tokens?",
    "cp": "What are the coordinates of the masked spans?",
    "qa": "What is the answer to the question?",
    "classify": "What is the category of the document?",
    "ner": "What are the entity tags of the words?",
    "detect": "What are the layout objects of the document?",
}

TEXT, VISUAL = 0, 1


@dataclass
class EncoderInput:
    """
    Embedded encoder sequence: text positions first, then h·w visual positions.

    x_bins / y_bins are the layout-bin indices of each position's box center
    (padding layout → 0); `mask` is True where a position may be attended to.
    """
    embeddings: Tensor
    x_bins: np.ndarray
    y_bins: np.ndarray
    modality: np.ndarray
    mask: np.ndarray
    text_len: int

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    def __post_init__(self):
        n = self.embeddings.shape[0]
        if not (len(self.x_bins) == len(self.y_bins) == len(self.modality) == len(self.mask) == n):
            raise InputValidationError("encoder input arrays differ in length")


# ============ Layout binning ============

def bin_value(v: float, bins: int) -> int:
    """round(v · (B−1)) with halves away from zero, clamped to [0, B−1]"""
    q = math.floor(v * (bins - 1) + 0.5)
    return min(bins - 1, max(0, q))


def bin_box(box: Optional[BBox], bins: int) -> tuple[int, int, int, int, int, int]:
    """Six bin indices (x1, y1, x2, y2, width, height); None → the padding row B"""
    if box is None:
        return (bins,) * 6
    return (
        bin_value(box.x1, bins),
        bin_value(box.y1, bins),
        bin_value(box.x2, bins),
        bin_value(box.y2, bins),
        bin_value(box.width, bins),
        bin_value(box.height, bins),
    )


def center_bins(box: Optional[BBox], bins: int) -> tuple[int, int]:
    if box is None:
        return 0, 0
    cx, cy = box.center
    return bin_value(cx, bins), bin_value(cy, bins)


def embed_layout(bins: np.ndarray, params: ModelParams) -> Tensor:
    """Sum of the six layout-table rows selected by an n × 6 bin array"""
    bins = np.asarray(bins, dtype=np.int64).reshape(-1, 6)
    out = None
    for k, name in enumerate(LAYOUT_FIELDS):
        rows = params[f"embed.layout.{name}"][bins[:, k]]
        out = rows if out is None else out + rows
    return out


def patch_boxes(h: int, w: int) -> list[BBox]:
    """Raster-order patch regions (c/w, r/h, (c+1)/w, (r+1)/h)"""
    return [BBox(c / w, r / h, (c + 1) / w, (r + 1) / h) for r in range(h) for c in range(w)]


# ============ Image side ============

def prepare_image(raster: np.ndarray, size: int) -> np.ndarray:
    """Grayscale raster (uint8 0-255 or float 0-1) → size × size float32 in [0, 1]"""
    arr = np.asarray(raster)
    if arr.ndim != 2:
        raise InputValidationError(f"expected a 2-d grayscale raster, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    arr = arr.astype(np.float32)
    if arr.shape == (size, size):
        return arr
    resized = Image.fromarray(arr).resize((size, size), Image.Resampling.BILINEAR)
    return np.clip(np.asarray(resized, dtype=np.float32), 0.0, 1.0)


def patchify(image: np.ndarray, params: ModelParams) -> Tensor:
    """
    Backbone features for a prepared image: three k3/s2/p1 convolutions
    (1 → c1 → c2 → d_model) give an (H/8)·(W/8) × d_model matrix in raster order.

    Raises:
        InputValidationError: image is not image_size × image_size
    """
    size = params.config.image_size
    arr = np.asarray(image)
    if arr.shape != (size, size):
        raise InputValidationError(f"backbone expects a {size}x{size} image, got {arr.shape}")
    x = Tensor(arr.reshape(1, size, size))
    for i in (1, 2, 3):
        x = conv2d(x, params[f"backbone.conv{i}.weight"], params[f"backbone.conv{i}.bias"],
                   stride=2, padding=1)
        if i < 3:
            x = x.gelu()
    d, h, w = x.shape
    return x.transpose(1, 2, 0).reshape(h * w, d)


# ============ Text side ============

def _span_lookup(spans: Optional[Sequence[tuple[int, int]]]) -> dict[int, int]:
    """word index → index of the span covering it"""
    lookup: dict[int, int] = {}
    for n, (start, length) in enumerate(spans or ()):
        for i in range(start, start + length):
            lookup[i] = n
    return lookup


def build_text_input(
    vocab: Vocab,
    instruction: str,
    words: Sequence[OcrToken] = (),
    question: Optional[str] = None,
    max_len: int = 512,
    doc_len: Optional[int] = None,
    mask_spans: Optional[Sequence[tuple[int, int]]] = None,
    hide_layout_spans: Optional[Sequence[tuple[int, int]]] = None,
) -> TokenSeq:
    """
    [bos] instruction [sep] (question [sep]) ocr-words, one id per character.

    Instruction, question and separators carry the padding layout; each word's ids
    carry its box, the space between words carries the padding layout. The OCR part
    is cut at `doc_len` ids and the whole stream at `max_len`.

    Word spans (start, length) in `mask_spans` collapse to one <mask> id with the
    padding layout; words in `hide_layout_spans` keep their ids but lose their box.

    Raises:
        InputValidationError: an OCR word without a box
    """
    seq = TokenSeq()
    seq.append(BOS)
    seq.extend(vocab.encode_text(instruction))
    seq.append(SEP)
    if question is not None:
        seq.extend(vocab.encode_text(question))
        seq.append(SEP)
    budget = max_len - len(seq)
    if doc_len is not None:
        budget = min(budget, doc_len)
    if budget < 0:
        raise InputValidationError(f"instruction and question exceed the {max_len}-token limit")
    masked = _span_lookup(mask_spans)
    hidden = _span_lookup(hide_layout_spans)
    mask_starts = {start for start, _ in mask_spans or ()}
    space = vocab.encode_text(" ") if len(words) > 1 else []
    used = 0
    for n, word in enumerate(words):
        if not isinstance(word.box, BBox):
            raise InputValidationError(f"OCR token {n} ({word.text!r}) has no bounding box")
        if n in masked and n not in mask_starts:
            seq.word_starts.append(-1)
            continue
        if n > 0 and used < budget:
            seq.extend(space)
            used += len(space)
        ids = [MASK] if n in masked else vocab.encode_text(word.text)
        if used >= budget or not ids:
            seq.word_starts.append(-1)
            continue
        seq.word_starts.append(len(seq))
        take = ids[: budget - used]
        box = None if (n in masked or n in hidden) else word.box
        seq.extend(take, box)
        used += len(take)
    return seq


def visible_word_count(
    vocab: Vocab,
    instruction: str,
    words: Sequence[OcrToken],
    max_len: int,
    question: Optional[str] = None,
    doc_len: Optional[int] = None,
) -> int:
    """Number of leading words that survive truncation whole"""
    fixed = 2 + len(vocab.encode_text(instruction))
    if question is not None:
        fixed += len(vocab.encode_text(question)) + 1
    budget = max_len - fixed
    if doc_len is not None:
        budget = min(budget, doc_len)
    used, count = 0, 0
    for n, word in enumerate(words):
        cost = len(vocab.encode_text(word.text)) + (1 if n > 0 else 0)
        if used + cost > budget:
            break
        used += cost
        count += 1
    return count


# ============ Assembly ============

def assemble(
    text: TokenSeq,
    image: np.ndarray,
    params: ModelParams,
    patch_mask: Optional[np.ndarray] = None,
    features: Optional[Tensor] = None,
) -> EncoderInput:
    """
    Text positions: token + text-1d + layout embeddings. Visual positions: patch
    feature (or the learned mask embedding where `patch_mask`) + visual-1d + patch
    layout embeddings.
    """
    config = params.config
    B = params.layout_bins
    if len(text) > config.max_text_positions:
        raise InputValidationError(
            f"text stream of {len(text)} exceeds {config.max_text_positions} positions"
        )
    if features is None:
        features = patchify(image, params)
    n_patch = features.shape[0]
    grid = int(round(math.sqrt(n_patch)))

    if patch_mask is not None:
        patch_mask = np.asarray(patch_mask, dtype=bool).reshape(-1, 1)
        features = where(patch_mask, params["embed.visual_mask"], features)

    ids = np.asarray(text.ids, dtype=np.int64)
    text_bins = np.array([bin_box(b, B) for b in text.boxes], dtype=np.int64).reshape(-1, 6)
    pboxes = patch_boxes(grid, grid)
    visual_bins = np.array([bin_box(b, B) for b in pboxes], dtype=np.int64)

    parts = []
    if len(text):
        text_emb = (
            params["embed.tokens"][ids]
            + params["embed.text_pos"][np.asarray(text.positions, dtype=np.int64)]
            + embed_layout(text_bins, params)
        )
        parts.append(text_emb)
    visual_emb = (
        features
        + params["embed.visual_pos"][np.arange(n_patch)]
        + embed_layout(visual_bins, params)
    )
    parts.append(visual_emb)

    centers = [center_bins(b, B) for b in text.boxes] + [center_bins(b, B) for b in pboxes]
    centers_arr = np.array(centers, dtype=np.int64).reshape(-1, 2)
    modality = np.concatenate([np.full(len(text), TEXT), np.full(n_patch, VISUAL)])
    return EncoderInput(
        embeddings=concat(parts, axis=0) if len(parts) > 1 else parts[0],
        x_bins=centers_arr[:, 0],
        y_bins=centers_arr[:, 1],
        modality=modality.astype(np.int64),
        mask=np.ones(len(text) + n_patch, dtype=bool),
        text_len=len(text),
    )


def encode(
    text: TokenSeq,
    image: np.ndarray,
    params: ModelParams,
    patch_mask: Optional[np.ndarray] = None,
) -> tuple[Tensor, EncoderInput]:
    """Assemble and run the encoder; returns (memory, assembled input)"""
    encoded = assemble(text, image, params, patch_mask=patch_mask)
    return encoder_forward(encoded, params), encoded
