"""Layout detection as sequence generation: box quantization, noise padding and slot-masked decoding"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from ..entities import BBox, DetectionObject, Document
from ..errors import DecodeError, InputValidationError, VocabError
from ..inputs import INSTRUCTIONS, bin_value, build_text_input, encode, prepare_image
from ..model import ModelParams, decoder_forward
from ..numerics import IGNORE_INDEX, Tensor, cross_entropy, no_grad
from ..observability import get_logger, track_latency
from ..vocab import BOS, NOISE_CLASS, Vocab
from .decoding import masked_log_softmax

logger = get_logger("detection")

DETECTION_EXPERT = "layout"
SLOTS = 5
NOISE_SCALE = (0.8, 1.2)
NOISE_SHIFT = 0.1


# ============ Coordinate tokens ============

def quantize_box(box: BBox, vocab: Vocab) -> list[int]:
    """Four layout tokens, q = round(v · (B−1)) per coordinate"""
    bins = vocab.layout_bins
    return [vocab.layout_token(bin_value(v, bins)) for v in box.as_list()]


def dequantize_box(tokens: Sequence[int], vocab: Vocab) -> BBox:
    """
    Inverse of quantize_box: v = q / (B−1).

    Raises:
        DecodeError: wrong token count or a token outside the layout block
    """
    if len(tokens) != 4:
        raise DecodeError(f"a box needs 4 layout tokens, got {len(tokens)}", block="layout")
    scale = vocab.layout_bins - 1
    coords = []
    for token in tokens:
        try:
            coords.append(vocab.layout_bin(int(token)) / scale)
        except VocabError as e:
            raise DecodeError(f"coordinate slot holds {vocab.token_name(int(token))}", block=e.block) from e
    return BBox.clamped(*coords)


# ============ Training targets ============

@dataclass
class DetectionTarget:
    """`target_ids` feed the decoder; `targets` is the loss view with noise coordinates ignored"""
    target_ids: list[int]
    targets: np.ndarray

    @property
    def decoder_input(self) -> list[int]:
        return [BOS] + self.target_ids[:-1]


def noise_box(rng: np.random.Generator, base: Optional[BBox] = None) -> BBox:
    """Scaled and shifted copy of `base` (or a random box), clamped to the page"""
    if base is None:
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        w, h = rng.uniform(0.05, 0.3, size=2)
    else:
        cx, cy = base.center
        sx, sy = rng.uniform(*NOISE_SCALE, size=2)
        w, h = base.width * sx, base.height * sy
        dx, dy = rng.uniform(-NOISE_SHIFT, NOISE_SHIFT, size=2)
        cx, cy = cx + dx, cy + dy
    return BBox.clamped(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def make_detection_sequence(
    objects: Sequence[DetectionObject],
    vocab: Vocab,
    rng: np.random.Generator,
    max_objs: int = 60,
) -> DetectionTarget:
    """
    Serialize objects as [x1, y1, x2, y2, class] groups sorted by (y1, x1), then pad
    with noise objects up to max_objs. Noise coordinates are excluded from the loss;
    their noise-class token is kept.

    Raises:
        InputValidationError: more objects than max_objs
    """
    if len(objects) > max_objs:
        raise InputValidationError(f"{len(objects)} objects exceed the {max_objs}-object limit")
    real = []
    for obj in objects:
        if obj.box.area <= 0:
            logger.warning(f"skipping zero-area {obj.label} box {obj.box.as_list()}")
            continue
        real.append(obj)
    real.sort(key=lambda o: (o.box.y1, o.box.x1))

    ids: list[int] = []
    loss_view: list[int] = []
    for obj in real:
        group = quantize_box(obj.box, vocab) + [vocab.class_token(obj.label)]
        ids.extend(group)
        loss_view.extend(group)
    for _ in range(max_objs - len(real)):
        base = real[int(rng.integers(len(real)))].box if real else None
        group = quantize_box(noise_box(rng, base), vocab) + [vocab.noise_token]
        ids.extend(group)
        loss_view.extend([IGNORE_INDEX] * 4 + [vocab.noise_token])
    return DetectionTarget(ids, np.array(loss_view, dtype=np.int64))


def random_resize_crop(
    image: np.ndarray,
    objects: Sequence[DetectionObject],
    rng: np.random.Generator,
    min_area: float = 0.8,
) -> tuple[np.ndarray, list[DetectionObject]]:
    """Crop a square window keeping [min_area, 1] of the page, resize back and move the boxes"""
    size = image.shape[0]
    side = float(np.sqrt(rng.uniform(min_area, 1.0)))
    ox, oy = rng.uniform(0.0, 1.0 - side, size=2)
    left, top = int(round(ox * size)), int(round(oy * size))
    span = max(1, int(round(side * size)))
    window = np.ascontiguousarray(image[top:top + span, left:left + span], dtype=np.float32)
    resized = Image.fromarray(window).resize((size, size), Image.Resampling.BILINEAR)
    out = np.clip(np.asarray(resized, dtype=np.float32), 0.0, 1.0)

    fx, fy, scale = left / size, top / size, span / size
    moved = []
    for obj in objects:
        b = obj.box
        box = BBox.clamped((b.x1 - fx) / scale, (b.y1 - fy) / scale,
                           (b.x2 - fx) / scale, (b.y2 - fy) / scale)
        if box.area > 0:
            moved.append(DetectionObject(box, obj.label, obj.score))
    return out, moved


# ============ Model side ============

def detection_source(vocab: Vocab):
    """Instruction only; the page reaches the encoder through its patches"""
    return build_text_input(vocab, INSTRUCTIONS["detect"])


def detection_loss(
    image: np.ndarray,
    target: DetectionTarget,
    vocab: Vocab,
    params: ModelParams,
    smoothing: float = 0.0,
) -> Tensor:
    memory, encoded = encode(detection_source(vocab), image, params)
    logits = decoder_forward(target.decoder_input, memory, DETECTION_EXPERT, params,
                             memory_mask=encoded.mask)
    return cross_entropy(logits, target.targets, smoothing=smoothing)


def slot_masks(vocab: Vocab) -> tuple[np.ndarray, np.ndarray]:
    """(coordinate-slot legal ids, class-slot legal ids)"""
    return vocab.block_mask("layout"), vocab.block_mask("class")


def parse_detections(
    tokens: Sequence[int], vocab: Vocab, scores: Optional[Sequence[float]] = None
) -> list[DetectionObject]:
    """
    Groups of five tokens to objects. A short tail group is dropped with a warning;
    noise-class groups are dropped silently.

    Raises:
        DecodeError: a group holds a token outside its slot's block
    """
    groups = len(tokens) // SLOTS
    if len(tokens) % SLOTS:
        logger.warning(f"dropping malformed tail of {len(tokens) % SLOTS} detection tokens")
    found = []
    for g in range(groups):
        group = tokens[g * SLOTS:(g + 1) * SLOTS]
        box = dequantize_box(group[:4], vocab)
        try:
            label = vocab.class_name(int(group[4]))
        except VocabError as e:
            raise DecodeError(f"class slot holds {vocab.token_name(int(group[4]))}", block=e.block) from e
        if label == NOISE_CLASS:
            continue
        score = float(scores[g]) if scores is not None else 1.0
        found.append(DetectionObject(box, label, score))
    return found


@track_latency("decode")
def decode_detections(
    image: np.ndarray,
    params: ModelParams,
    vocab: Vocab,
    max_objs: int = 60,
    stop_at_noise: bool = True,
) -> tuple[list[int], list[float]]:
    """
    Greedy slot-masked decoding of up to max_objs groups; returns the tokens and the
    class-token probability of each group. With `stop_at_noise` decoding ends after
    the first noise-class group, since training sequences put all noise last.

    Raises:
        DecodeError: a decoded token is illegal for its slot
    """
    coord_legal, class_legal = slot_masks(vocab)
    tokens: list[int] = []
    scores: list[float] = []
    with no_grad():
        memory, encoded = encode(detection_source(vocab), image, params)
        for t in range(max_objs * SLOTS):
            slot = t % SLOTS
            legal = class_legal if slot == SLOTS - 1 else coord_legal
            logits = decoder_forward([BOS] + tokens, memory, DETECTION_EXPERT, params,
                                     memory_mask=encoded.mask)
            row = masked_log_softmax(logits.data[-1], legal)
            token = int(np.argmax(row))
            if not legal[token]:
                raise DecodeError(f"slot {slot} decoded illegal {vocab.token_name(token)}",
                                  block=vocab.block_of(token))
            tokens.append(token)
            if slot == SLOTS - 1:
                scores.append(float(np.exp(row[token])))
                if stop_at_noise and token == vocab.noise_token:
                    break
    return tokens, scores


def detect(
    image: np.ndarray,
    params: ModelParams,
    vocab: Vocab,
    max_objs: int = 60,
) -> list[DetectionObject]:
    """Detected layout objects for a raw page raster (noise class removed)"""
    prepared = prepare_image(image, params.config.image_size)
    tokens, scores = decode_detections(prepared, params, vocab, max_objs)
    return parse_detections(tokens, vocab, scores)


def detection_record(doc: Document, objects: Sequence[DetectionObject]) -> dict:
    return {
        "doc_id": doc.doc_id,
        "objects": [
            {"box": o.box.as_list(), "label": o.label, "score": o.score} for o in objects
        ],
    }
