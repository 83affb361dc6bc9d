"""Domain entities - documents, boxes, token sequences and predictions"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputValidationError
from .observability import get_logger

logger = get_logger("entities")


@dataclass(frozen=True)
class BBox:
    """Normalized box (x1, y1, x2, y2) in [0, 1]"""
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(0.0 <= c <= 1.0 for c in coords):
            raise InputValidationError(f"box coordinates outside [0, 1]: {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise InputValidationError(f"box corners out of order: {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def clamped(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        """Clamp into [0, 1] and reorder corners"""
        xs = sorted(min(1.0, max(0.0, float(v))) for v in (x1, x2))
        ys = sorted(min(1.0, max(0.0, float(v))) for v in (y1, y2))
        return cls(xs[0], ys[0], xs[1], ys[1])

    @classmethod
    def from_pixels(cls, box: list[float], width: float, height: float) -> "BBox":
        x1, y1, x2, y2 = box
        return cls(x1 / width, y1 / height, x2 / width, y2 / height)

    @staticmethod
    def union(boxes: list["BBox"]) -> "BBox":
        if not boxes:
            raise InputValidationError("union of zero boxes")
        return BBox(
            min(b.x1 for b in boxes),
            min(b.y1 for b in boxes),
            max(b.x2 for b in boxes),
            max(b.y2 for b in boxes),
        )


@dataclass
class OcrToken:
    """One OCR word with its normalized box"""
    text: str
    box: BBox


@dataclass
class QAPair:
    question: str
    answers: list[str]


@dataclass
class DetectionObject:
    """Layout block; `label` is the class name (e.g. "table")"""
    box: BBox
    label: str
    score: float = 1.0


@dataclass(frozen=True)
class EntitySpan:
    """Entity over OCR word indices start..end (inclusive)"""
    label: str
    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end or self.start < 0:
            raise InputValidationError(f"invalid entity span {self.start}..{self.end}")


OUTSIDE = "O"


def bio_decode(tags: Sequence[str]) -> list[EntitySpan]:
    """
    Contiguous B/I runs to spans. An I- tag that does not continue a run of the same
    label starts a new span (logged).
    """
    spans: list[EntitySpan] = []
    label, start = None, 0
    for i, tag in enumerate(tags):
        prefix, _, name = tag.partition("-")
        if tag == OUTSIDE or prefix not in ("B", "I") or not name:
            if label is not None:
                spans.append(EntitySpan(label, start, i - 1))
            label = None
            continue
        if prefix == "I" and label == name:
            continue
        if prefix == "I":
            logger.warning(f"orphan tag {tag} at word {i} starts a new span")
        if label is not None:
            spans.append(EntitySpan(label, start, i - 1))
        label, start = name, i
    if label is not None:
        spans.append(EntitySpan(label, start, len(tags) - 1))
    return spans


@dataclass
class Document:
    """One training / evaluation unit: grayscale page, OCR words and optional labels"""
    doc_id: str
    image: np.ndarray
    tokens: list[OcrToken] = field(default_factory=list)
    qa: list[QAPair] = field(default_factory=list)
    objects: list[DetectionObject] = field(default_factory=list)
    tags: Optional[list[str]] = None
    class_id: Optional[int] = None

    @property
    def words(self) -> list[str]:
        return [t.text for t in self.tokens]

    @property
    def text(self) -> str:
        return " ".join(self.words)

    def spans(self) -> list[EntitySpan]:
        return bio_decode(self.tags or [])


@dataclass
class TokenSeq:
    """Encoder text stream: ids with 1-d positions and a box per id (None = padding layout)"""
    ids: list[int] = field(default_factory=list)
    positions: list[int] = field(default_factory=list)
    boxes: list[Optional[BBox]] = field(default_factory=list)
    # position of the first id of each OCR word (-1 when truncated away)
    word_starts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.ids) == len(self.positions) == len(self.boxes)):
            raise InputValidationError(
                f"TokenSeq lists differ in length: {len(self.ids)}, {len(self.positions)}, "
                f"{len(self.boxes)}"
            )

    def __len__(self) -> int:
        return len(self.ids)

    def append(self, token_id: int, box: Optional[BBox] = None) -> None:
        self.ids.append(int(token_id))
        self.positions.append(len(self.positions))
        self.boxes.append(box)

    def extend(self, token_ids: list[int], box: Optional[BBox] = None) -> None:
        for t in token_ids:
            self.append(t, box)
