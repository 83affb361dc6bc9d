"""Deterministic synthetic documents: glyph-block pages with OCR words, QA pairs, layout objects, BIO tags and a class"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from ..config import CorpusSpec
from ..entities import BBox, DetectionObject, Document, OcrToken, QAPair
from ..errors import ConfigError
from ..observability import get_logger
from .render import LINE_HEIGHT, blank_page, draw_figure, draw_word, word_width

logger = get_logger("data.synthetic")

ARCHETYPES = ("letter", "form", "table", "receipt")
MIN_PAGE = 96
MARGIN = 8
WORD_GAP = 4
LINE_STEP = LINE_HEIGHT + 3
BLOCK_GAP = 6
KEYS = 10


class PageFull(Exception):
    """No room left below the cursor"""


def word_pool(spec: CorpusSpec) -> list[str]:
    """`word_pool` distinct lowercase words of 2-5 letters, a pure function of the seed"""
    rng = np.random.default_rng([spec.seed, 0x5EED])
    letters = np.array(list(string.ascii_lowercase))
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < spec.word_pool:
        word = "".join(rng.choice(letters, size=int(rng.integers(2, 6))))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


@dataclass
class _Placed:
    word: str
    box: tuple[int, int, int, int]
    tag: str = "O"


@dataclass
class PageBuilder:
    """Left-to-right, top-to-bottom word placement on one page"""
    size: int
    page: np.ndarray = field(init=False)
    y: int = MARGIN
    placed: list[_Placed] = field(default_factory=list)
    objects: list[DetectionObject] = field(default_factory=list)
    _pending: Optional[tuple[str, int]] = None

    def __post_init__(self):
        self.page = blank_page(self.size)

    @property
    def right(self) -> int:
        return self.size - MARGIN

    def _room(self, height: int) -> None:
        if self.y + height > self.size - MARGIN:
            raise PageFull()

    def words(self, words: list[str], tags: Optional[list[str]] = None, x0: int = MARGIN) -> list[_Placed]:
        """Place words with wrapping; raises PageFull before drawing a word that does not fit"""
        tags = tags or ["O"] * len(words)
        x = x0
        self._room(LINE_HEIGHT)
        out = []
        for word, tag in zip(words, tags):
            w = word_width(word)
            if x + w > self.right and x > x0:
                self.y += LINE_STEP
                x = x0
                self._room(LINE_HEIGHT)
            item = _Placed(word, draw_word(self.page, word, x, self.y), tag)
            out.append(item)
            self.placed.append(item)
            x += w + WORD_GAP
        self.y += LINE_STEP
        return out

    def cell(self, word: str, x: int, tag: str = "O") -> _Placed:
        """One word at column x on the current line (the caller advances the line)"""
        self._room(LINE_HEIGHT)
        item = _Placed(word, draw_word(self.page, word, x, self.y), tag)
        self.placed.append(item)
        return item

    def newline(self) -> None:
        self.y += LINE_STEP

    def begin(self, label: str) -> None:
        """Start collecting placed words into a layout object of class `label`"""
        self._pending = (label, len(self.placed))

    def end(self) -> None:
        """Close the open object (also after PageFull, keeping the words already drawn)"""
        if self._pending is None:
            return
        label, start = self._pending
        self._pending = None
        items = self.placed[start:]
        if not items:
            return
        x1 = min(i.box[0] for i in items)
        y1 = min(i.box[1] for i in items)
        x2 = max(i.box[2] for i in items)
        y2 = max(i.box[3] for i in items)
        self.objects.append(DetectionObject(BBox.from_pixels([x1, y1, x2, y2], self.size, self.size), label))
        self.y += BLOCK_GAP

    def figure(self, height: int) -> None:
        self._room(height)
        x1, y1 = self.size // 2, self.y
        x2, y2 = self.right, self.y + height
        draw_figure(self.page, x1, y1, x2, y2)
        self.objects.append(DetectionObject(BBox.from_pixels([x1, y1, x2, y2], self.size, self.size), "figure"))
        self.y = y2 + BLOCK_GAP


def _price(rng: np.random.Generator) -> str:
    return f"{int(rng.integers(1, 100))}.{int(rng.integers(0, 100)):02d}"


def _paragraphs(pb: PageBuilder, rng, pool: list[str], budget: int) -> None:
    """Text blocks of 8-30 words until `budget` words are placed or the page is full"""
    while budget > 0:
        count = min(budget, int(rng.integers(8, 31)))
        pb.begin("text")
        pb.words([pool[i] for i in rng.integers(len(pool), size=count)])
        pb.end()
        budget -= count


def _table(pb: PageBuilder, rows: int, pick) -> None:
    width = (pb.right - MARGIN) // 3
    pb.begin("table")
    for _ in range(rows):
        for c in range(3):
            pb.cell(pick(1)[0], MARGIN + c * width)
        pb.newline()
    pb.end()


def _receipt(pb: PageBuilder, rng, pick) -> None:
    """Item lines (1-2 name words, price) and a total line, BIO-tagged"""
    price_x = pb.right - word_width("00.00")
    pb.begin("list")
    for _ in range(int(rng.integers(3, 7))):
        name = pick(int(rng.integers(1, 3)))
        tags = ["B-item"] + ["I-item"] * (len(name) - 1)
        for n, (word, tag) in enumerate(zip(name, tags)):
            pb.cell(word, MARGIN + n * (word_width("wwwww") + WORD_GAP), tag)
        pb.cell(_price(rng), price_x, "B-price")
        pb.newline()
    pb.cell("total", MARGIN)
    pb.cell(_price(rng), price_x, "B-total")
    pb.newline()
    pb.end()


def generate_document(spec: CorpusSpec, index: int, pool: Optional[list[str]] = None) -> Document:
    """
    Document `index` of the corpus; a pure function of (spec, index).

    Raises:
        ConfigError: page too small for the layout, or an unknown archetype
    """
    if spec.page_size < MIN_PAGE:
        raise ConfigError(f"page_size {spec.page_size} is too small for the layout (min {MIN_PAGE})")
    pool = pool or word_pool(spec)
    rng = np.random.default_rng([spec.seed, index])
    class_id = index % len(spec.archetypes)
    archetype = spec.archetypes[class_id]
    if archetype not in ARCHETYPES:
        raise ConfigError(f"unknown archetype {archetype!r}; expected one of {ARCHETYPES}")
    target = int(rng.integers(spec.words_min, spec.words_max + 1))
    pb = PageBuilder(spec.page_size)

    def pick(n: int) -> list[str]:
        return [pool[i] for i in rng.integers(len(pool), size=n)]

    qa = []
    try:
        pb.begin("title")
        pb.words(pick(int(rng.integers(1, 4))))
        pb.end()
        pb.begin("list")
        for k in rng.choice(KEYS, size=min(spec.qa_pairs, KEYS), replace=False):
            key, value = f"k{int(k)}", pick(1)[0]
            pb.words([key, value])
            qa.append(QAPair(question=f"value of key {key}?", answers=[value]))
        pb.end()
    except PageFull:
        raise ConfigError(
            f"page_size {spec.page_size} leaves no room for the title and key-value block"
        ) from None

    try:
        if archetype == "table":
            _table(pb, int(rng.integers(3, 7)), pick)
        elif archetype == "receipt":
            _receipt(pb, rng, pick)
        elif archetype == "form":
            pb.figure(height=min(40, spec.page_size // 6))
        _paragraphs(pb, rng, pool, target - len(pb.placed))
        if archetype == "letter":
            pb.figure(height=min(32, spec.page_size // 8))
    except PageFull:
        pb.end()
        logger.debug(f"document {index}: page full after {len(pb.placed)} words")

    size = spec.page_size
    tokens = [OcrToken(p.word, BBox.from_pixels(list(p.box), size, size)) for p in pb.placed]
    return Document(
        doc_id=f"doc-{index:05d}",
        image=pb.page,
        tokens=tokens,
        qa=qa,
        objects=pb.objects,
        tags=[p.tag for p in pb.placed],
        class_id=class_id,
    )


def generate_corpus(spec: CorpusSpec) -> Iterator[Document]:
    """All `spec.documents` documents in index order"""
    pool = word_pool(spec)
    for index in range(spec.documents):
        yield generate_document(spec, index, pool)
