"""Glyph-block rendering and PGM page I/O"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError

GLYPH_ROWS, GLYPH_COLS = 7, 5
CHAR_WIDTH = 4
LINE_HEIGHT = 9
PAPER, INK = 255, 0


def glyph_pattern(word: str) -> np.ndarray:
    """Hash-derived 7 × 5 bit pattern; distinct words get distinct patterns with overwhelming odds"""
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    bits = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))[: GLYPH_ROWS * GLYPH_COLS]
    pattern = bits.reshape(GLYPH_ROWS, GLYPH_COLS).astype(bool)
    if not pattern.any():
        pattern[GLYPH_ROWS // 2, GLYPH_COLS // 2] = True
    return pattern


def word_width(word: str) -> int:
    return len(word) * CHAR_WIDTH + 2


def blank_page(size: int) -> np.ndarray:
    return np.full((size, size), PAPER, dtype=np.uint8)


def draw_word(page: np.ndarray, word: str, x: int, y: int) -> tuple[int, int, int, int]:
    """
    Draw a framed glyph block with its top-left corner at (x, y); returns the pixel box
    (x1, y1, x2, y2) with exclusive right/bottom edges. The 1-px frame makes the ink
    bounding box equal the word box.
    """
    w, h = word_width(word), LINE_HEIGHT
    x2, y2 = x + w, y + h
    page[y, x:x2] = INK
    page[y2 - 1, x:x2] = INK
    page[y:y2, x] = INK
    page[y:y2, x2 - 1] = INK
    inner_h, inner_w = h - 2, w - 2
    pattern = glyph_pattern(word)
    rows = np.arange(inner_h) * GLYPH_ROWS // inner_h
    cols = np.arange(inner_w) * GLYPH_COLS // inner_w
    block = pattern[np.ix_(rows, cols)]
    region = page[y + 1:y2 - 1, x + 1:x2 - 1]
    region[block] = INK
    return x, y, x2, y2


def draw_figure(page: np.ndarray, x1: int, y1: int, x2: int, y2: int) -> None:
    """Framed rectangle with diagonal hatching"""
    page[y1, x1:x2] = INK
    page[y2 - 1, x1:x2] = INK
    page[y1:y2, x1] = INK
    page[y1:y2, x2 - 1] = INK
    yy, xx = np.mgrid[y1:y2, x1:x2]
    page[y1:y2, x1:x2][(xx + yy) % 6 == 0] = INK


def save_pgm(page: np.ndarray, path: Path) -> None:
    """Binary (P5) PGM"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(page, dtype=np.uint8)).save(path, format="PPM")


def load_pgm(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read page image {path}: {e}") from e
