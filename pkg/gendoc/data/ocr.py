"""OCR JSON ingestion: pixel boxes normalized by page size, invalid tokens dropped"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from ..entities import BBox, Document, OcrToken
from ..errors import DataError, InputValidationError
from ..observability import get_logger
from .render import PAPER, load_pgm

logger = get_logger("data.ocr")


class OcrTokenIn(BaseModel):
    text: str
    box: list[float] = Field(min_length=4, max_length=4)


class OcrFile(BaseModel):
    """{"width": px, "height": px, "tokens": [{"text": str, "box": [x1, y1, x2, y2]}]}"""
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    tokens: list[OcrTokenIn] = Field(default_factory=list)


def read_json(path: Path) -> object:
    """
    Raises:
        DataError: unreadable file or malformed JSON (with line and column)
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"malformed JSON in {path}: {e.msg}", line=e.lineno, column=e.colno) from e


def normalize_tokens(page: OcrFile, source: str = "") -> list[OcrToken]:
    """Pixel boxes to normalized ones; tokens with an empty text or an invalid box are dropped"""
    tokens = []
    for n, tok in enumerate(page.tokens):
        x1, y1, x2, y2 = tok.box
        if not tok.text.strip():
            logger.warning(f"{source}: dropping token {n} with empty text")
            continue
        if x1 > x2 or y1 > y2 or min(x1, y1) < 0 or x2 > page.width or y2 > page.height:
            logger.warning(f"{source}: dropping token {n} ({tok.text!r}) with invalid box {tok.box}")
            continue
        try:
            box = BBox.from_pixels([x1, y1, x2, y2], page.width, page.height)
        except InputValidationError as e:
            logger.warning(f"{source}: dropping token {n} ({tok.text!r}): {e}")
            continue
        tokens.append(OcrToken(tok.text, box))
    return tokens


def ingest_ocr(path: Path, image_path: Optional[Path] = None) -> Document:
    """
    One document from an OCR JSON file. The page image is read from `image_path`, or
    from a sibling .pgm of the same name; without one the page is blank.

    Raises:
        DataError: malformed JSON or a file that does not match the OCR schema
    """
    path = Path(path)
    raw = read_json(path)
    try:
        page = OcrFile.model_validate(raw)
    except ValidationError as e:
        raise DataError(f"{path} does not match the OCR schema: {e.errors()[0]['msg']}") from e

    image_path = Path(image_path) if image_path is not None else path.with_suffix(".pgm")
    if image_path.is_file():
        image = load_pgm(image_path)
        if image.shape != (page.height, page.width):
            raise DataError(
                f"{image_path} is {image.shape[1]}x{image.shape[0]} but {path} declares "
                f"{page.width}x{page.height}"
            )
    else:
        image = np.full((page.height, page.width), PAPER, dtype=np.uint8)
    return Document(doc_id=path.stem, image=image, tokens=normalize_tokens(page, str(path)))


def ingest_directory(directory: Path) -> list[Document]:
    """Every *.json in the directory, in filename order"""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return [ingest_ocr(p) for p in sorted(directory.glob("*.json"), key=lambda p: p.name)]


def ocr_payload(doc: Document) -> dict:
    """OCR JSON for a document, boxes back in (rounded) pixels"""
    h, w = doc.image.shape
    return {
        "width": int(w),
        "height": int(h),
        "tokens": [
            {
                "text": t.text,
                "box": [round(t.box.x1 * w), round(t.box.y1 * h), round(t.box.x2 * w), round(t.box.y2 * h)],
            }
            for t in doc.tokens
        ],
    }
