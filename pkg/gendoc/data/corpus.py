"""Corpus directory: PGM pages, OCR JSON, labels JSON and a split manifest"""

from __future__ import annotations

import hashlib
import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Iterator, Optional

from ..config import CorpusSpec, settings
from ..entities import BBox, DetectionObject, Document, QAPair
from ..errors import DataError, InputValidationError
from ..inputs import INSTRUCTIONS
from ..observability import get_logger
from .ocr import ingest_ocr, ocr_payload, read_json
from .render import save_pgm
from .synthetic import generate_document, word_pool

logger = get_logger("data.corpus")

MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")
SPLIT_SHARES = (0.8, 0.1)


def _dump(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n"


def split_assignment(seed: int, count: int) -> dict[str, list[int]]:
    """
    Rank document indices by sha256("seed:index"); the first 80% go to train, the
    next 10% to val, the rest to test. Each split lists indices in ascending order.
    """
    ranked = sorted(range(count), key=lambda i: hashlib.sha256(f"{seed}:{i}".encode()).hexdigest())
    n_train = int(count * SPLIT_SHARES[0] + 0.5)
    n_val = int(count * SPLIT_SHARES[1] + 0.5)
    parts = (ranked[:n_train], ranked[n_train:n_train + n_val], ranked[n_train + n_val:])
    return {name: sorted(part) for name, part in zip(SPLITS, parts)}


def labels_payload(doc: Document) -> dict:
    h, w = doc.image.shape
    return {
        "class_id": doc.class_id,
        "qa": [{"question": p.question, "answers": list(p.answers)} for p in doc.qa],
        "objects": [
            {
                "label": o.label,
                "box": [round(o.box.x1 * w), round(o.box.y1 * h), round(o.box.x2 * w), round(o.box.y2 * h)],
            }
            for o in doc.objects
        ],
        "tags": doc.tags,
    }


def attach_labels(doc: Document, payload: dict) -> Document:
    h, w = doc.image.shape
    try:
        doc.class_id = payload.get("class_id")
        doc.qa = [QAPair(p["question"], list(p["answers"])) for p in payload.get("qa", [])]
        doc.objects = [
            DetectionObject(BBox.from_pixels(o["box"], w, h), o["label"]) for o in payload.get("objects", [])
        ]
        doc.tags = payload.get("tags")
    except (KeyError, TypeError, ValueError, InputValidationError) as e:
        raise DataError(f"malformed labels for {doc.doc_id}: {e}") from e
    if doc.tags is not None and len(doc.tags) != len(doc.tokens):
        raise DataError(f"{doc.doc_id}: {len(doc.tags)} tags for {len(doc.tokens)} OCR tokens")
    return doc


def write_document(doc: Document, out: Path) -> None:
    save_pgm(doc.image, out / "images" / f"{doc.doc_id}.pgm")
    (out / "ocr" / f"{doc.doc_id}.json").write_text(_dump(ocr_payload(doc)), encoding="utf-8")
    (out / "labels" / f"{doc.doc_id}.json").write_text(_dump(labels_payload(doc)), encoding="utf-8")


def write_corpus(spec: CorpusSpec, out: Path, force: bool = False, threads: Optional[int] = None) -> dict:
    """
    Generate the corpus described by `spec` into `out` and return the manifest.

    Raises:
        DataError: `out` already holds a corpus and `force` is not set
    """
    out = Path(out)
    if (out / MANIFEST).exists() and not force:
        raise DataError(f"{out} already holds a corpus; pass --force to overwrite")
    for sub in ("images", "ocr", "labels"):
        if (out / sub).exists():
            shutil.rmtree(out / sub)
        (out / sub).mkdir(parents=True)

    pool = word_pool(spec)

    def build(index: int) -> str:
        doc = generate_document(spec, index, pool)
        write_document(doc, out)
        return doc.doc_id

    workers = max(1, threads if threads is not None else settings.threads)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        ids = list(executor.map(build, range(spec.documents)))

    splits = split_assignment(spec.seed, spec.documents)
    manifest = {
        "spec": spec.model_dump(mode="json"),
        "splits": {name: [ids[i] for i in idx] for name, idx in splits.items()},
    }
    (out / MANIFEST).write_text(_dump(manifest), encoding="utf-8")
    logger.info(
        f"wrote {spec.documents} documents to {out} "
        f"({', '.join(f'{k} {len(v)}' for k, v in manifest['splits'].items())})"
    )
    return manifest


def read_manifest(root: Path) -> dict:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise DataError(f"no corpus manifest at {path}")
    manifest = read_json(path)
    if not isinstance(manifest, dict) or "splits" not in manifest:
        raise DataError(f"{path} has no splits")
    return manifest


def load_document(root: Path, doc_id: str) -> Document:
    root = Path(root)
    doc = ingest_ocr(root / "ocr" / f"{doc_id}.json", image_path=root / "images" / f"{doc_id}.pgm")
    labels = root / "labels" / f"{doc_id}.json"
    if labels.is_file():
        attach_labels(doc, read_json(labels))
    return doc


def load_corpus(root: Path, split: Optional[str] = None) -> list[Document]:
    """Documents of one split (or all splits, train first) in manifest order"""
    manifest = read_manifest(root)
    names = SPLITS if split is None else (split,)
    ids = []
    for name in names:
        if name not in manifest["splits"]:
            raise DataError(f"corpus at {root} has no {name!r} split")
        ids.extend(manifest["splits"][name])
    return [load_document(root, doc_id) for doc_id in ids]


def vocab_texts(documents: Iterable[Document]) -> Iterator[str]:
    """Every string a run can feed through the vocabulary"""
    yield " "
    yield from INSTRUCTIONS.values()
    for doc in documents:
        yield from doc.words
        for pair in doc.qa:
            yield pair.question
            yield from pair.answers
