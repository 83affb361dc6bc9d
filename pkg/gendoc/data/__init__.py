"""Synthetic corpus generation, corpus directories and OCR JSON ingestion"""

from .corpus import SPLITS, load_corpus, read_manifest, split_assignment, vocab_texts, write_corpus
from .ocr import ingest_directory, ingest_ocr
from .synthetic import generate_corpus, generate_document

__all__ = [
    "SPLITS",
    "generate_corpus",
    "generate_document",
    "ingest_directory",
    "ingest_ocr",
    "load_corpus",
    "read_manifest",
    "split_assignment",
    "vocab_texts",
    "write_corpus",
]
