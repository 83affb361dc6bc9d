"""Tests for the synthetic corpus, corpus directories and OCR ingestion"""

from __future__ import annotations

import json

import numpy as np
import pytest

from gendoc.config import CorpusSpec
from gendoc.data import (
    generate_corpus,
    generate_document,
    ingest_directory,
    ingest_ocr,
    load_corpus,
    read_manifest,
    split_assignment,
    write_corpus,
)
from gendoc.data.render import PAPER, draw_word, glyph_pattern, load_pgm, save_pgm, word_width
from gendoc.errors import ConfigError, DataError

from .conftest import tiny_config


def write_ocr(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


# ============ Unit Tests: synthetic documents ============


class TestSyntheticDocuments:
    def test_pure_function_of_spec_and_index(self):
        spec = tiny_config().corpus
        a, b = generate_document(spec, 3), generate_document(spec, 3)
        assert a.words == b.words
        np.testing.assert_array_equal(a.image, b.image)
        assert [o.box for o in a.objects] == [o.box for o in b.objects]

    def test_seed_changes_content(self):
        spec = tiny_config().corpus
        other = spec.model_copy(update={"seed": 1})
        assert generate_document(spec, 0).words != generate_document(other, 0).words

    def test_labels_present(self, documents):
        for doc in documents:
            assert doc.qa and doc.objects
            assert len(doc.tags) == len(doc.tokens)
            assert doc.class_id == int(doc.doc_id.split("-")[1]) % 4

    def test_answers_are_ocr_words(self, documents):
        for doc in documents:
            for pair in doc.qa:
                assert set(pair.answers) <= set(doc.words)

    def test_word_boxes_hold_ink(self, documents):
        doc = documents[0]
        h, w = doc.image.shape
        for token in doc.tokens[:5]:
            b = token.box
            region = doc.image[round(b.y1 * h):round(b.y2 * h), round(b.x1 * w):round(b.x2 * w)]
            assert (region < PAPER).any()

    def test_page_too_small(self):
        with pytest.raises(ConfigError):
            generate_document(CorpusSpec(page_size=32), 0)

    def test_unknown_archetype(self):
        with pytest.raises(ConfigError):
            generate_document(CorpusSpec(archetypes=["poster"]), 0)

    def test_corpus_in_index_order(self):
        spec = CorpusSpec(documents=3, page_size=128, words_min=10, words_max=12, word_pool=30)
        assert [d.doc_id for d in generate_corpus(spec)] == ["doc-00000", "doc-00001", "doc-00002"]


# ============ Unit Tests: rendering ============


class TestRender:
    def test_glyphs_distinct(self):
        assert not np.array_equal(glyph_pattern("alpha"), glyph_pattern("beta"))

    def test_draw_word_box(self):
        page = np.full((20, 40), PAPER, dtype=np.uint8)
        box = draw_word(page, "abc", 2, 3)
        assert box == (2, 3, 2 + word_width("abc"), 12)
        assert page[3, 2] == 0

    def test_pgm_round_trip(self, tmp_path):
        page = np.random.default_rng(0).integers(0, 256, size=(12, 9), dtype=np.uint8)
        save_pgm(page, tmp_path / "p.pgm")
        assert (tmp_path / "p.pgm").read_bytes()[:2] == b"P5"
        np.testing.assert_array_equal(load_pgm(tmp_path / "p.pgm"), page)

    def test_unreadable_image(self, tmp_path):
        (tmp_path / "bad.pgm").write_bytes(b"not an image")
        with pytest.raises(DataError):
            load_pgm(tmp_path / "bad.pgm")


# ============ Unit Tests: corpus directories ============


class TestCorpusDirectory:
    def test_split_shares(self):
        splits = split_assignment(0, 10)
        assert [len(splits[k]) for k in ("train", "val", "test")] == [8, 1, 1]
        assert sorted(sum(splits.values(), [])) == list(range(10))
        assert split_assignment(0, 10) == splits

    def test_write_and_load(self, config, corpus_dir, documents):
        manifest = read_manifest(corpus_dir)
        assert sum(len(v) for v in manifest["splits"].values()) == 10
        loaded = {d.doc_id: d for d in load_corpus(corpus_dir)}
        original = documents[0]
        doc = loaded[original.doc_id]
        assert doc.words == original.words
        np.testing.assert_array_equal(doc.image, original.image)
        assert doc.tags == original.tags
        assert doc.class_id == original.class_id
        assert [p.answers for p in doc.qa] == [p.answers for p in original.qa]

    def test_split_loading(self, corpus_dir):
        assert len(load_corpus(corpus_dir, "train")) == 8
        with pytest.raises(DataError):
            load_corpus(corpus_dir, "holdout")

    def test_refuses_overwrite(self, config, corpus_dir):
        with pytest.raises(DataError, match="--force"):
            write_corpus(config.corpus, corpus_dir)
        write_corpus(config.corpus, corpus_dir, force=True)

    def test_byte_identical_rewrite(self, config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        write_corpus(config.corpus, a, threads=1)
        write_corpus(config.corpus, b, threads=3)
        for sub in ("ocr", "labels", "images"):
            for path in sorted((a / sub).iterdir()):
                assert path.read_bytes() == (b / sub / path.name).read_bytes()
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            read_manifest(tmp_path)


# ============ Unit Tests: OCR ingestion ============


class TestIngest:
    def test_minimal_file(self, tmp_path):
        path = write_ocr(tmp_path / "page.json", {
            "width": 100, "height": 200,
            "tokens": [{"text": "hello", "box": [10, 20, 50, 40]}],
        })
        doc = ingest_ocr(path)
        assert doc.doc_id == "page"
        assert doc.image.shape == (200, 100)
        assert doc.words == ["hello"]
        box = doc.tokens[0].box
        assert (box.x1, box.y1, box.x2, box.y2) == pytest.approx((0.1, 0.1, 0.5, 0.2))

    def test_invalid_boxes_dropped(self, tmp_path):
        path = write_ocr(tmp_path / "page.json", {
            "width": 100, "height": 100,
            "tokens": [
                {"text": "flipped", "box": [10, 10, 5, 20]},
                {"text": "outside", "box": [90, 10, 120, 20]},
                {"text": " ", "box": [1, 1, 2, 2]},
                {"text": "kept", "box": [1, 1, 20, 9]},
            ],
        })
        assert ingest_ocr(path).words == ["kept"]

    def test_malformed_json_reports_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"width": 10,\n  "height": }', encoding="utf-8")
        with pytest.raises(DataError) as exc:
            ingest_ocr(path)
        assert exc.value.line == 2
        assert exc.value.column is not None

    def test_schema_mismatch(self, tmp_path):
        path = write_ocr(tmp_path / "page.json", {"width": 0, "height": 10, "tokens": []})
        with pytest.raises(DataError):
            ingest_ocr(path)

    def test_image_size_must_match(self, tmp_path):
        save_pgm(np.zeros((10, 10), dtype=np.uint8), tmp_path / "page.pgm")
        path = write_ocr(tmp_path / "page.json", {"width": 20, "height": 10, "tokens": []})
        with pytest.raises(DataError):
            ingest_ocr(path)

    def test_sibling_image_used(self, tmp_path):
        page = np.full((10, 20), 7, dtype=np.uint8)
        save_pgm(page, tmp_path / "page.pgm")
        path = write_ocr(tmp_path / "page.json", {"width": 20, "height": 10, "tokens": []})
        np.testing.assert_array_equal(ingest_ocr(path).image, page)

    def test_directory_in_name_order(self, tmp_path):
        for name in ("b", "a"):
            write_ocr(tmp_path / f"{name}.json", {"width": 10, "height": 10, "tokens": []})
        assert [d.doc_id for d in ingest_directory(tmp_path)] == ["a", "b"]
        with pytest.raises(DataError):
            ingest_directory(tmp_path / "missing")
