"""Tests for encoder input assembly"""

from __future__ import annotations

import numpy as np
import pytest

from gendoc.entities import BBox, OcrToken, TokenSeq
from gendoc.errors import InputValidationError
from gendoc.inputs import (
    INSTRUCTIONS,
    TEXT,
    VISUAL,
    assemble,
    bin_box,
    bin_value,
    build_text_input,
    center_bins,
    encode,
    embed_layout,
    patch_boxes,
    prepare_image,
    visible_word_count,
)
from gendoc.model.params import LAYOUT_FIELDS
from gendoc.numerics import no_grad
from gendoc.vocab import BOS, MASK, SEP


def words_of(*texts: str) -> list[OcrToken]:
    return [OcrToken(t, BBox(0.1 * i, 0.1, 0.1 * i + 0.05, 0.2)) for i, t in enumerate(texts)]


# ============ Unit Tests: layout binning ============


class TestBinning:
    def test_full_page(self):
        assert bin_box(BBox(0.0, 0.0, 1.0, 1.0), 1000) == (0, 0, 999, 999, 999, 999)

    def test_quarter(self):
        assert bin_value(0.25, 2000) == 500

    def test_padding_row(self):
        assert bin_box(None, 1000) == (1000,) * 6

    def test_clamped(self):
        assert bin_value(1.5, 10) == 9
        assert bin_value(-0.2, 10) == 0

    def test_center(self):
        assert center_bins(BBox(0.0, 0.0, 0.5, 1.0), 101) == (25, 50)
        assert center_bins(None, 101) == (0, 0)

    def test_patch_boxes_raster_order(self):
        boxes = patch_boxes(2, 2)
        assert boxes[1] == BBox(0.5, 0.0, 1.0, 0.5)
        assert boxes[2] == BBox(0.0, 0.5, 0.5, 1.0)

    def test_embed_layout_sums_six_tables(self, params):
        bins = np.array([[1, 2, 3, 4, 5, 6]])
        expected = sum(params[f"embed.layout.{name}"].data[k + 1] for k, name in enumerate(LAYOUT_FIELDS))
        np.testing.assert_allclose(embed_layout(bins, params).data[0], expected, rtol=1e-6)


# ============ Unit Tests: image preparation ============


class TestPrepareImage:
    def test_uint8_scaled(self):
        out = prepare_image(np.full((4, 4), 255, dtype=np.uint8), 4)
        assert out.dtype == np.float32
        np.testing.assert_allclose(out, 1.0)

    def test_resized_and_clipped(self):
        out = prepare_image(np.random.default_rng(0).uniform(size=(50, 70)), 32)
        assert out.shape == (32, 32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_rejects_color(self):
        with pytest.raises(InputValidationError):
            prepare_image(np.zeros((4, 4, 3)), 4)


# ============ Unit Tests: text stream ============


class TestBuildTextInput:
    def test_no_words(self, vocab):
        seq = build_text_input(vocab, INSTRUCTIONS["qa"])
        assert seq.ids == [BOS] + vocab.encode_text(INSTRUCTIONS["qa"]) + [SEP]
        assert all(b is None for b in seq.boxes)
        assert seq.positions == list(range(len(seq)))

    def test_word_ids_carry_boxes(self, vocab, documents):
        words = documents[0].tokens[:3]
        seq = build_text_input(vocab, INSTRUCTIONS["ner"], words)
        start = seq.word_starts[1]
        assert seq.boxes[start] == words[1].box
        assert seq.boxes[start - 1] is None  # separating space
        assert vocab.decode_text(seq.ids[start:start + len(words[1].text)]) == words[1].text

    def test_question_between_separators(self, vocab, documents):
        question = documents[0].qa[0].question
        seq = build_text_input(vocab, INSTRUCTIONS["qa"], question=question)
        assert seq.ids.count(SEP) == 2
        assert seq.ids[-1] == SEP

    def test_mask_span_collapses_to_one_id(self, vocab, documents):
        words = documents[0].tokens[:5]
        seq = build_text_input(vocab, INSTRUCTIONS["ti"], words, mask_spans=[(1, 3)])
        assert seq.ids.count(MASK) == 1
        assert seq.boxes[seq.word_starts[1]] is None
        assert seq.word_starts[2] == seq.word_starts[3] == -1

    def test_hidden_layout_keeps_ids(self, vocab, documents):
        words = documents[0].tokens[:3]
        plain = build_text_input(vocab, INSTRUCTIONS["cp"], words)
        hidden = build_text_input(vocab, INSTRUCTIONS["cp"], words, hide_layout_spans=[(0, 1)])
        assert plain.ids == hidden.ids
        assert hidden.boxes[hidden.word_starts[0]] is None

    def test_truncated_at_max_len(self, vocab, documents):
        seq = build_text_input(vocab, INSTRUCTIONS["ner"], documents[0].tokens, max_len=80)
        assert len(seq) == 80
        assert -1 in seq.word_starts

    def test_visible_word_count_matches_truncation(self, vocab, documents):
        words = documents[0].tokens
        n = visible_word_count(vocab, INSTRUCTIONS["ner"], words, max_len=80)
        seq = build_text_input(vocab, INSTRUCTIONS["ner"], words[:n], max_len=80)
        assert -1 not in seq.word_starts
        assert len(seq) <= 80

    def test_word_without_box(self, vocab):
        with pytest.raises(InputValidationError):
            build_text_input(vocab, INSTRUCTIONS["ner"], [OcrToken("a", None)])

    def test_question_over_limit(self, vocab, documents):
        with pytest.raises(InputValidationError):
            build_text_input(vocab, INSTRUCTIONS["qa"], question=documents[0].qa[0].question, max_len=10)


# ============ Unit Tests: assembly ============


class TestAssemble:
    def test_length_is_text_plus_grid(self, vocab, params):
        text = build_text_input(vocab, INSTRUCTIONS["qa"])
        encoded = assemble(text, np.zeros((32, 32), dtype=np.float32), params)
        # 32px image, three stride-2 convolutions: 4 x 4 grid
        assert len(encoded) == len(INSTRUCTIONS["qa"]) + 2 + 16
        assert encoded.text_len == len(text)
        assert (encoded.modality[: len(text)] == TEXT).all()
        assert (encoded.modality[len(text):] == VISUAL).all()

    def test_text_embedding_is_component_sum(self, vocab, params, documents):
        word = documents[0].tokens[0]
        text = build_text_input(vocab, INSTRUCTIONS["ner"], [word])
        with no_grad():
            encoded = assemble(text, np.zeros((32, 32), dtype=np.float32), params)
        i = text.word_starts[0]
        B = params.layout_bins
        expected = (
            params["embed.tokens"].data[text.ids[i]]
            + params["embed.text_pos"].data[i]
            + embed_layout(np.array([bin_box(word.box, B)]), params).data[0]
        )
        np.testing.assert_allclose(encoded.embeddings.data[i], expected, rtol=1e-5, atol=1e-6)

    def test_padding_layout_centers_are_zero(self, vocab, params):
        text = build_text_input(vocab, INSTRUCTIONS["qa"])
        encoded = assemble(text, np.zeros((32, 32), dtype=np.float32), params)
        assert (encoded.x_bins[: len(text)] == 0).all()
        assert encoded.x_bins[len(text):].max() > 0

    def test_patch_mask_uses_mask_embedding(self, vocab, params):
        text = TokenSeq()
        image = np.random.default_rng(0).uniform(size=(32, 32)).astype(np.float32)
        mask = np.zeros(16, dtype=bool)
        mask[[0, 5]] = True
        with no_grad():
            a = assemble(text, image, params, patch_mask=mask).embeddings.data
            b = assemble(text, np.zeros_like(image), params, patch_mask=mask).embeddings.data
        np.testing.assert_allclose(a[[0, 5]], b[[0, 5]], rtol=1e-6)

    def test_text_over_position_limit(self, vocab, params):
        text = TokenSeq()
        text.extend([BOS] * (params.config.max_text_positions + 1))
        with pytest.raises(InputValidationError):
            assemble(text, np.zeros((32, 32), dtype=np.float32), params)

    def test_wrong_image_size(self, vocab, params):
        with pytest.raises(InputValidationError):
            assemble(TokenSeq(), np.zeros((16, 16), dtype=np.float32), params)

    def test_encode_returns_memory_per_position(self, vocab, params):
        text = build_text_input(vocab, INSTRUCTIONS["classify"])
        memory, encoded = encode(text, np.zeros((32, 32), dtype=np.float32), params)
        assert memory.shape == (len(encoded), params.config.d_model)
        assert np.isfinite(memory.data).all()

    def test_changing_one_box_changes_only_its_position(self, vocab, params, documents):
        words = list(documents[0].tokens[:6])
        text = build_text_input(vocab, INSTRUCTIONS["ner"], words)
        moved = list(words)
        moved[3] = OcrToken(words[3].text, BBox(0.61, 0.72, 0.83, 0.79))
        other = build_text_input(vocab, INSTRUCTIONS["ner"], moved)
        assert other.ids == text.ids
        image = np.zeros((32, 32), dtype=np.float32)
        with no_grad():
            a = assemble(text, image, params)
            b = assemble(other, image, params)
        changed = {i for i, box in enumerate(text.boxes) if box != other.boxes[i]}
        assert changed and all(text.boxes[i] == words[3].box for i in changed)
        for i in range(len(a)):
            if i in changed:
                assert not np.allclose(a.embeddings.data[i], b.embeddings.data[i])
            else:
                np.testing.assert_array_equal(a.embeddings.data[i], b.embeddings.data[i])
        moved_centers = list(changed)
        assert ((a.x_bins[moved_centers] != b.x_bins[moved_centers])
                | (a.y_bins[moved_centers] != b.y_bins[moved_centers])).all()
