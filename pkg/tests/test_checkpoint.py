"""Tests for the checkpoint format and state restore"""

from __future__ import annotations

import struct

import numpy as np
import pytest

from gendoc.checkpoint import (
    MAGIC,
    capture,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    restore_optimizer,
    restore_params,
    restore_tokenizer,
    save_checkpoint,
)
from gendoc.errors import CheckpointError
from gendoc.numerics import Adam
from gendoc.vqvae import VQTokenizer, init_vqvae_params

from .conftest import tiny_config


@pytest.fixture
def tokenizer(vocab):
    return VQTokenizer(init_vqvae_params(tiny_config().vqvae, vocab.visual_size, np.random.default_rng(0)))


@pytest.fixture
def trained_optimizer(params):
    optimizer = Adam(params.tensors)
    params["decoder.out_bias"].grad = np.ones_like(params["decoder.out_bias"].data)
    optimizer.step(1e-3)
    return optimizer


# ============ Unit Tests: encoding ============


class TestFormat:
    def test_preamble(self, config, vocab, params):
        data = encode_checkpoint(capture(config, vocab, params, step=3))
        magic, version, header_len = struct.unpack_from("<4sIQ", data)
        assert magic == MAGIC == b"GDCK"
        assert version == 1
        assert data[16:16 + header_len].decode("utf-8").startswith('{"adam_t":0,')

    def test_byte_stable_round_trip(self, tmp_path, config, vocab, params, tokenizer, trained_optimizer):
        ckpt = capture(config, vocab, params, step=7, optimizer=trained_optimizer, tokenizer=tokenizer,
                       meta={"epoch": 2, "best_value": 0.5})
        first = save_checkpoint(ckpt, tmp_path / "a.gdck")
        second = save_checkpoint(load_checkpoint(first), tmp_path / "b.gdck")
        assert first.read_bytes() == second.read_bytes()
        assert not (tmp_path / "a.gdck.tmp").exists()

    def test_fields_survive(self, config, vocab, params):
        ckpt = capture(config, vocab, params, step=5, rng_state={"seed": 9, "step": 5, "stream_consumed": 20},
                       meta={"task": "ner"})
        back = decode_checkpoint(encode_checkpoint(ckpt))
        assert back.step == 5
        assert back.rng_state == {"seed": 9, "step": 5, "stream_consumed": 20}
        assert back.meta == {"task": "ner"}
        assert back.config.to_json() == config.to_json()
        assert back.vocab == vocab
        for name, array in ckpt.tensors.items():
            np.testing.assert_array_equal(back.tensors[name], array)
            assert back.tensors[name].dtype == array.dtype

    def test_float64_and_integer_tensors(self, config, vocab, params):
        ckpt = capture(config, vocab, params)
        ckpt.tensors["extra.f64"] = np.arange(3, dtype=np.float64) / 3
        ckpt.tensors["extra.i"] = np.array([[1, -2]], dtype=np.int32)
        back = decode_checkpoint(encode_checkpoint(ckpt))
        assert back.tensors["extra.f64"].dtype == np.float64
        assert back.tensors["extra.i"].dtype == np.int64
        assert back.tensors["extra.i"].tolist() == [[1, -2]]

    def test_bad_magic(self, config, vocab, params):
        data = encode_checkpoint(capture(config, vocab, params))
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(b"XXXX" + data[4:])

    def test_unknown_version(self, config, vocab, params):
        data = bytearray(encode_checkpoint(capture(config, vocab, params)))
        data[4:8] = struct.pack("<I", 2)
        with pytest.raises(CheckpointError, match="version"):
            decode_checkpoint(bytes(data))

    @pytest.mark.parametrize("keep", [8, 40, -1])
    def test_truncated(self, config, vocab, params, keep):
        data = encode_checkpoint(capture(config, vocab, params))
        with pytest.raises(CheckpointError, match="truncated"):
            decode_checkpoint(data[:keep])

    def test_malformed_header(self):
        header = b"{not json"
        data = struct.pack("<4sIQ", MAGIC, 1, len(header)) + header
        with pytest.raises(CheckpointError):
            decode_checkpoint(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.gdck")


# ============ Unit Tests: restore ============


class TestRestore:
    def test_params(self, config, vocab, params):
        params.add_head("cls", 4, np.random.default_rng(0))
        restored = restore_params(decode_checkpoint(encode_checkpoint(capture(config, vocab, params))))
        assert sorted(restored.tensors) == sorted(params.tensors)
        assert restored.head_size("cls") == 4
        assert restored.layout_bins == vocab.layout_bins
        assert all(t.requires_grad for t in restored.tensors.values())
        np.testing.assert_array_equal(restored["embed.tokens"].data, params["embed.tokens"].data)

    def test_vocab_size_mismatch(self, config, vocab, params):
        ckpt = capture(config, vocab, params)
        ckpt.tensors["embed.tokens"] = ckpt.tensors["embed.tokens"][:-1]
        with pytest.raises(CheckpointError):
            restore_params(ckpt)

    def test_tokenizer(self, config, vocab, params, tokenizer):
        ckpt = decode_checkpoint(encode_checkpoint(capture(config, vocab, params, tokenizer=tokenizer)))
        restored = restore_tokenizer(ckpt)
        image = np.random.default_rng(1).uniform(size=(32, 32))
        np.testing.assert_array_equal(restored.tokenize(image).tokens, tokenizer.tokenize(image).tokens)
        assert "vqvae.codebook" not in restore_params(ckpt).tensors

    def test_no_tokenizer(self, config, vocab, params):
        with pytest.raises(CheckpointError):
            restore_tokenizer(capture(config, vocab, params))

    def test_optimizer(self, config, vocab, params, trained_optimizer):
        ckpt = decode_checkpoint(encode_checkpoint(capture(config, vocab, params, optimizer=trained_optimizer)))
        assert ckpt.adam_t == 1
        fresh = restore_optimizer(ckpt, Adam(params.tensors))
        assert fresh.t == 1
        np.testing.assert_array_equal(fresh.m["decoder.out_bias"], trained_optimizer.m["decoder.out_bias"])

    def test_optimizer_for_other_model(self, config, vocab, params, trained_optimizer):
        ckpt = capture(config, vocab, params, optimizer=trained_optimizer)
        subset = Adam({"embed.tokens": params["embed.tokens"]})
        with pytest.raises(CheckpointError):
            restore_optimizer(ckpt, subset)
