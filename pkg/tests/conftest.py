"""Shared fixtures: a tiny run config, a small synthetic corpus, its vocabulary and a random model"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from gendoc.config import RunConfig, load_run_config
from gendoc.data import generate_corpus, vocab_texts, write_corpus
from gendoc.model import init_params
from gendoc.numerics import precision
from gendoc.vocab import build_vocab

TINY = {
    "model": {"preset": "tiny", "image_size": 32, "max_text_positions": 320, "max_decoder_positions": 256},
    "vocab": {"visual_tokens": 16, "layout_bins": 100, "detection_layout_bins": 200},
    "corpus": {"documents": 10, "page_size": 128, "words_min": 20, "words_max": 30, "word_pool": 60},
    "vqvae": {"steps": 4, "batch_size": 2, "log_window": 2, "hidden": 8, "d_code": 8},
    "pretrain": {"steps": 4, "batch_sizes": [2, 1, 1], "max_text_len": 96, "log_every": 1,
                 "checkpoint_every": 2},
    "finetune": {"epochs": 1, "batch_size": 4, "max_answer_len": 12, "max_objects": 8, "beam": 2},
}


def tiny_config(tmp: Path | None = None, **overrides) -> RunConfig:
    values = {k: dict(v) for k, v in TINY.items()}
    if tmp is not None:
        values["paths"] = {"corpus_dir": str(tmp / "corpus"), "run_dir": str(tmp / "run")}
    for key, value in overrides.items():
        if isinstance(value, dict) and key in values:
            values[key].update(value)
        else:
            values[key] = value
    return load_run_config(None, **values)


@pytest.fixture
def config(tmp_path) -> RunConfig:
    return tiny_config(tmp_path)


@pytest.fixture(scope="session")
def documents():
    return list(generate_corpus(tiny_config().corpus))


@pytest.fixture(scope="session")
def vocab(documents):
    return build_vocab(vocab_texts(documents), tiny_config().vocab)


@pytest.fixture
def params(vocab):
    return init_params(tiny_config().model, vocab, np.random.default_rng(0))


@pytest.fixture
def corpus_dir(config) -> Path:
    write_corpus(config.corpus, config.paths.corpus_dir)
    return config.paths.corpus_dir


@pytest.fixture
def float64():
    with precision(np.float64):
        yield
