"""Tests for span masking, the three pre-training tasks and the unified step"""

from __future__ import annotations

import math

import numpy as np
import pytest

from gendoc.config import PretrainConfig, reduce_ratio
from gendoc.downstream.detection import quantize_box
from gendoc.errors import InputValidationError, NumericError
from gendoc.inputs import prepare_image
from gendoc.numerics import IGNORE_INDEX, Adam
from gendoc.pretrain import (
    DocumentStream,
    MaskPlan,
    Pretrainer,
    build_cp_batch,
    build_itp_batch,
    build_ti_batch,
    sample_spans,
    schedule,
    unified_step,
)
from gendoc.pretrain.masking import sample_span_length
from gendoc.pretrain.tasks import span_union
from gendoc.pretrain.trainer import base_ratio, task_loss
from gendoc.vocab import EOS, MASK, SEP
from gendoc.vqvae import ImageTokenGrid, VQTokenizer, init_vqvae_params

from .conftest import tiny_config


@pytest.fixture
def tokenizer(vocab):
    config = tiny_config().vqvae
    return VQTokenizer(init_vqvae_params(config, vocab.visual_size, np.random.default_rng(0)))


def make_trainer(documents, vocab, params, tokenizer, **overrides) -> Pretrainer:
    return Pretrainer(tiny_config(**overrides), vocab, params, tokenizer, documents)


# ============ Unit Tests: span masking ============


class TestSampleSpans:
    def test_no_tokens(self):
        assert sample_spans(0, 0.3, 3.0, np.random.default_rng(0)).spans == []

    def test_reaches_budget(self):
        for seed in range(20):
            plan = sample_spans(100, 0.3, 3.0, np.random.default_rng(seed))
            longest = max(length for _, length in plan.spans)
            assert 30 <= plan.total <= 29 + longest

    def test_spans_disjoint_and_in_range(self):
        plan = sample_spans(50, 0.3, 3.0, np.random.default_rng(1))
        assert all(0 <= s and s + n <= 50 for s, n in plan.spans)
        assert len(plan.covered()) == plan.total

    def test_span_length_mean(self):
        rng = np.random.default_rng(2)
        lengths = [sample_span_length(3.0, rng) for _ in range(20000)]
        assert min(lengths) >= 1
        # zero-truncated Poisson(3): 3 / (1 - e^-3) ≈ 3.157
        assert 3.0 <= np.mean(lengths) <= 3.3

    def test_masked_fraction_over_many_documents(self):
        cfg = PretrainConfig()
        rng = np.random.default_rng(11)
        lengths = rng.integers(150, 251, size=400)
        for ratio, expected in ((cfg.ti_ratio, 0.30), (cfg.cp_ratio, 0.20)):
            masked = sum(sample_spans(int(n), ratio, cfg.poisson_lambda, rng).total for n in lengths)
            assert abs(masked / lengths.sum() - expected) <= 0.02

    def test_ratio_range(self):
        with pytest.raises(InputValidationError):
            sample_spans(10, 0.0, 3.0, np.random.default_rng(0))

    def test_overlap_rejected(self):
        with pytest.raises(InputValidationError):
            MaskPlan([(0, 3), (2, 2)])


# ============ Unit Tests: task examples ============


class TestTaskExamples:
    def image(self):
        return np.zeros((32, 32), dtype=np.float32)

    def test_text_infilling_target(self, vocab, documents):
        doc = documents[0]
        batch = build_ti_batch(doc, MaskPlan([(1, 2), (5, 1)]), vocab, self.image())
        example = batch.examples[0]
        expected = (
            vocab.encode_text(" ".join(doc.words[1:3])) + [SEP] + vocab.encode_text(doc.words[5]) + [EOS]
        )
        assert example.target_ids == expected
        assert example.source.ids.count(MASK) == 2
        assert batch.expert == "text"
        assert example.decoder_input[1:] == expected[:-1]

    def test_coordinate_target(self, vocab, documents):
        doc = documents[0]
        batch = build_cp_batch(doc, MaskPlan([(2, 3)]), vocab, self.image())
        example = batch.examples[0]
        assert example.target_ids == quantize_box(span_union(doc, 2, 3), vocab) + [EOS]
        assert all(vocab.block_of(t) == "layout" for t in example.target_ids[:4])
        assert example.source.boxes[example.source.word_starts[3]] is None
        assert batch.expert == "layout"

    def test_image_token_target_masks_half(self, vocab, documents):
        grid = ImageTokenGrid(8, 8, np.arange(64) % vocab.visual_size)
        batch = build_itp_batch(documents[0], grid, vocab, self.image(), np.random.default_rng(0), 8)
        example = batch.examples[0]
        assert example.patch_mask.sum() == 32
        assert len(example.target_ids) == 65 and example.target_ids[-1] == EOS
        assert vocab.block_of(example.target_ids[0]) == "visual"
        assert (example.targets != IGNORE_INDEX).all()

    def test_image_token_masked_only_loss(self, vocab, documents):
        grid = ImageTokenGrid(4, 4, np.zeros(16, dtype=np.int64))
        batch = build_itp_batch(documents[0], grid, vocab, self.image(), np.random.default_rng(0), 4,
                                masked_only=True)
        example = batch.examples[0]
        assert (example.targets[:16] != IGNORE_INDEX).sum() == 8
        assert example.targets[-1] == EOS

    def test_grid_mismatch(self, vocab, documents):
        grid = ImageTokenGrid(2, 2, [0, 0, 0, 0])
        with pytest.raises(InputValidationError):
            build_itp_batch(documents[0], grid, vocab, self.image(), np.random.default_rng(0), 4)


# ============ Unit Tests: schedule and stream ============


class TestSchedule:
    def test_default_sizes(self):
        assert schedule(0, PretrainConfig()) == {"ti": 8, "itp": 5, "cp": 2}
        assert schedule(500, PretrainConfig()) == schedule(0, PretrainConfig())

    def test_inactive_tasks_dropped(self):
        assert schedule(0, PretrainConfig(active_tasks=["ti"])) == {"ti": 8}

    def test_reduced_ratio(self):
        assert base_ratio() == [40, 24, 7]
        assert reduce_ratio([0, 0]) == [0, 0]

    def test_stream_is_pure_in_position(self, documents):
        a = DocumentStream(documents, seed=3)
        b = DocumentStream(documents, seed=3, consumed=7)
        assert [d.doc_id for d in a.peek(7, 5)] == [d.doc_id for d in b.take(5)]
        assert b.consumed == 12

    def test_every_epoch_is_a_permutation(self, documents):
        stream = DocumentStream(documents, seed=1)
        ids = [d.doc_id for d in stream.take(len(documents))]
        assert sorted(ids) == sorted(d.doc_id for d in documents)


# ============ Unit Tests: unified step ============


class TestUnifiedStep:
    def test_total_is_sum_of_tasks(self, documents, vocab, params, tokenizer):
        trainer = make_trainer(documents, vocab, params, tokenizer)
        batches = trainer.build_batches(0)
        assert [b.task for b in batches] == ["ti", "itp", "cp"]
        assert [len(b) for b in batches] == [2, 1, 1]
        result = unified_step(batches, params, backward=False)
        assert result.total == pytest.approx(sum(result.losses.values()))
        assert result.losses["cp"] == pytest.approx(float(task_loss(batches[2], params).data), rel=1e-5)

    def test_initial_infilling_loss_near_uniform(self, documents, vocab, params, tokenizer):
        trainer = make_trainer(documents, vocab, params, tokenizer)
        result = unified_step(trainer.build_batches(0)[:1], params, backward=False)
        assert result.losses["ti"] == pytest.approx(math.log(vocab.size), rel=0.1)

    def test_weight_zero_task_contributes_nothing(self, documents, vocab, params, tokenizer):
        trainer = make_trainer(documents, vocab, params, tokenizer, pretrain={"weights": [1.0, 0.0, 1.0]})
        result = unified_step(trainer.build_batches(0), params, backward=False)
        assert result.losses["itp"] == 0.0

    def test_batches_deterministic(self, documents, vocab, params, tokenizer):
        a = make_trainer(documents, vocab, params, tokenizer).build_batches(3)
        b = make_trainer(documents, vocab, params, tokenizer).build_batches(3)
        for x, y in zip(a, b):
            assert [e.target_ids for e in x.examples] == [e.target_ids for e in y.examples]
            assert [e.source.ids for e in x.examples] == [e.source.ids for e in y.examples]

    def test_step_updates_and_counts(self, documents, vocab, params, tokenizer):
        trainer = make_trainer(documents, vocab, params, tokenizer)
        before = params["embed.tokens"].data.copy()
        result = trainer.step(0)
        assert result.grad_norm is not None and result.grad_norm > 0.0
        assert trainer.step_index == 1
        assert trainer.stream.consumed == 4
        assert not np.array_equal(before, params["embed.tokens"].data)

    def test_non_finite_loss_names_task(self, documents, vocab, params, tokenizer):
        trainer = make_trainer(documents, vocab, params, tokenizer)
        batches = trainer.build_batches(0)
        params["decoder.out_bias"].data[:] = np.nan
        with pytest.raises(NumericError) as exc:
            unified_step(batches, params, Adam(params.tensors), lr=1e-3)
        assert exc.value.where == "ti"

    def test_threaded_prefetch_matches_serial(self, documents, vocab, params, tokenizer):
        trainer = make_trainer(documents, vocab, params, tokenizer)
        serial = [[e.target_ids for b in bs for e in b.examples] for _, bs in trainer._prefetched(range(3), 1)]
        threaded = [[e.target_ids for b in bs for e in b.examples] for _, bs in trainer._prefetched(range(3), 2)]
        assert serial == threaded


# ============ Integration Tests: learning ============


@pytest.mark.slow
class TestLearning:
    def test_infilling_loss_falls(self, documents, vocab, tokenizer):
        from gendoc.model import init_params

        params = init_params(tiny_config().model, vocab, np.random.default_rng(0))
        trainer = make_trainer(documents, vocab, params, tokenizer,
                               pretrain={"steps": 60, "active_tasks": ["ti"], "batch_sizes": [2, 1, 1]},
                               optim={"lr": 3e-3, "warmup_steps": 5})
        results = trainer.run()
        first = np.mean([r.losses["ti"] for r in results[:10]])
        last = np.mean([r.losses["ti"] for r in results[-10:]])
        assert last < first

    def test_images_prepare_to_model_size(self, documents):
        assert prepare_image(documents[0].image, 32).shape == (32, 32)
