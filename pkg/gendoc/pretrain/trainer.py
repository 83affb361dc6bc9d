"""Unified multi-task loss, batch schedule, document stream and the pre-training loop"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ..config import TASKS, PretrainConfig, RunConfig, reduce_ratio
from ..entities import Document
from ..errors import NumericError
from ..inputs import INSTRUCTIONS, encode, prepare_image, visible_word_count
from ..model import ModelParams, decoder_forward
from ..numerics import Adam, Tensor, concat, cross_entropy, lr_at
from ..observability import MetricsLog, get_logger, metrics, track_latency
from ..vocab import Vocab
from ..vqvae import ImageTokenGrid, VQTokenizer
from .masking import sample_spans
from .tasks import TaskBatch, TaskExample, build_cp_batch, build_itp_batch, build_ti_batch

logger = get_logger("pretrain")


# ============ Loss ============

def example_logits(example: TaskExample, expert: str, params: ModelParams) -> Tensor:
    memory, encoded = encode(example.source, example.image, params, patch_mask=example.patch_mask)
    return decoder_forward(example.decoder_input, memory, expert, params, memory_mask=encoded.mask)


def task_loss(batch: TaskBatch, params: ModelParams) -> Tensor:
    """ω × token-level mean cross-entropy over every example of the batch"""
    logits = concat([example_logits(ex, batch.expert, params) for ex in batch.examples], axis=0)
    targets = np.concatenate([ex.targets for ex in batch.examples])
    return cross_entropy(logits, targets, weight=batch.weight)


@dataclass
class StepResult:
    total: float
    losses: dict[str, float]
    grad_norm: Optional[float] = None


def unified_step(
    batches: Sequence[TaskBatch],
    params: ModelParams,
    optimizer: Optional[Adam] = None,
    lr: float = 0.0,
    backward: bool = True,
) -> StepResult:
    """
    Sum the weighted per-task losses, backpropagate once and apply one update.

    Raises:
        NumericError: a task's loss is not finite (names the task and the active set)
    """
    active = [b.task for b in batches]
    losses: dict[str, float] = {}
    total: Optional[Tensor] = None
    for batch in batches:
        try:
            loss = task_loss(batch, params)
        except NumericError as e:
            metrics.increment("nan_aborts")
            raise NumericError(f"{batch.task} forward failed: {e}", where=batch.task,
                               active_tasks=active) from e
        value = float(loss.data)
        if not math.isfinite(value):
            metrics.increment("nan_aborts")
            raise NumericError(f"non-finite {batch.task} loss", where=batch.task, active_tasks=active)
        losses[batch.task] = value
        total = loss if total is None else total + loss
    result = StepResult(total=sum(losses.values()), losses=losses)
    if backward and total is not None:
        if optimizer is not None:
            optimizer.zero_grad()
        total.backward()
        if optimizer is not None:
            result.grad_norm = optimizer.step(lr)
    return result


# ============ Schedule and stream ============

def schedule(step: int, config: PretrainConfig) -> dict[str, int]:
    """Per-task batch sizes for `step` (constant over steps)"""
    return {task: config.size_of(task) for task in TASKS if task in config.active_tasks}


def base_ratio() -> list[int]:
    return reduce_ratio([640, 384, 112])


class DocumentStream:
    """
    Endless deterministic stream: each epoch is a seeded permutation of the documents.
    `at(i)` is pure; `take(n)` advances the consumed counter.
    """

    def __init__(self, documents: Sequence[Document], seed: int, consumed: int = 0):
        if not documents:
            raise ValueError("document stream needs at least one document")
        self.documents = list(documents)
        self.seed = seed
        self.consumed = consumed
        self._perms: dict[int, np.ndarray] = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms[epoch] = np.random.default_rng([self.seed, epoch]).permutation(len(self.documents))
        return self._perms[epoch]

    def at(self, index: int) -> Document:
        n = len(self.documents)
        return self.documents[int(self._perm(index // n)[index % n])]

    def peek(self, start: int, count: int) -> list[Document]:
        return [self.at(i) for i in range(start, start + count)]

    def take(self, count: int) -> list[Document]:
        docs = self.peek(self.consumed, count)
        self.consumed += count
        return docs


# ============ Pre-training loop ============

@dataclass
class PreparedDoc:
    image: np.ndarray
    grid: ImageTokenGrid
    visible: dict[str, int] = field(default_factory=dict)


class Pretrainer:
    """Builds the per-step task batches and runs unified steps"""

    def __init__(
        self,
        config: RunConfig,
        vocab: Vocab,
        params: ModelParams,
        tokenizer: VQTokenizer,
        documents: Sequence[Document],
        optimizer: Optional[Adam] = None,
        metrics_log: Optional[MetricsLog] = None,
        start_step: int = 0,
    ):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.tokenizer = tokenizer
        self.optimizer = optimizer or Adam(
            params.tensors,
            betas=config.optim.betas,
            eps=config.optim.eps,
            grad_clip=config.optim.grad_clip,
            lr_multipliers=params.lr_multipliers(config.optim.backbone_lr_mult),
        )
        self.metrics_log = metrics_log or MetricsLog()
        self.per_step = sum(schedule(0, config.pretrain).values())
        self.stream = DocumentStream(documents, config.seed, consumed=start_step * self.per_step)
        self.step_index = start_step
        self._prepared: dict[str, PreparedDoc] = {}

    def prepared(self, doc: Document) -> PreparedDoc:
        cached = self._prepared.get(doc.doc_id)
        if cached is None:
            image = prepare_image(doc.image, self.params.config.image_size)
            cached = PreparedDoc(image=image, grid=self.tokenizer.tokenize(image))
            self._prepared[doc.doc_id] = cached
        return cached

    def _visible(self, doc: Document, task: str) -> int:
        prep = self.prepared(doc)
        if task not in prep.visible:
            prep.visible[task] = visible_word_count(
                self.vocab, INSTRUCTIONS[task], doc.tokens, self.config.pretrain.max_text_len
            )
        return prep.visible[task]

    def build_batches(self, step: int) -> list[TaskBatch]:
        """Pure in `step`: documents come from stream positions, randomness from (seed, step)"""
        cfg = self.config.pretrain
        rng = np.random.default_rng([self.config.seed, step])
        start = step * self.per_step
        batches: list[TaskBatch] = []
        for task, size in schedule(step, cfg).items():
            docs = self.stream.peek(start, size)
            start += size
            parts = []
            for doc in docs:
                prep = self.prepared(doc)
                if task == "ti":
                    plan = sample_spans(self._visible(doc, task), cfg.ti_ratio, cfg.poisson_lambda, rng)
                    parts.append(build_ti_batch(doc, plan, self.vocab, prep.image, cfg.max_text_len,
                                                cfg.weight_of(task)))
                elif task == "cp":
                    plan = sample_spans(self._visible(doc, task), cfg.cp_ratio, cfg.poisson_lambda, rng)
                    parts.append(build_cp_batch(doc, plan, self.vocab, prep.image, cfg.max_text_len,
                                                cfg.weight_of(task)))
                else:
                    parts.append(build_itp_batch(
                        doc, prep.grid, self.vocab, prep.image, rng, self.params.config.grid,
                        ratio=cfg.itp_ratio, masked_only=cfg.itp_masked_only,
                        max_len=cfg.max_text_len, weight=cfg.weight_of(task),
                    ))
            batches.append(TaskBatch.merge(parts))
        return batches

    def lr(self, step: int) -> float:
        o = self.config.optim
        return lr_at(step, o.lr, o.warmup_steps, self.config.pretrain.steps, o.scheduler)

    @track_latency("step")
    def step(self, step: int, batches: Optional[list[TaskBatch]] = None) -> StepResult:
        batches = batches if batches is not None else self.build_batches(step)
        lr = self.lr(step)
        result = unified_step(batches, self.params, self.optimizer, lr)
        self.stream.consumed += self.per_step
        self.step_index = step + 1
        metrics.increment("document_count", self.per_step)
        metrics.set_gauge("last_loss", result.total)
        metrics.set_gauge("learning_rate", lr)
        if step % self.config.pretrain.log_every == 0 or step + 1 == self.config.pretrain.steps:
            for task, value in result.losses.items():
                self.metrics_log.write(step, task, value, lr)
        return result

    def _prefetched(self, steps: range, threads: int) -> Iterator[tuple[int, list[TaskBatch]]]:
        """Batches in step order; with threads > 1 up to `threads` steps are built ahead"""
        if threads <= 1:
            for s in steps:
                yield s, self.build_batches(s)
            return
        # warm the per-document cache on this thread; workers then only read it
        for s in steps[:threads]:
            for doc in self.stream.peek(s * self.per_step, self.per_step):
                self.prepared(doc)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pending = [pool.submit(self.build_batches, s) for s in steps[:threads]]
            for offset, s in enumerate(steps):
                batches = pending.pop(0).result()
                nxt = offset + threads
                if nxt < len(steps):
                    for doc in self.stream.peek(steps[nxt] * self.per_step, self.per_step):
                        self.prepared(doc)
                    pending.append(pool.submit(self.build_batches, steps[nxt]))
                yield s, batches

    def run(
        self,
        until: Optional[int] = None,
        threads: int = 1,
        on_checkpoint: Optional[Callable[[int], None]] = None,
        progress: bool = False,
    ) -> list[StepResult]:
        """
        Run unified steps from the current step to `until` (default: configured steps).

        `on_checkpoint(step)` is called every checkpoint_every steps and, with the
        failing step, before a NumericError propagates.
        """
        until = until if until is not None else self.config.pretrain.steps
        steps = range(self.step_index, until)
        results: list[StepResult] = []
        started = time.perf_counter()
        for s, batches in tqdm(self._prefetched(steps, threads), total=len(steps),
                               desc="pretrain", disable=not progress):
            try:
                results.append(self.step(s, batches))
            except NumericError:
                logger.error(f"pre-training aborted at step {s}")
                if on_checkpoint is not None:
                    on_checkpoint(s)
                raise
            if on_checkpoint is not None and (s + 1) % self.config.pretrain.checkpoint_every == 0:
                on_checkpoint(s + 1)
        logger.info(
            f"pre-trained steps {steps.start}..{until} in {time.perf_counter() - started:.1f}s"
        )
        return results
