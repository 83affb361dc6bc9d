"""Per-task fine-tuning heads and the epoch loop with validation-based model selection"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ..config import FINETUNE_TASKS, RunConfig
from ..entities import Document
from ..errors import ConfigError, InputValidationError, NumericError
from ..inputs import prepare_image
from ..metrics import EvalReport, accuracy_report, anls_report, entity_f1_report, mean_ap
from ..model import ModelParams
from ..numerics import Adam, Tensor, lr_at
from ..observability import MetricsLog, get_logger, metrics, track_latency
from ..vocab import Vocab
from .classification import HEAD as CLS_HEAD
from .classification import class_record, classification_example, classification_loss, classify
from .detection import (
    decode_detections,
    detection_loss,
    detection_record,
    make_detection_sequence,
    parse_detections,
    random_resize_crop,
)
from .labeling import HEAD as NER_HEAD
from .labeling import (
    check_head,
    entity_record,
    label_entities,
    labeling_example,
    labeling_loss,
    tag_set,
)
from .qa import answer_question, answer_record, qa_loss, qa_samples

logger = get_logger("finetune")

# rng stream for new head weights, apart from the per-epoch streams
HEAD_INIT_STREAM = 1_000_003


# ============ Task heads ============

class TaskHead:
    """Training units, loss, predictions and the validation metric of one downstream task"""

    task: str = ""

    def __init__(self, config: RunConfig, vocab: Vocab, params: ModelParams):
        self.config = config
        self.vocab = vocab
        self.params = params
        self._images: dict[str, np.ndarray] = {}

    def image(self, doc: Document) -> np.ndarray:
        if doc.doc_id not in self._images:
            self._images[doc.doc_id] = prepare_image(doc.image, self.params.config.image_size)
        return self._images[doc.doc_id]

    def has_labels(self, doc: Document) -> bool:
        raise NotImplementedError

    def labeled(self, docs: Sequence[Document]) -> list[Document]:
        """
        Documents carrying this task's labels; the rest are skipped with a warning.

        Raises:
            InputValidationError: no document carries the labels
        """
        kept = [d for d in docs if self.has_labels(d)]
        if not kept:
            raise InputValidationError(f"none of {len(docs)} documents has {self.task} labels")
        if len(kept) < len(docs):
            logger.warning(f"skipping {len(docs) - len(kept)} documents without {self.task} labels")
        return kept

    def prepare(self, rng: np.random.Generator) -> None:
        """Add missing task parameters before training"""
        self.check()

    def check(self) -> None:
        """
        Raises:
            ConfigError: the model lacks what this task needs
        """

    def units(self, docs: Sequence[Document], rng: np.random.Generator) -> list[Any]:
        raise NotImplementedError

    def loss(self, unit: Any, smoothing: float) -> Tensor:
        raise NotImplementedError

    def evaluate(self, docs: Sequence[Document]) -> tuple[EvalReport, list[dict]]:
        raise NotImplementedError


class QAHead(TaskHead):
    task = "qa"

    def has_labels(self, doc: Document) -> bool:
        return bool(doc.qa)

    def units(self, docs, rng):
        return qa_samples(docs)

    def loss(self, unit, smoothing):
        ft = self.config.finetune
        return qa_loss(unit, self.vocab, self.params, smoothing, ft.qa_doc_len, ft.max_answer_len,
                       image=self.image(unit.doc))

    def evaluate(self, docs):
        ft = self.config.finetune
        preds, golds, ids, records = [], [], [], []
        for doc in docs:
            for k, pair in enumerate(doc.qa):
                answer = answer_question(doc, pair.question, self.params, self.vocab,
                                         beam=ft.beam, max_len=ft.max_answer_len, doc_len=ft.qa_doc_len)
                preds.append(answer)
                golds.append(pair.answers)
                ids.append(f"{doc.doc_id}#{k}")
                records.append(answer_record(doc, pair.question, answer))
        return anls_report(preds, golds, ids=ids), records


class DetectionHead(TaskHead):
    task = "detect"

    def has_labels(self, doc: Document) -> bool:
        return bool(doc.objects)

    def check(self):
        bins = self.config.vocab.detection_layout_bins
        if self.vocab.layout_bins != bins:
            raise ConfigError(
                f"detection runs on a {bins}-bin vocabulary, got {self.vocab.layout_bins}; "
                "remap the embeddings first"
            )

    def units(self, docs, rng):
        ft = self.config.finetune
        out = []
        for doc in docs:
            image, objects = self.image(doc), doc.objects
            if ft.augment:
                image, objects = random_resize_crop(image, objects, rng)
            out.append((image, make_detection_sequence(objects, self.vocab, rng, ft.max_objects)))
        return out

    def loss(self, unit, smoothing):
        image, target = unit
        return detection_loss(image, target, self.vocab, self.params, smoothing)

    def evaluate(self, docs):
        preds, records = [], []
        for doc in docs:
            tokens, scores = decode_detections(self.image(doc), self.params, self.vocab,
                                               self.config.finetune.max_objects)
            found = parse_detections(tokens, self.vocab, scores)
            preds.append(found)
            records.append(detection_record(doc, found))
        return mean_ap(preds, [d.objects for d in docs]), records


class LabelingHead(TaskHead):
    task = "ner"

    @property
    def tags(self) -> list[str]:
        return tag_set(self.config.finetune.entity_labels)

    def has_labels(self, doc: Document) -> bool:
        return doc.tags is not None

    def prepare(self, rng):
        if f"head.{NER_HEAD}.weight" not in self.params:
            self.params.add_head(NER_HEAD, len(self.tags), rng)
        self.check()

    def check(self):
        check_head(self.params, self.tags)

    def units(self, docs, rng):
        size = self.params.config.image_size
        limit = self.config.pretrain.max_text_len
        return [labeling_example(doc, self.vocab, self.tags, size, limit) for doc in docs]

    def loss(self, unit, smoothing):
        return labeling_loss(unit, self.params, smoothing)

    def evaluate(self, docs):
        labels = self.config.finetune.entity_labels
        limit = self.config.pretrain.max_text_len
        preds = [label_entities(doc, self.params, self.vocab, labels, limit) for doc in docs]
        records = [entity_record(doc, spans) for doc, spans in zip(docs, preds)]
        golds = [doc.spans() for doc in docs]
        return entity_f1_report(preds, golds, ids=[d.doc_id for d in docs]), records


class ClassificationHead(TaskHead):
    task = "classify"

    def has_labels(self, doc: Document) -> bool:
        return doc.class_id is not None

    def prepare(self, rng):
        if f"head.{CLS_HEAD}.weight" not in self.params:
            self.params.add_head(CLS_HEAD, self.config.corpus.class_count, rng)
        self.check()

    def check(self):
        classes = self.config.corpus.class_count
        if f"head.{CLS_HEAD}.weight" not in self.params:
            raise ConfigError(f"model has no {CLS_HEAD} head; fine-tune for classify first")
        if self.params.head_size(CLS_HEAD) != classes:
            raise ConfigError(
                f"{CLS_HEAD} head has {self.params.head_size(CLS_HEAD)} outputs for {classes} classes"
            )

    def units(self, docs, rng):
        limit = self.config.pretrain.max_text_len
        return [classification_example(doc, self.vocab, self.params, limit) for doc in docs]

    def loss(self, unit, smoothing):
        return classification_loss(unit, self.params, smoothing)

    def evaluate(self, docs):
        limit = self.config.pretrain.max_text_len
        preds = [classify(doc, self.params, self.vocab, limit) for doc in docs]
        records = [class_record(doc, p) for doc, p in zip(docs, preds)]
        report = accuracy_report(preds, [d.class_id for d in docs], ids=[d.doc_id for d in docs])
        return report, records


HEADS: dict[str, type[TaskHead]] = {
    "qa": QAHead,
    "detect": DetectionHead,
    "ner": LabelingHead,
    "classify": ClassificationHead,
}


def make_head(task: str, config: RunConfig, vocab: Vocab, params: ModelParams) -> TaskHead:
    if task not in HEADS:
        raise ConfigError(f"unknown fine-tuning task {task!r}; expected one of {FINETUNE_TASKS}")
    return HEADS[task](config, vocab, params)


# ============ Loop ============

@dataclass
class EpochResult:
    epoch: int
    loss: float
    report: EvalReport


@dataclass
class FinetuneResult:
    best_epoch: int = -1
    best_value: float = -math.inf
    history: list[EpochResult] = field(default_factory=list)


class FineTuner:
    """
    Mini-batch training of one downstream head. Every epoch draws its randomness from
    (seed, epoch), so a run resumed at an epoch boundary matches an uninterrupted one.
    """

    def __init__(
        self,
        task: str,
        config: RunConfig,
        vocab: Vocab,
        params: ModelParams,
        train_docs: Sequence[Document],
        val_docs: Sequence[Document],
        optimizer: Optional[Adam] = None,
        metrics_log: Optional[MetricsLog] = None,
        start_epoch: int = 0,
    ):
        self.task = task
        self.config = config
        self.params = params
        self.head = make_head(task, config, vocab, params)
        self.train_docs = self.head.labeled(train_docs)
        self.val_docs = self.head.labeled(val_docs)
        self.head.prepare(np.random.default_rng([config.seed, HEAD_INIT_STREAM]))
        self.hp = config.finetune.resolved(task)
        self.optimizer = optimizer or Adam(
            params.tensors,
            betas=config.optim.betas,
            eps=config.optim.eps,
            grad_clip=config.optim.grad_clip,
            lr_multipliers=params.lr_multipliers(config.optim.backbone_lr_mult),
        )
        self.metrics_log = metrics_log or MetricsLog()
        self.epoch = start_epoch
        self.steps_per_epoch = max(1, math.ceil(self._unit_count() / self.hp.batch_size))

    def _unit_count(self) -> int:
        if self.task == "qa":
            return len(qa_samples(self.train_docs))
        return len(self.train_docs)

    @property
    def total_steps(self) -> int:
        return self.hp.epochs * self.steps_per_epoch

    def lr(self, step: int) -> float:
        return lr_at(step, self.hp.lr, self.hp.warmup_steps, self.total_steps, self.hp.scheduler)

    def batch_loss(self, batch: Sequence[Any]) -> Tensor:
        total: Optional[Tensor] = None
        for unit in batch:
            loss = self.head.loss(unit, self.hp.label_smoothing)
            total = loss if total is None else total + loss
        return total * (1.0 / len(batch))

    @track_latency("step")
    def train_step(self, step: int, batch: Sequence[Any]) -> float:
        lr = self.lr(step)
        self.optimizer.zero_grad()
        loss = self.batch_loss(batch)
        value = float(loss.data)
        if not math.isfinite(value):
            metrics.increment("nan_aborts")
            raise NumericError(f"non-finite {self.task} loss at step {step}", where=self.task)
        loss.backward()
        self.optimizer.step(lr)
        metrics.set_gauge("last_loss", value)
        metrics.set_gauge("learning_rate", lr)
        return value

    def train_epoch(self, epoch: int, progress: bool = False) -> float:
        rng = np.random.default_rng([self.config.seed, epoch])
        units = self.head.units(self.train_docs, rng)
        order = rng.permutation(len(units))
        size = self.hp.batch_size
        losses = []
        for b in tqdm(range(self.steps_per_epoch), desc=f"{self.task} epoch {epoch}",
                      disable=not progress):
            batch = [units[i] for i in order[b * size:(b + 1) * size]]
            if not batch:
                continue
            step = epoch * self.steps_per_epoch + b
            value = self.train_step(step, batch)
            losses.append(value)
            self.metrics_log.write(step, self.task, value, self.lr(step))
        return float(np.mean(losses)) if losses else 0.0

    @track_latency("eval")
    def validate(self) -> tuple[EvalReport, list[dict]]:
        return self.head.evaluate(self.val_docs)

    def run(
        self,
        epochs: Optional[int] = None,
        on_epoch: Optional[Callable[[int, EvalReport, bool, list[dict]], None]] = None,
        progress: bool = False,
    ) -> FinetuneResult:
        """
        Train until `epochs` (default: the task's configured count), validating after
        every epoch. `on_epoch(epoch, report, improved, records)` lets the caller save
        the best checkpoint and its predictions.
        """
        until = epochs if epochs is not None else self.hp.epochs
        result = FinetuneResult()
        started = time.perf_counter()
        for epoch in range(self.epoch, until):
            loss = self.train_epoch(epoch, progress)
            report, records = self.validate()
            improved = report.value > result.best_value
            if improved:
                result.best_epoch, result.best_value = epoch, report.value
            result.history.append(EpochResult(epoch, loss, report))
            logger.info(
                f"{self.task} epoch {epoch}: loss {loss:.4f}, val {report.metric} {report.value:.4f}"
                + (" (best)" if improved else "")
            )
            self.epoch = epoch + 1
            if on_epoch is not None:
                on_epoch(epoch, report, improved, records)
        logger.info(f"fine-tuned {self.task} in {time.perf_counter() - started:.1f}s")
        return result
