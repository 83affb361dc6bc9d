"""Fine-tuning job - one downstream head from a pre-trained checkpoint, best epoch kept"""

from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from ..checkpoint import Checkpoint, capture, load_checkpoint, restore_optimizer, restore_params, save_checkpoint
from ..config import FINETUNE_TASKS, RunConfig
from ..data import load_corpus
from ..errors import ConfigError
from ..metrics import EvalReport
from ..model import ModelParams, remap_embeddings
from ..observability import MetricsLog, get_logger, log_with_context, metrics
from ..downstream import FineTuner
from ..vocab import Vocab, resize_layout_bins

logger = get_logger("jobs.finetune")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def task_dir(config: RunConfig, task: str) -> Path:
    return config.paths.run_dir / "finetune" / task


def write_jsonl(records: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def model_for_task(task: str, config: RunConfig, ckpt: Checkpoint) -> tuple[ModelParams, Vocab]:
    """
    Parameters and vocabulary of `ckpt`, moved to the detection bin grid when `task`
    is detect and the checkpoint is still on the pre-training grid.

    Raises:
        ConfigError: the checkpoint's model dimensions differ from the config's
    """
    if ckpt.config.model != config.model:
        raise ConfigError("checkpoint was trained with different model dimensions")
    params, vocab = restore_params(ckpt), ckpt.vocab
    bins = config.vocab.detection_layout_bins
    if task == "detect" and vocab.layout_bins != bins:
        wider = resize_layout_bins(vocab, bins)
        params = remap_embeddings(params, vocab, wider)
        logger.info(f"Remapped layout tokens {vocab.layout_bins} -> {bins} bins for detection")
        vocab = wider
    return params, vocab


def run_finetuning(
    task: str,
    config: RunConfig,
    init: Path,
    resume: Optional[Path] = None,
    epochs: Optional[int] = None,
    progress: bool = False,
) -> dict:
    """
    Fine-tune one task.

    Steps:
    1. Load the init checkpoint (or the last epoch checkpoint when resuming)
    2. Train on the train split, validating on val after every epoch
    3. Keep `best.gdck` and `predictions.jsonl` of the best validation epoch,
       and `last.gdck` with optimizer state for resuming

    Returns:
        Job statistics
    """
    if task not in FINETUNE_TASKS:
        raise ConfigError(f"unknown fine-tuning task {task!r}; expected one of {FINETUNE_TASKS}")
    metrics.reset()
    stats: dict = {"started_at": _now(), "task": task}
    log = log_with_context(logger, job="finetune", task=task, seed=config.seed)
    out = task_dir(config, task)

    source = load_checkpoint(resume if resume is not None else init)
    params, vocab = model_for_task(task, config, source)
    start_epoch = int(source.meta.get("epoch", -1)) + 1 if resume is not None else 0
    best = {"value": float(source.meta.get("best_value", -math.inf)) if resume is not None else -math.inf,
            "epoch": int(source.meta.get("best_epoch", -1)) if resume is not None else -1}

    tuner = FineTuner(
        task, config, vocab, params,
        load_corpus(config.paths.corpus_dir, "train"),
        load_corpus(config.paths.corpus_dir, "val"),
        metrics_log=MetricsLog(out / "metrics.jsonl"),
        start_epoch=start_epoch,
    )
    if resume is not None:
        restore_optimizer(source, tuner.optimizer)
        log.info(f"Resuming {task} from {resume} at epoch {start_epoch}")

    def on_epoch(epoch: int, report: EvalReport, _improved: bool, records: list[dict]) -> None:
        improved = report.value > best["value"]
        if improved:
            best["value"], best["epoch"] = report.value, epoch
        meta = {"task": task, "epoch": epoch, "metric": report.metric,
                "best_value": best["value"], "best_epoch": best["epoch"]}
        step = (epoch + 1) * tuner.steps_per_epoch
        save_checkpoint(
            capture(config, vocab, params, step=step, optimizer=tuner.optimizer, meta=meta,
                    rng_state={"seed": config.seed, "step": step, "epoch": epoch + 1}),
            out / "last.gdck",
        )
        if improved:
            save_checkpoint(capture(config, vocab, params, step=step, meta=meta), out / "best.gdck")
            write_jsonl(records, out / "predictions.jsonl")

    result = tuner.run(epochs=epochs, on_epoch=on_epoch, progress=progress)

    stats["epochs_run"] = len(result.history)
    stats["best_epoch"] = best["epoch"]
    stats["best_value"] = best["value"]
    stats["metric"] = result.history[-1].report.metric if result.history else None
    stats["history"] = [
        {"epoch": h.epoch, "loss": h.loss, "value": h.report.value} for h in result.history
    ]
    stats["run_metrics"] = metrics.to_dict()
    stats["completed_at"] = _now()
    return stats
