"""Evaluation job - task metric of a checkpoint on one corpus split"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from ..checkpoint import load_checkpoint, restore_params
from ..config import RunConfig
from ..data import SPLITS, load_corpus
from ..downstream import make_head
from ..errors import ConfigError, DataError
from ..metrics import EvalReport
from ..observability import get_logger
from .finetune import write_jsonl

logger = get_logger("jobs.evaluate")


def report_path(config: RunConfig, task: str, split: str) -> Path:
    return config.paths.run_dir / "eval" / f"{task}-{split}.json"


def write_report(report: EvalReport, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
                    encoding="utf-8")
    return path


def run_evaluation(
    task: str,
    config: RunConfig,
    checkpoint: Path,
    split: str = "test",
    out: Optional[Path] = None,
) -> tuple[EvalReport, Path]:
    """
    Evaluate `checkpoint` on `split` and write the report JSON (plus predictions
    as JSON lines next to it).

    Raises:
        DataError: a document of the split lacks the task's labels
        ConfigError: the checkpoint has no head for the task, or an unknown split
    """
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
    ckpt = load_checkpoint(checkpoint)
    params, vocab = restore_params(ckpt), ckpt.vocab
    head = make_head(task, config, vocab, params)
    head.check()

    docs = load_corpus(config.paths.corpus_dir, split)
    missing = [d.doc_id for d in docs if not head.has_labels(d)]
    if missing:
        raise DataError(
            f"{len(missing)} of {len(docs)} {split} documents lack {task} labels (first: {missing[0]})"
        )

    report, records = head.evaluate(docs)
    path = write_report(report, out if out is not None else report_path(config, task, split))
    write_jsonl(records, path.with_suffix(".predictions.jsonl"))
    logger.info(f"{task} on {split}: {report.metric} = {report.value:.4f} ({len(docs)} documents)")
    return report, path
