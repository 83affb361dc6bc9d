"""Command line: gendoc gen-data | pretrain | finetune | eval | grad-check"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .config import FINETUNE_TASKS, RunConfig, load_run_config, settings
from .data import SPLITS, write_corpus
from .errors import ConfigError, GenDocError
from .jobs import run_evaluation, run_finetuning, run_grad_check, run_pretraining
from .jobs.gradcheck import summarize
from .numerics import precision
from .observability import get_logger, metrics, setup_logging

logger = get_logger("cli")


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2, default=str))


def _config(args: argparse.Namespace, **overrides: Any) -> RunConfig:
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_run_config(args.config, **overrides)


def cmd_gen_data(args: argparse.Namespace) -> int:
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["corpus"] = {"seed": args.seed}
    config = _config(args, **overrides)
    out = Path(args.out) if args.out else config.paths.corpus_dir
    manifest = write_corpus(config.corpus, out, force=args.force)
    _emit({"out": str(out), "splits": {k: len(v) for k, v in manifest["splits"].items()}})
    return 0


def _run_dir(args: argparse.Namespace) -> dict[str, Any]:
    return {"paths": {"run_dir": str(args.out)}} if args.out else {}


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = _config(args, **_run_dir(args))
    stats = run_pretraining(config, resume=args.resume, steps=args.steps, progress=args.progress)
    _emit(stats)
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    if args.init is None and args.resume is None:
        raise ConfigError("finetune needs --init CHECKPOINT (or --resume)")
    config = _config(args, **_run_dir(args))
    stats = run_finetuning(args.task, config, init=args.init, resume=args.resume, epochs=args.epochs,
                           progress=args.progress)
    _emit(stats)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args, **_run_dir(args))
    report, path = run_evaluation(args.task, config, args.checkpoint, split=args.split, out=args.report)
    _emit({"task": args.task, "split": args.split, "metric": report.metric, "value": report.value,
           "extra": report.extra, "report": str(path)})
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    config = _config(args)
    reports = run_grad_check(config, float64=args.float64)
    summary = summarize(reports)
    _emit(summary)
    return 0 if summary["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gendoc", description="Desk-scale multimodal document model")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key-value run config file")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", type=Path, help="output directory (corpus or run dir)")
    common.add_argument("--progress", action="store_true", help="show progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate the synthetic corpus")
    p.add_argument("--force", action="store_true", help="replace an existing corpus directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", parents=[common], help="VQ-VAE + unified masking pre-training")
    p.add_argument("--resume", type=Path, help="continue from a pre-training checkpoint")
    p.add_argument("--steps", type=int, help="stop after this step (default: config)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="fine-tune one downstream task")
    p.add_argument("task", choices=FINETUNE_TASKS)
    p.add_argument("--init", type=Path, help="pre-trained checkpoint")
    p.add_argument("--resume", type=Path, help="continue from a last.gdck of this task")
    p.add_argument("--epochs", type=int, help="stop after this epoch (default: task setting)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("task", choices=FINETUNE_TASKS)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--report", type=Path, help="report JSON path (default: <run_dir>/eval/)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient check")
    p.add_argument("--float64", action="store_true", help="64-bit check (tolerance 1e-5)")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(settings.log_level, settings.log_json)
    dtype = contextlib.nullcontext() if not settings.float64 else precision(np.float64)
    try:
        with dtype:
            return args.func(args)
    except GenDocError as e:
        metrics.increment("error_count")
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
