"""Pre-training job - vocabulary, VQ-VAE tokenizer, unified masking steps and checkpoints"""

from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..checkpoint import capture, load_checkpoint, restore_optimizer, restore_params, restore_tokenizer, save_checkpoint
from ..config import RunConfig, settings
from ..data import load_corpus, vocab_texts
from ..entities import Document
from ..errors import ConfigError, NumericError
from ..inputs import prepare_image
from ..model import init_params
from ..observability import MetricsLog, get_logger, log_with_context, metrics
from ..pretrain import Pretrainer
from ..vocab import Vocab, build_vocab
from ..vqvae import train_vqvae

logger = get_logger("jobs.pretrain")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def checkpoint_dir(config: RunConfig) -> Path:
    return config.paths.run_dir / "checkpoints"


def checkpoint_path(config: RunConfig, step: int) -> Path:
    return checkpoint_dir(config) / f"step-{step:06d}.gdck"


def prepare_vocab(config: RunConfig, documents: Sequence[Document]) -> Vocab:
    """
    Load the run's vocabulary file, building and saving it from the corpus on first use.

    Raises:
        ConfigError: the stored vocabulary disagrees with the configured layout bins
    """
    path = config.paths.vocab_file
    if path.is_file():
        vocab = Vocab.load(path)
        if vocab.layout_bins != config.vocab.layout_bins:
            raise ConfigError(
                f"{path} has {vocab.layout_bins} layout bins, config asks for {config.vocab.layout_bins}"
            )
        logger.info(f"Loaded vocabulary from {path} ({vocab.size} ids)")
        return vocab
    vocab = build_vocab(vocab_texts(documents), config.vocab)
    vocab.save(path)
    return vocab


def run_pretraining(
    config: RunConfig,
    resume: Optional[Path] = None,
    steps: Optional[int] = None,
    progress: bool = False,
) -> dict:
    """
    Run pre-training.

    Steps:
    1. Load the corpus and the vocabulary (built from all splits on first run)
    2. Train the VQ-VAE tokenizer on the train pages, or restore it from `resume`
    3. Run unified steps, saving a checkpoint every `checkpoint_every` steps
    4. Save the final checkpoint

    A non-finite loss saves a checkpoint of the failing step before the NumericError
    propagates.

    Returns:
        Job statistics
    """
    metrics.reset()
    stats: dict = {"started_at": _now(), "steps_run": 0, "checkpoints": []}
    log = log_with_context(logger, job="pretrain", seed=config.seed)

    everything = load_corpus(config.paths.corpus_dir)
    train = load_corpus(config.paths.corpus_dir, "train")
    vocab = prepare_vocab(config, everything)

    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config.model != config.model:
            raise ConfigError(f"{resume} was trained with different model dimensions")
        params = restore_params(ckpt)
        tokenizer = restore_tokenizer(ckpt)
        start = ckpt.step
        log.info(f"Resuming from {resume} at step {start}")
    else:
        size = config.model.image_size
        images = [prepare_image(d.image, size) for d in train]
        tokenizer = train_vqvae(images, config.vqvae, vocab.visual_size, seed=config.seed, progress=progress)
        params = init_params(config.model, vocab, np.random.default_rng(config.seed))

    trainer = Pretrainer(
        config, vocab, params, tokenizer, train,
        metrics_log=MetricsLog(config.paths.metrics_file),
        start_step=start,
    )
    if resume is not None:
        restore_optimizer(ckpt, trainer.optimizer)

    def save(step: int) -> None:
        snapshot = capture(
            config, vocab, params,
            step=step,
            optimizer=trainer.optimizer,
            tokenizer=tokenizer,
            rng_state={"seed": config.seed, "step": step, "stream_consumed": step * trainer.per_step},
        )
        stats["checkpoints"].append(str(save_checkpoint(snapshot, checkpoint_path(config, step))))

    until = steps if steps is not None else config.pretrain.steps
    try:
        results = trainer.run(until=until, threads=settings.threads, on_checkpoint=save, progress=progress)
    except NumericError as e:
        log.error(f"Pre-training aborted: {e}; emergency checkpoint saved")
        raise
    if trainer.step_index % config.pretrain.checkpoint_every:
        save(trainer.step_index)

    stats["steps_run"] = len(results)
    stats["final_step"] = trainer.step_index
    stats["final_losses"] = dict(sorted(results[-1].losses.items())) if results else {}
    stats["run_metrics"] = metrics.to_dict()
    stats["completed_at"] = _now()
    return stats
