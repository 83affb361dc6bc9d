"""Configuration - process settings from the environment and validated run configs"""

from __future__ import annotations

import json
from math import gcd
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from .errors import ConfigError

TASKS = ("ti", "itp", "cp")
FINETUNE_TASKS = ("qa", "detect", "ner", "classify")


class Settings(BaseSettings):
    """Process settings loaded from environment (GENDOC_*)"""

    # Worker threads for the ordered prefetch queue
    threads: int = 1

    # Logging
    log_level: str = "INFO"
    log_json: bool = True

    # Force 64-bit tensors everywhere (gradient-check style runs)
    float64: bool = False

    model_config = SettingsConfigDict(
        env_prefix="GENDOC_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


settings = Settings()


# ============ Run configuration sections ============

MODEL_PRESETS: dict[str, dict[str, Any]] = {
    "tiny": {"d_model": 32, "encoder_layers": 2, "decoder_layers": 2, "heads": 4, "image_size": 64},
    "desk": {"d_model": 64, "encoder_layers": 3, "decoder_layers": 3, "heads": 4, "image_size": 64},
    "base": {
        "d_model": 768, "encoder_layers": 6, "decoder_layers": 6, "heads": 12, "image_size": 448,
    },
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Section):
    """Transformer dimensions; explicit fields override the chosen preset"""

    preset: Literal["tiny", "desk", "base"] = "tiny"
    d_model: int = 32
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    image_size: int = 64
    backbone_channels: tuple[int, int] = (16, 32)
    rel_half_window: int = 32
    max_text_positions: int = 1024
    max_decoder_positions: int = 512
    disentangled: bool = True
    init_std: float = 0.02

    @model_validator(mode="before")
    @classmethod
    def apply_preset(cls, data: Any) -> Any:
        if isinstance(data, dict):
            preset = data.get("preset", "tiny")
            if preset in MODEL_PRESETS:
                return {**MODEL_PRESETS[preset], **data}
        return data

    @model_validator(mode="after")
    def check_dims(self) -> "ModelConfig":
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.image_size % 8:
            raise ValueError(f"image_size {self.image_size} must be a multiple of the backbone stride 8")
        if self.rel_half_window < 1:
            raise ValueError("rel_half_window must be >= 1")
        if self.encoder_layers < 0 or self.decoder_layers < 1:
            raise ValueError("need encoder_layers >= 0 and decoder_layers >= 1")
        return self

    @property
    def grid(self) -> int:
        return self.image_size // 8


class VocabConfig(_Section):
    mode: Literal["char", "word"] = "char"
    subword_size: int = 512
    visual_tokens: int = 64
    layout_bins: int = 1000
    detection_layout_bins: int = 2000
    classes: list[str] = Field(default_factory=lambda: ["text", "title", "table", "list", "figure"])

    @field_validator("layout_bins", "detection_layout_bins")
    @classmethod
    def at_least_two(cls, v: int) -> int:
        if v < 2:
            raise ValueError("layout bins must be >= 2")
        return v


class CorpusSpec(_Section):
    """Deterministic synthetic corpus description"""

    seed: int = 0
    documents: int = 64
    page_size: int = 256
    word_pool: int = 400
    words_min: int = 80
    words_max: int = 120
    archetypes: list[str] = Field(default_factory=lambda: ["letter", "form", "table", "receipt"])
    qa_pairs: int = 3

    @model_validator(mode="after")
    def check_ranges(self) -> "CorpusSpec":
        if self.documents < 1:
            raise ValueError("documents must be >= 1")
        if not 0 < self.words_min <= self.words_max:
            raise ValueError("need 0 < words_min <= words_max")
        if not self.archetypes:
            raise ValueError("at least one archetype required")
        return self

    @property
    def class_count(self) -> int:
        return len(self.archetypes)


class VQVAEConfig(_Section):
    d_code: int = 16
    hidden: int = 32
    beta: float = 0.25
    steps: int = 200
    batch_size: int = 8
    lr: float = 2e-3
    log_window: int = 20


class PretrainConfig(_Section):
    steps: int = 1000
    batch_sizes: list[int] = Field(default_factory=lambda: [8, 5, 2])
    weights: list[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0])
    active_tasks: list[Literal["ti", "itp", "cp"]] = Field(default_factory=lambda: list(TASKS))
    poisson_lambda: float = 3.0
    ti_ratio: float = 0.3
    cp_ratio: float = 0.2
    itp_ratio: float = 0.5
    itp_masked_only: bool = False
    max_text_len: int = 512
    log_every: int = 10
    checkpoint_every: int = 100

    @model_validator(mode="after")
    def check_tasks(self) -> "PretrainConfig":
        if len(self.batch_sizes) != 3 or any(b <= 0 for b in self.batch_sizes):
            raise ValueError("batch_sizes needs three positive entries (ti, itp, cp)")
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise ValueError("weights needs three non-negative entries (ti, itp, cp)")
        if not self.active_tasks:
            raise ValueError("active_tasks must not be empty")
        for name in ("ti_ratio", "cp_ratio", "itp_ratio"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")
        return self

    def size_of(self, task: str) -> int:
        return self.batch_sizes[TASKS.index(task)]

    def weight_of(self, task: str) -> float:
        return self.weights[TASKS.index(task)]


class TaskHyperParams(BaseModel):
    epochs: int
    batch_size: int
    lr: float
    scheduler: Literal["linear", "cosine", "constant"]
    warmup_steps: int
    label_smoothing: float


# Desk-scale mirror of the per-task fine-tuning table
TASK_DEFAULTS: dict[str, dict[str, Any]] = {
    "qa": {"epochs": 10, "batch_size": 8, "lr": 5e-4, "scheduler": "cosine", "warmup_steps": 20,
           "label_smoothing": 0.1},
    "detect": {"epochs": 20, "batch_size": 8, "lr": 1e-3, "scheduler": "linear", "warmup_steps": 50,
               "label_smoothing": 0.0},
    "ner": {"epochs": 50, "batch_size": 8, "lr": 1e-3, "scheduler": "linear", "warmup_steps": 20,
            "label_smoothing": 0.0},
    "classify": {"epochs": 10, "batch_size": 8, "lr": 5e-4, "scheduler": "linear", "warmup_steps": 20,
                 "label_smoothing": 0.1},
}


class FinetuneConfig(_Section):
    """Unset fields fall back to TASK_DEFAULTS for the task being fine-tuned"""

    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    lr: Optional[float] = None
    scheduler: Optional[Literal["linear", "cosine", "constant"]] = None
    warmup_steps: Optional[int] = None
    label_smoothing: Optional[float] = None
    beam: int = 4
    max_answer_len: int = 200
    qa_doc_len: int = 800
    max_objects: int = 60
    augment: bool = True
    entity_labels: list[str] = Field(default_factory=lambda: ["item", "price", "total"])

    def resolved(self, task: str) -> TaskHyperParams:
        if task not in TASK_DEFAULTS:
            raise ConfigError(f"unknown fine-tuning task {task!r}; expected one of {FINETUNE_TASKS}")
        values = dict(TASK_DEFAULTS[task])
        for key in values:
            override = getattr(self, key)
            if override is not None:
                values[key] = override
        return TaskHyperParams(**values)


class OptimConfig(_Section):
    lr: float = 1e-3
    backbone_lr_mult: float = 2.5
    warmup_steps: int = 50
    scheduler: Literal["linear", "cosine", "constant"] = "linear"
    grad_clip: float = 1.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


class PathsConfig(_Section):
    corpus_dir: Path = Path("data/corpus")
    run_dir: Path = Path("runs/default")

    @property
    def vocab_file(self) -> Path:
        return self.run_dir / "vocab.txt"

    @property
    def metrics_file(self) -> Path:
        return self.run_dir / "metrics.jsonl"


class RunConfig(BaseSettings):
    """
    Full run configuration.

    Read from a dotenv-style key-value file with `__` as section delimiter:

        seed=7
        model__preset=tiny
        pretrain__batch_sizes=[8,5,2]
    """

    seed: int = 0
    model: ModelConfig = Field(default_factory=ModelConfig)
    vocab: VocabConfig = Field(default_factory=VocabConfig)
    corpus: CorpusSpec = Field(default_factory=CorpusSpec)
    vqvae: VQVAEConfig = Field(default_factory=VQVAEConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    model_config = SettingsConfigDict(
        env_nested_delimiter="__",
        env_file_encoding="utf-8",
        extra="forbid",
        protected_namespaces=(),
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        # Only explicit kwargs and the --config file; the process env never leaks in
        return init_settings, dotenv_settings

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True)


def load_run_config(path: Optional[Path] = None, **overrides: Any) -> RunConfig:
    """
    Build a validated RunConfig from an optional key-value file plus keyword overrides.

    Raises:
        ConfigError: missing file, unknown key or invalid value
    """
    try:
        if path is None:
            return RunConfig(_env_file=None, **overrides)
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return RunConfig(_env_file=path, **overrides)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e


def config_from_json(text: str) -> RunConfig:
    """Inverse of RunConfig.to_json (checkpoint snapshots)"""
    try:
        return RunConfig(_env_file=None, **json.loads(text))
    except (ValidationError, json.JSONDecodeError) as e:
        raise ConfigError(f"invalid stored run config: {e}") from e


def reduce_ratio(sizes: list[int]) -> list[int]:
    """Divide batch sizes by their gcd (640:384:112 -> 40:24:7)"""
    divisor = 0
    for s in sizes:
        divisor = gcd(divisor, int(s))
    if divisor == 0:
        return list(sizes)
    return [int(s) // divisor for s in sizes]
