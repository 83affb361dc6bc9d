"""Unified masking pre-training: span sampling, task batches and the multi-task loop"""

from .masking import MaskPlan, sample_spans
from .tasks import TaskBatch, TaskExample, build_cp_batch, build_itp_batch, build_ti_batch
from .trainer import DocumentStream, Pretrainer, StepResult, schedule, unified_step

__all__ = [
    "DocumentStream",
    "MaskPlan",
    "Pretrainer",
    "StepResult",
    "TaskBatch",
    "TaskExample",
    "build_cp_batch",
    "build_itp_batch",
    "build_ti_batch",
    "sample_spans",
    "schedule",
    "unified_step",
]
