"""Run orchestration behind the command line: pre-training, fine-tuning, evaluation and gradient checks"""

from .evaluate import run_evaluation
from .finetune import run_finetuning
from .gradcheck import run_grad_check
from .pretrain import run_pretraining

__all__ = [
    "run_evaluation",
    "run_finetuning",
    "run_grad_check",
    "run_pretraining",
]
