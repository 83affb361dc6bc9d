"""Adam optimizer with parameter-group learning rates and warmup schedules"""

from __future__ import annotations

import math
from typing import Mapping, Optional

import numpy as np

from .tensor import Tensor

SCHEDULES = ("linear", "cosine", "constant")


def lr_at(
    step: int,
    base_lr: float,
    warmup_steps: int,
    total_steps: int,
    kind: str = "linear",
) -> float:
    """
    Learning rate for a 0-based `step`: linear warmup then linear or cosine decay.

    Args:
        step: optimizer step about to be taken
        base_lr: peak learning rate
        warmup_steps: steps of linear warmup
        total_steps: schedule length (decay reaches 0 at this step)
        kind: 'linear', 'cosine' or 'constant'

    Returns:
        Learning rate
    """
    if kind not in SCHEDULES:
        raise ValueError(f"unknown scheduler kind {kind!r}; expected one of {SCHEDULES}")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    if kind == "constant":
        return base_lr
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, max(0.0, (step - warmup_steps) / span))
    if kind == "linear":
        return base_lr * (1.0 - progress)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    """
    Adam over a named parameter map.

    `lr_multipliers` maps a name prefix (e.g. "backbone.") to a factor applied
    on top of the scheduled learning rate, giving the image backbone its own rate.
    """

    def __init__(
        self,
        params: Mapping[str, Tensor],
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        grad_clip: Optional[float] = 1.0,
        lr_multipliers: Optional[Mapping[str, float]] = None,
    ):
        self.params = dict(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.lr_multipliers = dict(lr_multipliers or {})
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def multiplier(self, name: str) -> float:
        for prefix, factor in self.lr_multipliers.items():
            if name.startswith(prefix):
                return factor
        return 1.0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float((p.grad.astype(np.float64) ** 2).sum())
        return math.sqrt(total)

    def step(self, lr: float) -> float:
        """Apply one update; returns the pre-clip global gradient norm"""
        norm = self.grad_norm()
        scale = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            scale = self.grad_clip / (norm + 1e-12)
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            g = p.grad * scale
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            step_lr = lr * self.multiplier(name)
            p.data = p.data - step_lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
        return norm

    # ---- checkpoint support

    def state_tensors(self) -> dict[str, np.ndarray]:
        state: dict[str, np.ndarray] = {}
        for name in sorted(self.m):
            state[f"optim.m.{name}"] = self.m[name]
            state[f"optim.v.{name}"] = self.v[name]
        return state

    def load_state(self, tensors: Mapping[str, np.ndarray], t: int) -> None:
        self.m, self.v = {}, {}
        for key, value in tensors.items():
            if key.startswith("optim.m."):
                self.m[key[len("optim.m."):]] = np.array(value)
            elif key.startswith("optim.v."):
                self.v[key[len("optim.v."):]] = np.array(value)
        self.t = t
