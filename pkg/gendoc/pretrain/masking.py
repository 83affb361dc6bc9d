"""Poisson span sampling over OCR words"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputValidationError

MAX_PLACEMENT_FAILURES = 100


@dataclass
class MaskPlan:
    """Sorted, disjoint (start, length) spans over word positions"""
    spans: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.spans = sorted((int(s), int(n)) for s, n in self.spans)
        prev_end = 0
        for start, length in self.spans:
            if length < 1 or start < prev_end:
                raise InputValidationError(f"mask spans overlap or are empty: {self.spans}")
            prev_end = start + length

    @property
    def total(self) -> int:
        return sum(length for _, length in self.spans)

    def __len__(self) -> int:
        return len(self.spans)

    def covered(self) -> set[int]:
        return {i for start, length in self.spans for i in range(start, start + length)}


def mask_budget(n_tokens: int, ratio: float) -> int:
    return int(math.floor(ratio * n_tokens + 0.5))


def sample_span_length(lam: float, rng: np.random.Generator) -> int:
    """Zero-truncated Poisson draw"""
    while True:
        length = int(rng.poisson(lam))
        if length > 0:
            return length


def sample_spans(n_tokens: int, ratio: float, lam: float, rng: np.random.Generator) -> MaskPlan:
    """
    Place Poisson-length spans at uniform non-overlapping starts until the masked
    total reaches round(ratio · n_tokens) or 100 placements in a row fail. The last
    span may overshoot the budget.
    """
    if not 0.0 < ratio < 1.0:
        raise InputValidationError(f"mask ratio must be in (0, 1), got {ratio}")
    budget = mask_budget(n_tokens, ratio)
    if n_tokens <= 0 or budget == 0:
        return MaskPlan()
    occupied = np.zeros(n_tokens, dtype=bool)
    spans: list[tuple[int, int]] = []
    total = failures = 0
    while total < budget and failures < MAX_PLACEMENT_FAILURES:
        length = sample_span_length(lam, rng)
        if length > n_tokens:
            failures += 1
            continue
        start = int(rng.integers(0, n_tokens - length + 1))
        if occupied[start:start + length].any():
            failures += 1
            continue
        occupied[start:start + length] = True
        spans.append((start, length))
        total += length
        failures = 0
    return MaskPlan(spans)
