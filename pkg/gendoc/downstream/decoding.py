"""Greedy and beam-search decoding over the shared vocabulary"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import InputValidationError
from ..model import ModelParams, decoder_forward
from ..numerics import Tensor, no_grad
from ..observability import track_latency

# prefixes (each starting with <bos>) -> one row of log-probabilities per prefix
StepFn = Callable[[Sequence[Sequence[int]]], np.ndarray]


@dataclass
class Hypothesis:
    """Generated ids (without <bos>; <eos> included when emitted) and their summed log-prob"""
    tokens: list[int]
    logp: float
    finished: bool = False

    @property
    def score(self) -> float:
        """Log-prob normalized by the number of generated tokens"""
        return self.logp / max(1, len(self.tokens))


def masked_log_softmax(logits: np.ndarray, legal: Optional[np.ndarray]) -> np.ndarray:
    """Log-softmax over the legal ids only; illegal ids get -inf"""
    x = np.asarray(logits, dtype=np.float64)
    if legal is not None:
        x = np.where(legal, x, -np.inf)
    top = x.max(axis=-1, keepdims=True)
    shifted = x - top
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def model_step_fn(
    memory: Tensor,
    expert: str,
    params: ModelParams,
    memory_mask: Optional[np.ndarray] = None,
    legal: Optional[np.ndarray] = None,
) -> StepFn:
    """Step function that re-runs the decoder on every prefix and scores its last position"""

    def step(prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        rows = []
        with no_grad():
            for prefix in prefixes:
                logits = decoder_forward(list(prefix), memory, expert, params, memory_mask)
                rows.append(masked_log_softmax(logits.data[-1], legal))
        return np.stack(rows)

    return step


def greedy_decode(step_fn: StepFn, max_len: int, bos: int, eos: int) -> Hypothesis:
    tokens: list[int] = []
    logp = 0.0
    for _ in range(max_len):
        row = step_fn([[bos] + tokens])[0]
        token = int(np.argmax(row))
        tokens.append(token)
        logp += float(row[token])
        if token == eos:
            return Hypothesis(tokens, logp, finished=True)
    return Hypothesis(tokens, logp, finished=False)


@track_latency("decode")
def beam_search(
    step_fn: StepFn, beam: int, max_len: int, bos: int, eos: int
) -> Hypothesis:
    """
    Length-wise beam search.

    Every step expands each live hypothesis by its `beam` best next ids and keeps the
    `beam` best expansions overall by summed log-prob; expansions ending in <eos> leave
    the beam as finished. Live hypotheses still open at max_len count as finished.
    The result is the finished hypothesis with the best length-normalized log-prob.

    Ties are broken by candidate order (lower id first), so beam=1 reproduces greedy
    decoding token for token.
    """
    if beam < 1:
        raise InputValidationError(f"beam must be >= 1, got {beam}")
    if max_len < 1:
        raise InputValidationError(f"max_len must be >= 1, got {max_len}")
    live = [Hypothesis([], 0.0)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        rows = step_fn([[bos] + h.tokens for h in live])
        candidates: list[Hypothesis] = []
        for h, row in zip(live, rows):
            top = np.argsort(-row, kind="stable")[:beam]
            for token in top:
                if not np.isfinite(row[token]):
                    continue
                candidates.append(Hypothesis(h.tokens + [int(token)], h.logp + float(row[token])))
        order = sorted(range(len(candidates)), key=lambda i: -candidates[i].logp)
        live = []
        for i in order[:beam]:
            cand = candidates[i]
            if cand.tokens[-1] == eos:
                cand.finished = True
                finished.append(cand)
            else:
                live.append(cand)
        if not live:
            break
    finished.extend(live)
    if not finished:
        return Hypothesis([], 0.0)
    # max() keeps the first of equal scores
    return max(finished, key=lambda h: h.score)
