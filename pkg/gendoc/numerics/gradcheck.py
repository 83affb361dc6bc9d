"""Finite-difference oracle for reverse-mode gradients"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from ..errors import NumericError
from ..observability import get_logger
from .tensor import Tensor, no_grad, precision

logger = get_logger("numerics")

LossFn = Callable[[Mapping[str, Tensor]], Tensor]


@dataclass
class GradReport:
    """Per-parameter max relative error of reverse-mode vs central-difference gradients"""
    errors: dict[str, float]
    eps: float
    tolerance: float
    dtype: str
    coordinates: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for err in self.errors.values())

    def worst(self) -> tuple[Optional[str], float]:
        if not self.errors:
            return None, 0.0
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    def to_dict(self) -> dict:
        name, err = self.worst()
        return {
            "passed": self.passed,
            "dtype": self.dtype,
            "eps": self.eps,
            "tolerance": self.tolerance,
            "worst_parameter": name,
            "worst_error": err,
            "errors": dict(sorted(self.errors.items())),
            "coordinates": dict(sorted(self.coordinates.items())),
        }


def relative_error(g_ad: np.ndarray, g_fd: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """
    Per-coordinate error scaled by the tensor's largest gradient magnitude.

    Coordinates far below the tensor's gradient scale are compared at that scale, so
    finite-difference rounding on near-zero entries does not dominate the report.
    """
    if g_ad.size == 0:
        return np.zeros(0)
    scale = max(float(np.abs(g_ad).max()), float(np.abs(g_fd).max()), floor)
    return np.abs(g_ad - g_fd) / scale


def grad_check(
    loss_fn: LossFn,
    params: Mapping[str, Tensor],
    eps: Optional[float] = None,
    names: Optional[Iterable[str]] = None,
    float64: bool = True,
    tolerance: Optional[float] = None,
    max_coords: int = 64,
    seed: int = 0,
    floor: Optional[float] = None,
    numeric_fn: Optional[LossFn] = None,
) -> GradReport:
    """
    Compare reverse-mode gradients with central finite differences.

    In 64-bit mode every tensor in `params` is promoted to float64 for both
    passes. In 32-bit mode the analytic gradient is taken in float32 and the
    finite-difference reference is evaluated in float64. Tensors larger than
    `max_coords` elements are checked on a random subset of coordinates.

    Args:
        loss_fn: maps the parameter mapping to a scalar loss; must be deterministic
        params: every tensor the loss reads; all are promoted when 64-bit
        eps: finite-difference step
        names: subset of `params` to check (default: all)
        float64: 64-bit mode
        tolerance: pass threshold on max relative error (1e-5 / 1e-3 by mode)
        max_coords: sampled coordinates per tensor
        seed: sampling seed
        floor: smallest gradient scale a tensor is measured against
        numeric_fn: loss differenced numerically (default: loss_fn); checks a
            surrogate-gradient loss against the function whose gradient it supplies

    Returns:
        GradReport
    """
    eps = eps if eps is not None else 1e-4
    tolerance = tolerance if tolerance is not None else (1e-5 if float64 else 1e-3)
    floor = floor if floor is not None else 1e-6
    numeric_fn = numeric_fn or loss_fn
    checked = list(names) if names is not None else list(params)
    rng = np.random.default_rng(seed)
    originals = {name: t.data for name, t in params.items()}

    def evaluate_ad() -> dict[str, np.ndarray]:
        for t in params.values():
            t.grad = None
        loss = loss_fn(params)
        if not np.isfinite(loss.data).all():
            raise NumericError("non-finite loss before perturbation", where="grad_check")
        loss.backward()
        return {
            name: (params[name].grad.copy() if params[name].grad is not None
                   else np.zeros_like(params[name].data))
            for name in checked
        }

    try:
        if float64:
            for t in params.values():
                t.data = t.data.astype(np.float64)
            with precision(np.float64):
                analytic = evaluate_ad()
        else:
            with precision(np.float32):
                analytic = evaluate_ad()
            for t in params.values():
                t.data = t.data.astype(np.float64)

        errors: dict[str, float] = {}
        coords: dict[str, int] = {}
        with precision(np.float64), no_grad():
            for name in checked:
                tensor = params[name]
                flat = tensor.data.reshape(-1)
                if flat.size <= max_coords:
                    picks = np.arange(flat.size)
                else:
                    picks = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
                numeric = np.empty(len(picks))
                for n, idx in enumerate(picks):
                    saved = flat[idx]
                    flat[idx] = saved + eps
                    f_plus = float(numeric_fn(params).data)
                    flat[idx] = saved - eps
                    f_minus = float(numeric_fn(params).data)
                    flat[idx] = saved
                    if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                        raise NumericError(
                            f"non-finite loss while perturbing {name}[{int(idx)}]", where=name
                        )
                    numeric[n] = (f_plus - f_minus) / (2 * eps)
                ad = analytic[name].reshape(-1)[picks].astype(np.float64)
                scale = max(floor, float(np.abs(analytic[name]).max()) if analytic[name].size else 0.0)
                err = relative_error(ad, numeric, scale)
                errors[name] = float(err.max()) if err.size else 0.0
                coords[name] = int(len(picks))
    finally:
        for name, t in params.items():
            t.data = originals[name]
            t.grad = None

    report = GradReport(
        errors=errors,
        eps=eps,
        tolerance=tolerance,
        dtype="float64" if float64 else "float32",
        coordinates=coords,
    )
    worst_name, worst = report.worst()
    logger.info(
        f"grad_check {'passed' if report.passed else 'FAILED'}: worst {worst_name} = {worst:.3e}"
    )
    return report
