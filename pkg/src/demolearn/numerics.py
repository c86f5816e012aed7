"""Dense numeric primitives: softmax, the alpha-divergence loss, and a
finite-difference gradient checker.

Everything here is pure, float64, and reentrant. The divergence is restricted
to orders alpha in (0, 1]: with a one-hot target the general formula reduces
to a scaled negative log-probability of the true class, and that is the only
order regime in which the reduction stays finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericError, UsageError

PROB_CLIP = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis.

    Shift-invariant via max subtraction, so inputs like [1000, 0] do not
    overflow. Raises UsageError on empty or non-finite input.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise UsageError("softmax requires a nonempty logit vector")
    if not np.all(np.isfinite(logits)):
        raise UsageError("softmax requires finite logits")
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / np.sum(exps, axis=-1, keepdims=True)


def renyi_divergence(y_hat: np.ndarray, target: int, alpha: float) -> float:
    """Divergence of order alpha between a predicted distribution and a
    one-hot target, reduced to closed form.

    For alpha in (0, 1) the value is (alpha / (alpha - 1)) * ln(p_target);
    at alpha = 1 it is the cross-entropy -ln(p_target). The probability is
    clipped at PROB_CLIP before the log so the loss and its gradient stay
    bounded.
    """
    _check_alpha(alpha)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if target < 0 or target >= y_hat.shape[-1]:
        raise UsageError(f"target index {target} out of range for {y_hat.shape[-1]} classes")
    p = max(float(y_hat[target]), PROB_CLIP)
    if alpha == 1.0:
        return -np.log(p)
    return (alpha / (alpha - 1.0)) * np.log(p)


def renyi_grad(y_hat: np.ndarray, target: int, alpha: float) -> np.ndarray:
    """Gradient of renyi_divergence with respect to y_hat.

    Zero everywhere except the target coordinate; zero there too when the
    clip at PROB_CLIP is active (the clipped loss is flat below the floor).
    """
    _check_alpha(alpha)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if target < 0 or target >= y_hat.shape[-1]:
        raise UsageError(f"target index {target} out of range for {y_hat.shape[-1]} classes")
    grad = np.zeros_like(y_hat)
    p = float(y_hat[target])
    if p > PROB_CLIP:
        scale = -1.0 if alpha == 1.0 else alpha / (alpha - 1.0)
        grad[target] = scale / p
    return grad


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise ConfigError(f"divergence order must lie in (0, 1], got {alpha}")


@dataclass
class GradCheckReport:
    """Worst-coordinate comparison between an analytic and a numeric gradient."""

    max_relative_error: float
    worst_coordinate: int
    analytic: float
    numeric: float

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_relative_error < tol


def finite_diff_check(
    loss_fn: Callable[[np.ndarray], float],
    params: np.ndarray,
    analytic_grad: np.ndarray,
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    loss_fn must be deterministic. The relative error at coordinate i is
    |a_i - n_i| / max(1e-8, |a_i| + |n_i|); the report carries the worst one.
    """
    params = np.asarray(params, dtype=np.float64)
    analytic_grad = np.asarray(analytic_grad, dtype=np.float64)
    if params.shape != analytic_grad.shape:
        raise UsageError("analytic gradient shape does not match params")
    numeric = np.zeros_like(params)
    for i in range(params.size):
        bump = np.zeros_like(params)
        bump.flat[i] = step
        up = loss_fn(params + bump)
        down = loss_fn(params - bump)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"loss is non-finite near coordinate {i}")
        numeric.flat[i] = (up - down) / (2.0 * step)
    denom = np.maximum(1e-8, np.abs(analytic_grad) + np.abs(numeric))
    rel = np.abs(analytic_grad - numeric) / denom
    worst = int(np.argmax(rel))
    return GradCheckReport(
        max_relative_error=float(rel.flat[worst]),
        worst_coordinate=worst,
        analytic=float(analytic_grad.flat[worst]),
        numeric=float(numeric.flat[worst]),
    )
