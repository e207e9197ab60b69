"""
Finite-difference verification of analytic gradients.
"""
import logging
from typing import Callable, Dict, Sequence

import numpy as np

from diffcore.errors import ConfigError, NumericError
from diffcore.tensor import Parameter, Tensor, no_grad

logger = logging.getLogger(__name__)


def _evaluate(f: Callable[[], Tensor]) -> float:
    value = f()
    scalar = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(scalar):
        raise NumericError(f"finite difference: objective evaluated to {scalar}")
    return scalar


def coordinate_errors(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> Dict[str, float]:
    """
    Max relative error per tensor between the analytic gradient and central differences.

    Args:
        f: deterministic closure returning a scalar Tensor built from params
        params: tensors to perturb; every one must have requires_grad set
        step: central-difference step

    Returns:
        dict: name (or position) -> max |analytic - numeric| / max(1, |numeric|)
    """
    if step <= 0:
        raise ConfigError(f"finite difference step must be positive, got {step}")
    for p in params:
        if isinstance(p, Parameter):
            p.zero_grad()
        else:
            p.grad = None
    value = f()
    if not np.isfinite(value.item()):
        raise NumericError(f"finite difference: objective evaluated to {value.item()}")
    value.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    errors = {}
    with no_grad():
        for position, (p, grad) in enumerate(zip(params, analytic)):
            worst = 0.0
            for idx in np.ndindex(p.data.shape):
                original = p.data[idx]
                p.data[idx] = original + step
                plus = _evaluate(f)
                p.data[idx] = original - step
                minus = _evaluate(f)
                p.data[idx] = original
                numeric = (plus - minus) / (2.0 * step)
                worst = max(worst, abs(grad[idx] - numeric) / max(1.0, abs(numeric)))
            errors[p.name or f"tensor{position}"] = worst
    return errors


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> float:
    """Max relative error over every coordinate of every tensor in params"""
    errors = coordinate_errors(f, params, step)
    worst = max(errors.values()) if errors else 0.0
    logger.debug(f"finite difference check over {len(errors)} tensors: max rel. error {worst:.3e}")
    return worst
