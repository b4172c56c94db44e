"""Central-difference gradient checking for the autodiff engine.

``loss_fn`` must rebuild the whole forward graph from the live parameter
tensors on every call, returning a scalar Tensor; the checker perturbs
``param.data`` in place, so parameters have to be float64 for the stated
tolerances to mean anything.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor

__all__ = ["numeric_gradient", "check_gradients", "max_relative_error"]

# coordinates where both gradients are below this are compared absolutely;
# a pure ratio there would just amplify finite-difference roundoff
SIGNIFICANCE_FLOOR = 1e-6


def numeric_gradient(loss_fn: Callable[[], Tensor], param: Tensor, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of loss_fn w.r.t. every entry of param."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(loss_fn().data)
        flat[i] = orig - step
        lo = float(loss_fn().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = SIGNIFICANCE_FLOOR) -> float:
    """max over coordinates of |a - n| / max(|a|, |n|), with near-zero pairs
    scored as |a - n| / floor so an absolute disagreement still registers."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {n.shape}")
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / scale))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-4,
    floor: float = SIGNIFICANCE_FLOOR,
) -> dict[str, float]:
    """Analytic-vs-numeric max relative error for every named parameter.

    ``floor`` clamps the relative-error denominator: coordinates whose
    gradients sit below it are effectively held to the absolute tolerance
    rtol * floor, since central differences at a fixed step cannot resolve
    tiny gradients to a pure ratio.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ValueError(f"gradient check requires float64 parameters ({name} is {p.data.dtype})")
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {}
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} received no gradient")
        analytic[name] = p.grad.copy()
        p.zero_grad()
    errors = {}
    for name, p in params.items():
        numeric = numeric_gradient(loss_fn, p, step=step)
        errors[name] = max_relative_error(analytic[name], numeric, floor=floor)
    return errors
