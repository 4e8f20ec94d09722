"""Central finite-difference gradient checking.

Only forward evaluations are used, so the result is independent of the
backward rules being checked. Run under ``precision("float64")``.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor


def numerical_grad(loss_fn: Callable[[], Tensor], param: Tensor, step: float = 1e-4, indices=None) -> np.ndarray:
    """d loss / d param by central differences, perturbing ``param.data`` in place.

    ``indices`` restricts the check to some flat indices (others stay NaN).
    """
    flat = param.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + step
        up = float(loss_fn().data)
        flat[i] = orig - step
        down = float(loss_fn().data)
        flat[i] = orig
        out[i] = (up - down) / (2 * step)
    return out.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """``max|a - n| / max(max|a|, max|n|)``, ignoring NaN entries of ``numeric``."""
    mask = ~np.isnan(numeric)
    a, n = np.asarray(analytic)[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max(), floor)
    return float(np.abs(a - n).max() / scale)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Iterable[tuple[str, Tensor]],
    step: float = 1e-4,
    floor: float = 1e-10,
) -> dict[str, float]:
    """Relative error per named parameter between backprop and finite differences.

    ``floor`` bounds the denominator from below, so a tensor whose true
    gradient is zero is judged on absolute rather than relative error.
    """
    params = list(params)
    for _, p in params:
        p.grad = None
    loss_fn().backward()
    errors = {}
    for name, p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        errors[name] = relative_error(analytic, numerical_grad(loss_fn, p, step), floor)
    return errors
