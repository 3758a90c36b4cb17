"""Finite-difference verification of the autodiff engine.

Central differences in float64 are the independent oracle for every
backward rule; training itself runs in float32, where finite differences
are too noisy to trust.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, no_grad

DEFAULT_EPS = 1e-5
DEFAULT_TOLERANCE = 1e-4
# Guards the relative-error denominator where both gradients are ~0.
_REL_FLOOR = 1e-6


def finite_difference_grad(f, x: Tensor, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central-difference gradient of scalar-valued ``f`` at ``x``.

    ``f`` must be deterministic and is re-evaluated 2*x.size times with
    single elements of ``x.data`` perturbed in place (restored afterwards).
    """
    if x.data.dtype != np.float64:
        raise ValueError("finite differences require float64 tensors")
    flat = x.data.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = _scalar(f(x))
        flat[i] = orig - eps
        f_minus = _scalar(f(x))
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad.reshape(x.data.shape)


def _scalar(out) -> float:
    if isinstance(out, Tensor):
        if out.data.size != 1:
            raise ValueError("objective must be scalar")
        return float(out.data.reshape(()))
    return float(out)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), _REL_FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(f, inputs: dict[str, Tensor], eps: float = DEFAULT_EPS) -> dict[str, float]:
    """Compare backward() against finite differences for each named input.

    ``f`` maps the (already-constructed) tensors to a scalar Tensor; the
    graph is rebuilt once for the analytic pass and the finite-difference
    passes run with gradients disabled. Returns max relative error per name.
    """
    for t in inputs.values():
        t.zero_grad()
    loss = f()
    backward(loss)
    analytic = {}
    for name, t in inputs.items():
        if t.grad is None:
            raise ValueError(f"no gradient reached input {name!r}")
        analytic[name] = t.grad.copy()

    errors = {}
    with no_grad():
        for name, t in inputs.items():
            numeric = finite_difference_grad(lambda _t: f(), t, eps=eps)
            errors[name] = max_relative_error(analytic[name], numeric)
    return errors
