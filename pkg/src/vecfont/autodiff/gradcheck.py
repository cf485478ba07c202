"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


class DeterminismError(RuntimeError):
    """The checked function returned different values for identical input."""


def _scalar(f, x) -> float:
    out = f(x)
    v = out.data if isinstance(out, Tensor) else np.asarray(out)
    if v.size != 1:
        raise ValueError(f"grad_check: function must return a scalar, got shape {v.shape}")
    return float(v.reshape(()))


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    indices=None,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` maps ``x`` to a scalar tensor.  ``indices`` optionally restricts the
    comparison to a subset of flat coordinates of ``x``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x.data = np.ascontiguousarray(x.data)
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ValueError(f"grad_check: function must return a scalar, got shape {out.shape}")
    base = float(out.data.reshape(()))
    if _scalar(f, x) != base:
        raise DeterminismError("grad_check: repeated forward passes disagree")
    out.backward()
    analytic = np.zeros(x.size) if x.grad is None else x.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    idx = np.arange(x.size) if indices is None else np.asarray(indices, dtype=int)
    numeric = np.empty(len(idx))
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        fp = _scalar(f, x)
        flat[i] = orig - eps
        fm = _scalar(f, x)
        flat[i] = orig
        numeric[n] = (fp - fm) / (2 * eps)
    x.grad = None
    if len(idx) == 0:
        return 0.0
    return float(relative_error(analytic[idx], numeric).max())
