"""Finite-difference gradient checking, the engine's own test oracle."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(f, x, eps=1e-5):
    """Compare analytic gradients of a scalar function against central
    finite differences.

    ``f`` maps one Tensor to a scalar Tensor and must be pure (no state
    mutation between evaluations). Returns the maximum over elements of
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"grad_check: eps {eps} outside [1e-7, 1e-3]")
    x0 = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    probe = Tensor(x0.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ValueError("grad_check: f must produce a scalar")
    if not np.isfinite(out.data).all():
        raise ValueError("grad_check: f(x) is not finite")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(x0)).item()
        flat[i] = orig - eps
        lo = f(Tensor(x0)).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("grad_check: f(x) is not finite near x")
        nflat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
