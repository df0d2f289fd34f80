"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import Value, backward


def gradcheck(
    f: Callable[[Value], Value],
    x0,
    h: float = 1e-6,
    scale_floor: float = 1.0,
) -> float:
    """Worst coordinate-wise relative error between backward() and central differences.

    ``f`` maps a Value shaped like ``x0`` to a scalar Value.  The error for a
    coordinate is ``|analytic - numeric| / max(|analytic|, |numeric|, scale_floor)``;
    the floor keeps coordinates whose true derivative is ~0 from dividing
    rounding noise by rounding noise.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x0 = np.array(x0, dtype=np.float64)
    x = Value(x0.copy(), requires_grad=True)
    y = f(x)
    if not np.all(np.isfinite(y.data)):
        raise FloatingPointError("f is not finite at x0")
    backward(y)
    analytic = x.grad.reshape(-1)

    numeric = np.empty(x0.size)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] = flat[i] + h
        up = f(Value(probe.reshape(x0.shape))).item()
        probe[i] = flat[i] - h
        down = f(Value(probe.reshape(x0.shape))).item()
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"f is not finite at probe {i}")
        numeric[i] = (up - down) / (2.0 * h)

    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale_floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if flat.size else 0.0
