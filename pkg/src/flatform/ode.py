"""Batched adaptive Runge-Kutta (Dormand-Prince 5(4)) with a max-norm error control.

All trajectories in a batch share the step sequence.  This keeps the
truncation error a smooth function of the initial data, so finite differences
taken across a batch (Jacobians of flow maps) are not polluted by step-size
jitter, and the max norm makes each trajectory meet the tolerance on its own.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


class ODEError(RuntimeError):
    pass


def integrate(f: Callable[[float, np.ndarray], np.ndarray], y0: np.ndarray, t0: float, t1: float,
              atol: float = 1e-10, rtol: float = 1e-8, max_steps: int = 20000,
              h0: float | None = None, check: Callable[[np.ndarray], None] | None = None) -> np.ndarray:
    """Integrate y' = f(t, y) from t0 to t1 for a batch y0 of any shape.

    ``check`` is called on every accepted state (e.g. to detect escapes).
    """
    y = np.array(y0, dtype=float, copy=True)
    if t1 == t0 or y.size == 0:
        return y
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    t = t0
    h = span / 8 if h0 is None else min(abs(h0), span)
    k1 = f(t, y)
    steps = 0
    while direction * (t1 - t) > 1e-15 * span:
        if steps >= max_steps:
            raise ODEError("too many steps")
        h = min(h, abs(t1 - t))
        hs = direction * h
        ks = [k1]
        for i in range(1, 7):
            yi = y + hs * sum(a * k for a, k in zip(_A[i], ks))
            ks.append(f(t + _C[i] * hs, yi))
        y_new = y + hs * sum(b * k for b, k in zip(_B[:6], ks[:6]))
        err = hs * sum(e * k for e, k in zip(_E, ks))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = float(np.max(np.abs(err) / scale)) if err.size else 0.0
        if not np.isfinite(en):
            h *= 0.25
            steps += 1
            if h < 1e-14 * span:
                raise ODEError("step size underflow (non-finite derivative)")
            continue
        if en <= 1.0:
            t = t + hs
            y = y_new
            k1 = ks[6]
            if check is not None:
                check(y)
            fac = 5.0 if en == 0 else min(5.0, 0.9 * en ** -0.2)
            h *= fac
        else:
            h *= max(0.2, 0.9 * en ** -0.2)
            if h < 1e-14 * span:
                raise ODEError("step size underflow")
        steps += 1
    return y
