"""Central finite-difference checks against the tape's analytic gradients.

Detached values are replayed from the unperturbed evaluation while probing,
so the numeric derivative treats them as constants, exactly as the tape does.
"""
from __future__ import annotations

import contextlib
from typing import Callable

import numpy as np

from . import ops
from .errors import CheckInvalidError, UsageError
from .tensor import Tensor, _GradMode, backward, fresh_tape, no_grad


@contextlib.contextmanager
def _record_detached(log: list):
    prev = _GradMode.detach_log
    _GradMode.detach_log = log
    try:
        yield
    finally:
        _GradMode.detach_log = prev


@contextlib.contextmanager
def _replay_detached(values: list):
    prev = _GradMode.detach_replay
    _GradMode.detach_replay = list(values)
    try:
        yield
    finally:
        _GradMode.detach_replay = prev


def _eval(f, x64: np.ndarray, frozen: list) -> np.ndarray:
    with no_grad(), _replay_detached(frozen):
        return np.asarray(f(Tensor(x64.copy())).data, dtype=np.float64)


def _cotangent(shape, seed=1234):
    if shape == ():
        return np.ones((), dtype=np.float64)
    return np.random.default_rng(seed).standard_normal(shape)


def analytic_and_numeric(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6, seed: int = 1234):
    """Return (analytic, numeric) gradients of sum(w * f(x)) on the float64 path.

    ``w`` is a fixed random cotangent (ones for scalar outputs). Differences
    are formed elementwise on f's output before the weighted reduction,
    which keeps cancellation error proportional to |f|, not |sum f|.
    """
    if eps <= 0:
        raise UsageError("eps must be positive")
    x64 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    frozen: list = []
    with fresh_tape():
        xt = Tensor(x64.copy(), requires_grad=True)
        with _record_detached(frozen):
            y = f(xt)
        w = _cotangent(y.shape, seed)
        base = np.asarray(y.data, dtype=np.float64).copy()
        if y.node is None:
            analytic = np.zeros_like(x64)
        else:
            backward(ops.sum(ops.mul(y, Tensor(w))))
            analytic = np.zeros_like(x64) if xt.grad is None else xt.grad.astype(np.float64)

    # same seed, same input -> same output, or the probe is meaningless
    again = _eval(f, x64, frozen)
    if again.shape != base.shape or not np.array_equal(again, base):
        raise CheckInvalidError("function is not deterministic under a frozen seed")

    numeric = np.zeros_like(x64)
    flat = x64.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = _eval(f, x64, frozen)
        flat[i] = orig - eps
        minus = _eval(f, x64, frozen)
        flat[i] = orig
        nflat[i] = np.sum(w * (plus - minus)) / (2 * eps)
    return analytic, numeric


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-8)


def gradient_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6, seed: int = 1234) -> float:
    """Max over coordinates of |a - n| / max(|a|, |n|, 1e-8)."""
    analytic, numeric = analytic_and_numeric(f, x, eps, seed)
    if analytic.size == 0:
        return 0.0
    return float(relative_error(analytic, numeric).max())


def numeric_grad(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6, seed: int = 1234) -> np.ndarray:
    return analytic_and_numeric(f, x, eps, seed)[1]
