"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward, default_dtype, no_grad

DENOM_FLOOR = 1e-3


def numerical_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> list:
    grads = []
    with no_grad():
        for t in inputs:
            g = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(fn(*inputs).data)
                flat[i] = orig - h
                fm = float(fn(*inputs).data)
                flat[i] = orig
                gflat[i] = (fp - fm) / (2 * h)
            grads.append(g)
    return grads


def analytic_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list:
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    loss = fn(*inputs)
    backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = DENOM_FLOOR) -> np.ndarray:
    """Elementwise |a-b| / max(|a|, |b|, floor)."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max elementwise relative error between backprop and central differences (64-bit)."""
    with default_dtype("f64"):
        for t in inputs:
            if t.data.dtype != np.float64:
                raise TypeError("gradient checks run in 64-bit mode only")
        ana = analytic_grad(fn, inputs)
        num = numerical_grad(fn, inputs, h)
    return max(float(relative_error(a, n).max()) if a.size else 0.0 for a, n in zip(ana, num))
