"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(op: Callable[..., Tensor], inputs: Sequence[Tensor],
                    rng: np.random.Generator, h: float = 1e-6) -> dict[int, float]:
    """Compare autodiff and finite-difference gradients of a random projection.

    The op output is reduced to a scalar with fixed random weights so every
    output element contributes. Returns the relative error per input index
    (only inputs with ``requires_grad``).
    """
    out = op(*inputs)
    proj = rng.standard_normal(out.shape)

    def scalar() -> float:
        return float((op(*inputs).data * proj).sum())

    for t in inputs:
        t.grad = None
    out = op(*inputs)
    out.backward(proj.astype(out.dtype))
    errors = {}
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        num = numeric_grad(scalar, t.data, h)
        errors[i] = relative_error(t.grad, num)
    return errors
