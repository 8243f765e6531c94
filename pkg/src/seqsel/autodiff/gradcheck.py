"""Central finite-difference gradient checking."""

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad, reset_tape


def numerical_grad(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """d fn() / d param by central differences, perturbing ``param.data`` in place."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
    return grad


def analytic_grads(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list:
    reset_tape()
    for p in params:
        p.grad = None
    backward(fn())
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """||a - b|| / max(||a|| + ||b||, floor).

    The floor keeps structurally-zero gradients (e.g. a bias feeding batch
    norm) from turning finite-difference noise into a relative error of 1.
    """
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Relative error between backward and finite differences.

    Gradients of all ``params`` are flattened into one vector before
    comparison, so a parameter whose true gradient is zero does not dominate.
    """
    analytic = analytic_grads(fn, params)
    numeric = [numerical_grad(fn, p, step) for p in params]
    return relative_error(
        np.concatenate([a.ravel() for a in analytic]),
        np.concatenate([n.ravel() for n in numeric]),
    )
