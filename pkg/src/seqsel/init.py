"""Parameter initialization."""

from typing import Sequence

import numpy as np

from .autodiff import Tensor


def kaiming_init(shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> Tensor:
    """He-normal weights: N(0, sqrt(2 / fan_in))."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(shape)), requires_grad=True)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True)


def ones(shape: Sequence[int]) -> Tensor:
    return Tensor(np.ones(tuple(shape)), requires_grad=True)
