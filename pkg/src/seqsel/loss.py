"""Localization loss: activity cross-entropy plus permutation-minimized DoA error."""

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .dataset import FrameTarget
from .model import SelOutput

MAX_PERMUTATION_SLOTS = 6


@dataclass
class LossBreakdown:
    total: Tensor
    activity: float
    doa: float
    permutation: np.ndarray  # ... x K x S, prediction slot feeding each target slot

    @property
    def value(self) -> float:
        return self.total.item()


def unit_vectors(azimuth, elevation) -> Tuple[Tensor, Tensor, Tensor]:
    ce = ad.cos(elevation)
    return ce * ad.cos(azimuth), ce * ad.sin(azimuth), ad.sin(elevation)


def doa_error(az_hat, el_hat, az, el, literal: bool = False) -> Tensor:
    """Great-circle angle between predicted and true directions, elementwise.

    The default uses the 3-D unit-vector dot product. ``literal=True`` instead
    evaluates ``arccos(sin az' sin az + cos az' cos az cos(el - el'))``, which
    puts azimuth in the latitude role.
    """
    az_hat, el_hat, az, el = (as_tensor(v) for v in (az_hat, el_hat, az, el))
    if literal:
        inner = ad.sin(az_hat) * ad.sin(az) + ad.cos(az_hat) * ad.cos(az) * ad.cos(el - el_hat)
        return ad.arccos_clamped(inner)
    xh, yh, zh = unit_vectors(az_hat, el_hat)
    x, y, z = unit_vectors(az, el)
    return ad.arccos_clamped(xh * x + yh * y + zh * z)


def activity_loss(gamma_hat, gamma) -> Tensor:
    """Binary cross-entropy averaged over the last (slot) axis."""
    gamma_hat = as_tensor(gamma_hat)
    gamma = np.asarray(gamma, dtype=np.float64)
    pos = ad.log_clamped(gamma_hat)
    neg = ad.log_clamped(ad.sub(1.0, gamma_hat))
    bce = ad.scale(ad.add(pos * gamma, neg * (1.0 - gamma)), -1.0)
    return ad.mean(bce, axis=-1)


def masked_doa_loss(xi, gamma) -> Tensor:
    """(1/S) xi . gamma over the last axis; inactive slots pass no gradient."""
    xi = as_tensor(xi)
    gamma = np.asarray(gamma, dtype=np.float64)
    return ad.scale(ad.sum(xi * gamma, axis=-1), 1.0 / xi.shape[-1])


@lru_cache(maxsize=None)
def permutations(n: int) -> np.ndarray:
    """All permutations of ``range(n)`` in lexicographic order."""
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)


def pairwise_cost(az_hat, el_hat, az, el, gamma, literal: bool = False) -> Tensor:
    """``cost[..., i, j] = xi(pred i, true j) * gamma_j / S``."""
    az_hat, el_hat = as_tensor(az_hat), as_tensor(el_hat)
    s = az_hat.shape[-1]
    lead = az_hat.shape[:-1]
    col = lead + (s, 1)
    row = lead + (1, s)
    xi = doa_error(
        ad.reshape(az_hat, col),
        ad.reshape(el_hat, col),
        np.reshape(az, row),
        np.reshape(el, row),
        literal=literal,
    )
    return ad.scale(xi * np.reshape(np.asarray(gamma, dtype=np.float64), row), 1.0 / s)


def permuted_doa_loss(az_hat, el_hat, az, el, gamma, literal: bool = False) -> Tuple[Tensor, np.ndarray]:
    """Masked DoA loss minimized over reorderings of the prediction slots.

    Returns the per-frame minimum and, per frame, the permutation ``p`` such
    that prediction ``p[j]`` is matched with target ``j``. Ties go to the
    lexicographically smallest permutation.
    """
    az_hat = as_tensor(az_hat)
    s = az_hat.shape[-1]
    if s > MAX_PERMUTATION_SLOTS:
        raise ValueError(f"S={s} too large for exhaustive permutation search (max {MAX_PERMUTATION_SLOTS})")
    cost = pairwise_cost(az_hat, el_hat, az, el, gamma, literal)
    perms = permutations(s)
    cols = np.arange(s)
    totals = cost.data[..., perms, cols].sum(axis=-1)  # ... x P
    best = perms[np.argmin(totals, axis=-1)]  # ... x S
    picked = ad.take_along_axis(cost, best[..., None, :], axis=-2)  # ... x 1 x S
    loss = ad.sum(ad.reshape(picked, best.shape), axis=-1)
    return loss, best


def sel_loss(output: SelOutput, targets: FrameTarget, lam: float = 1.0, literal: bool = False) -> LossBreakdown:
    """Frame-averaged activity BCE plus ``lam`` times the permuted DoA loss.

    The activity term keeps the network's slot order.
    """
    if output.activity.shape != targets.activity.shape:
        raise ValueError(f"output {output.activity.shape} and target {targets.activity.shape} shapes differ")
    act = ad.mean(activity_loss(output.activity, targets.activity))
    doa_frames, perm = permuted_doa_loss(
        output.azimuth, output.elevation, targets.azimuth, targets.elevation, targets.activity, literal
    )
    doa = ad.mean(doa_frames)
    total = ad.add(act, ad.scale(doa, lam)) if lam != 0 else act
    return LossBreakdown(total, act.item(), doa.item(), perm)
