"""Embedded oracle suite: gradients, assignment, DoA error, permutation loss."""

import math
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .autodiff.gradcheck import gradcheck
from .dataset import FrameTarget
from .loss import doa_error, pairwise_cost, permuted_doa_loss, sel_loss
from .metrics import brute_force_assignment, hungarian, mann_whitney_u
from .model import ModelConfig, SelModel

OP_TOL = 1e-4
E2E_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<32} max_error={self.max_error:.3e}  tol={self.tolerance:.1e}"


def _param(rng: np.random.Generator, shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from(rng, shape, kinks, margin, low, high) -> np.ndarray:
    """Uniform samples that keep ``margin`` clear of every kink."""
    x = rng.uniform(low, high, size=shape)
    for k in kinks:
        near = np.abs(x - k) < margin
        x[near] = k + np.sign(x[near] - k + 1e-300) * margin
    return x


def op_cases(rng: np.random.Generator) -> List[Tuple[str, Callable[[], Tensor], List[Tensor]]]:
    """``(name, scalar loss closure, params)`` for every differentiable primitive.

    Each loss is a weighted sum so that every output element contributes a
    distinct upstream gradient.
    """
    cases = []

    def weighted(out: Tensor, w: np.ndarray) -> Tensor:
        return ad.sum(out * w)

    shape = (3, 4)
    w = rng.normal(size=shape)
    for kind in ("add", "sub", "mul", "div"):
        a = _param(rng, shape)
        b = Tensor(_away_from(rng, (4,), [0.0], 0.3, -2, 2), requires_grad=True)  # broadcast operand
        cases.append((f"elementwise:{kind}", lambda kind=kind, a=a, b=b: weighted(ad.elementwise(kind, a, b), w), [a, b]))
    domains = {
        "sigmoid": dict(low=-3, high=3),
        "tanh": dict(low=-2, high=2),
        "relu": dict(low=-2, high=2, kinks=[0.0]),
        "sin": dict(low=-3, high=3),
        "cos": dict(low=-3, high=3),
        "arccos-clamped": dict(low=-0.95, high=0.95),
        "log-clamped": dict(low=0.1, high=3),
        "exp": dict(low=-2, high=2),
    }
    for kind, dom in domains.items():
        a = Tensor(_away_from(rng, shape, dom.get("kinks", []), 1e-3, dom["low"], dom["high"]), requires_grad=True)
        cases.append((f"elementwise:{kind}", lambda kind=kind, a=a: weighted(ad.elementwise(kind, a), w), [a]))
    a = _param(rng, shape)
    cases.append(("elementwise:scale-by-constant", lambda a=a: weighted(ad.elementwise("scale-by-constant", a, constant=-2.5), w), [a]))

    ma, mb = _param(rng, (2, 3, 4)), _param(rng, (4, 5))
    wm = rng.normal(size=(2, 3, 5))
    cases.append(("matmul", lambda: weighted(ad.matmul(ma, mb), wm), [ma, mb]))

    t = _param(rng, (2, 3, 4))
    ws = rng.normal(size=(2, 4))
    cases.append(("sum", lambda: weighted(ad.sum(t, axis=1), ws), [t]))
    cases.append(("mean", lambda: weighted(ad.mean(t, axis=1), ws), [t]))
    wr = rng.normal(size=(6, 4))
    cases.append(("reshape", lambda: weighted(ad.reshape(t, (6, 4)), wr), [t]))
    wt = rng.normal(size=(4, 2, 3))
    cases.append(("transpose", lambda: weighted(ad.transpose(t, (2, 0, 1)), wt), [t]))
    wg = rng.normal(size=(2, 2))
    cases.append(("getitem", lambda: weighted(t[:, 1, 1:3], wg), [t]))
    idx = np.array([[[0, 2, 2, 1]], [[1, 1, 0, 2]]])
    wta = rng.normal(size=(2, 1, 4))
    cases.append(("take_along_axis", lambda: weighted(ad.take_along_axis(t, idx, axis=1), wta), [t]))

    u = _param(rng, (2, 2, 4))
    wc = rng.normal(size=(2, 5, 4))
    cases.append(("concat", lambda: weighted(ad.concat([t, u], axis=1), wc), [t, u]))
    c = _param(rng, (2, 3, 4))
    wst = rng.normal(size=(2, 2, 3, 4))
    cases.append(("stack", lambda: weighted(ad.stack([t, c], axis=1), wst), [t, c]))
    wsm = rng.normal(size=(2, 3, 4))
    cases.append(("softmax", lambda: weighted(ad.softmax(t, axis=-1), wsm), [t]))

    x = _param(rng, (2, 3, 5, 2))
    kern = _param(rng, (3, 3, 3, 2), -0.5, 0.5)
    bias = _param(rng, (3,))
    wcv = rng.normal(size=(2, 3, 5, 3))
    cases.append(("conv2d", lambda: weighted(ad.conv2d(x, kern, bias), wcv), [x, kern, bias]))

    # distinct values so no max is near a tie
    xp = Tensor(rng.permutation(48).reshape(2, 2, 6, 2) * 0.1, requires_grad=True)
    wp = rng.normal(size=(2, 2, 3, 2))
    cases.append(("maxpool2d", lambda: weighted(ad.maxpool2d(xp, 1, 2), wp), [xp]))

    xb = _param(rng, (4, 3, 2))
    gamma = _param(rng, (2,), 0.5, 1.5)
    beta = _param(rng, (2,))
    wb = rng.normal(size=(4, 3, 2))
    cases.append(
        ("batchnorm", lambda: weighted(ad.batchnorm(xb, gamma, beta, "train", ad.BatchNormStats(2)), wb), [xb, gamma, beta])
    )
    return cases


def micro_model_case(rng: np.random.Generator, variant: str = "adrenaline"):
    """Full forward plus loss on a tiny config (K=4, L=32, C=2, D_h=4, S=2)."""
    cfg = ModelConfig(
        channels=2, frames=4, bins=32, conv_filters=2, pool_widths=(4, 4, 2), hidden=4, max_sources=2,
        variant=variant, seldnet_hidden=4, seldnet_layers=1,
    )
    model = SelModel(cfg, seed=int(rng.integers(1 << 31)))
    feats = rng.normal(size=(2, 4, 32, 4))
    act = (rng.random((2, 4, 2)) < 0.6).astype(np.float64)
    targets = FrameTarget(
        act, rng.uniform(-math.pi, math.pi, (2, 4, 2)) * act, rng.uniform(-1.0, 1.0, (2, 4, 2)) * act
    )

    def loss():
        return sel_loss(model(feats, train=True), targets).total

    return loss, model.parameters()


def check_gradients(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, params in op_cases(rng):
        err = gradcheck(fn, params)
        results.append(CheckResult(f"grad {name}", err < OP_TOL, err, OP_TOL))
    fn, params = micro_model_case(rng)
    err = gradcheck(fn, params)
    results.append(CheckResult("grad adrenaline forward+loss", err < E2E_TOL, err, E2E_TOL))
    return results


def check_hungarian(trials: int = 1000, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        cost = rng.random((4, 4))
        _, total = hungarian(cost)
        _, best = brute_force_assignment(cost)
        worst = max(worst, abs(total - best))
    return CheckResult("hungarian vs brute force", worst == 0.0, worst, 0.0)


def check_permutation_loss(trials: int = 1000, seed: int = 2, s: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    az_hat = rng.uniform(-math.pi, math.pi, (trials, s))
    el_hat = rng.uniform(-math.pi / 2, math.pi / 2, (trials, s))
    az = rng.uniform(-math.pi, math.pi, (trials, s))
    el = rng.uniform(-math.pi / 2, math.pi / 2, (trials, s))
    gamma = (rng.random((trials, s)) < 0.5).astype(np.float64)
    with ad.no_grad():
        loss, _ = permuted_doa_loss(az_hat, el_hat, az, el, gamma)
        cost = pairwise_cost(az_hat, el_hat, az, el, gamma).data
    worst = max(abs(loss.data[t] - hungarian(cost[t])[1]) for t in range(trials))
    return CheckResult("permutation loss vs hungarian", worst <= 1e-12, worst, 1e-12)


def _unit(az, el) -> np.ndarray:
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def check_doa_error(pairs: int = 10_000, seed: int = 3) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    az1, az2 = rng.uniform(-math.pi, math.pi, (2, pairs))
    el1, el2 = rng.uniform(-math.pi / 2, math.pi / 2, (2, pairs))
    with ad.no_grad():
        got = doa_error(az1, el1, az2, el2).data
        same = doa_error(az1, el1, az1, el1).data
        anti = doa_error(az1, el1, az1 + math.pi, -el1).data
    # oracle: atan2 of cross and dot products is accurate across the whole range
    u, v = _unit(az1, el1), _unit(az2, el2)
    oracle = np.arctan2(np.linalg.norm(np.cross(u, v), axis=-1), np.sum(u * v, axis=-1))
    # the forward clamp at 1 - eps only moves angles below ~4.5e-4 rad
    keep = oracle > 1e-3
    err = float(np.max(np.abs(got[keep] - oracle[keep])))
    return [
        CheckResult("doa error vs unit-vector oracle", err < 1e-9, err, 1e-9),
        CheckResult("doa error identity pairs", float(same.max()) < 1e-3, float(same.max()), 1e-3),
        CheckResult("doa error antipodal pairs", float(np.abs(anti - math.pi).max()) < 1e-6, float(np.abs(anti - math.pi).max()), 1e-6),
    ]


def check_mann_whitney() -> CheckResult:
    res = mann_whitney_u([1, 2], [3, 4], alternative="less")
    err = abs(res.p - 1.0 / 6.0)
    return CheckResult("mann-whitney exact case", err == 0.0 and res.exact, err, 0.0)


def run_all(seed: int = 0) -> List[CheckResult]:
    results = check_gradients(seed)
    results.append(check_hungarian())
    results.append(check_permutation_loss())
    results.extend(check_doa_error())
    results.append(check_mann_whitney())
    return results
