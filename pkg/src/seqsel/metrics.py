"""Frame recall, assignment-optimal DoA error and the Mann-Whitney U test."""

import itertools
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

SENTINEL = 1e9
THRESHOLD = 0.5


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------


def hungarian(cost) -> Tuple[np.ndarray, float]:
    """Minimum-cost perfect matching (Kuhn-Munkres with potentials, O(n^3)).

    Rectangular inputs are padded to square with ``SENTINEL``. Returns
    ``(assignment, total)`` where ``assignment[i]`` is the column for row
    ``i`` of the original matrix (``-1`` when matched to padding) and
    ``total`` sums only real entries.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    if np.isnan(cost).any():
        raise ValueError("cost matrix contains NaN")
    rows, cols = cost.shape
    n = max(rows, cols)
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    a = np.full((n, n), SENTINEL)
    a[:rows, :cols] = cost

    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based, 0 = none)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            row = a[i0 - 1]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = np.full(n, -1, dtype=np.int64)
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    assign = assign[:rows]
    assign[assign >= cols] = -1
    total = 0.0
    for i in range(rows):
        if assign[i] >= 0:
            total += cost[i, assign[i]]
    return assign, total


def brute_force_assignment(cost) -> Tuple[np.ndarray, float]:
    """Exhaustive minimum over all n! assignments of a square matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    best, best_total = None, math.inf
    for perm in itertools.permutations(range(n)):
        total = 0.0
        for i in range(n):
            total += cost[i, perm[i]]
        if total < best_total:
            best, best_total = perm, total
    return np.array(best, dtype=np.int64), best_total


# ---------------------------------------------------------------------------
# angular error and frame metrics
# ---------------------------------------------------------------------------


def great_circle(az1, el1, az2, el2) -> np.ndarray:
    """Angle between directions on the unit sphere (radians, in [0, pi])."""
    az1, el1, az2, el2 = (np.asarray(v, dtype=np.float64) for v in (az1, el1, az2, el2))
    dot = (
        np.cos(el1) * np.cos(az1) * np.cos(el2) * np.cos(az2)
        + np.cos(el1) * np.sin(az1) * np.cos(el2) * np.sin(az2)
        + np.sin(el1) * np.sin(el2)
    )
    return np.arccos(np.clip(dot, -1.0, 1.0))


def frame_recall(activity_hat, activity) -> float:
    """Percent of frames whose predicted source count (> 0.5) equals the true count."""
    activity_hat = np.asarray(activity_hat)
    activity = np.asarray(activity)
    if activity.size == 0:
        raise ValueError("no frames to evaluate")
    pred = (activity_hat > THRESHOLD).sum(axis=-1)
    true = (activity == 1).sum(axis=-1)
    return 100.0 * float(np.mean(pred == true))


@dataclass
class FrameMatch:
    angles: List[float]
    unmatched_pred: int
    unmatched_true: int


def match_frame(gamma_hat, az_hat, el_hat, gamma, az, el) -> FrameMatch:
    """Hungarian-match active predictions to active targets in one frame."""
    pi = np.flatnonzero(np.asarray(gamma_hat) > THRESHOLD)
    ti = np.flatnonzero(np.asarray(gamma) == 1)
    if len(pi) == 0 or len(ti) == 0:
        return FrameMatch([], len(pi), len(ti))
    cost = great_circle(
        np.asarray(az_hat)[pi][:, None], np.asarray(el_hat)[pi][:, None],
        np.asarray(az)[ti][None, :], np.asarray(el)[ti][None, :],
    )
    assign, _ = hungarian(cost)
    angles = [float(cost[i, j]) for i, j in enumerate(assign) if j >= 0]
    return FrameMatch(angles, len(pi) - len(angles), len(ti) - len(angles))


def eval_doa(activity_hat, az_hat, el_hat, activity, az, el) -> List[FrameMatch]:
    """Per-frame matches for arrays shaped ``... x S`` (flattened over frames)."""
    arrays = [np.asarray(x).reshape(-1, np.shape(x)[-1]) for x in (activity_hat, az_hat, el_hat, activity, az, el)]
    return [match_frame(*(a[f] for a in arrays)) for f in range(arrays[0].shape[0])]


@dataclass
class EvalReport:
    frame_recall: float
    doa_errors: List[float] = field(repr=False)
    n_frames: int
    unmatched_pred: int
    unmatched_true: int
    per_frame: Optional[List[Tuple[str, int, int, int, float]]] = field(default=None, repr=False)

    @property
    def doa_median(self) -> float:
        return float(np.median(self.doa_errors)) if self.doa_errors else float("nan")

    @property
    def doa_mean(self) -> float:
        return float(np.mean(self.doa_errors)) if self.doa_errors else float("nan")

    def to_dict(self) -> "OrderedDict":
        def num(x):
            return None if isinstance(x, float) and math.isnan(x) else x

        return OrderedDict(
            [
                ("frame_recall", self.frame_recall),
                ("n_frames", self.n_frames),
                ("n_matched", len(self.doa_errors)),
                ("unmatched_pred", self.unmatched_pred),
                ("unmatched_true", self.unmatched_true),
                ("doa_median_rad", num(self.doa_median)),
                ("doa_mean_rad", num(self.doa_mean)),
                ("doa_median_deg", num(math.degrees(self.doa_median))),
                ("doa_mean_deg", num(math.degrees(self.doa_mean))),
            ]
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_frame_csv(self, path) -> None:
        if self.per_frame is None:
            raise ValueError("report was built without per-frame records")
        with open(path, "w") as fh:
            fh.write("file,chunk,frame,matched,angle_rad\n")
            for stem, chunk, frame, matched, angle in self.per_frame:
                fh.write(f"{stem},{chunk},{frame},{matched},{angle:.9f}\n")


def evaluate(activity_hat, az_hat, el_hat, targets, provenance: Optional[Sequence[Tuple[str, int]]] = None) -> EvalReport:
    """Frame recall and matched DoA errors for ``N x K x S`` predictions."""
    matches = eval_doa(activity_hat, az_hat, el_hat, targets.activity, targets.azimuth, targets.elevation)
    errors = [a for m in matches for a in m.angles]
    per_frame = None
    if provenance is not None:
        k = np.shape(activity_hat)[-2]
        per_frame = []
        for f, m in enumerate(matches):
            stem, chunk = provenance[f // k]
            for j, angle in enumerate(m.angles):
                per_frame.append((stem, chunk, f % k, j, angle))
    return EvalReport(
        frame_recall=frame_recall(activity_hat, targets.activity),
        doa_errors=errors,
        n_frames=len(matches),
        unmatched_pred=sum(m.unmatched_pred for m in matches),
        unmatched_true=sum(m.unmatched_true for m in matches),
        per_frame=per_frame,
    )


# ---------------------------------------------------------------------------
# Mann-Whitney U
# ---------------------------------------------------------------------------


class MannWhitneyResult(NamedTuple):
    u: float  # U statistic of sample a
    p: float
    exact: bool


EXACT_MAX = 8


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def mann_whitney_u(a: Sequence[float], b: Sequence[float], alternative: str = "two-sided") -> MannWhitneyResult:
    """Rank-sum test with midranks for ties.

    Exact permutation distribution when both samples have at most 8 values,
    otherwise the normal approximation with tie-corrected variance and
    continuity correction. ``alternative="less"`` tests whether ``a`` tends to
    be smaller than ``b``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("both samples must be non-empty")
    if alternative not in ("two-sided", "less", "greater"):
        raise ValueError(f"unknown alternative {alternative!r}")
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    if np.all(pooled == pooled[0]):
        return MannWhitneyResult(u, 1.0, n <= EXACT_MAX and m <= EXACT_MAX)

    if n <= EXACT_MAX and m <= EXACT_MAX:
        offset = n * (n + 1) / 2.0
        us = np.array([ranks[list(c)].sum() - offset for c in itertools.combinations(range(n + m), n)])
        total = len(us)
        p_le = np.count_nonzero(us <= u) / total
        p_ge = np.count_nonzero(us >= u) / total
        exact = True
    else:
        N = n + m
        _, counts = np.unique(pooled, return_counts=True)
        tie = float(np.sum(counts ** 3 - counts))
        var = n * m / 12.0 * ((N + 1) - tie / (N * (N - 1)))
        sd = math.sqrt(var)
        mu = n * m / 2.0
        # continuity-corrected tail probabilities
        p_le = 0.5 * math.erfc(-((u + 0.5 - mu) / sd) / math.sqrt(2.0))
        p_ge = 0.5 * math.erfc(((u - 0.5 - mu) / sd) / math.sqrt(2.0))
        exact = False

    if alternative == "less":
        p = p_le
    elif alternative == "greater":
        p = p_ge
    else:
        p = 2.0 * min(p_le, p_ge)
    # keep p in (0, 1]: the normal tail can underflow for huge samples
    p = min(1.0, max(p, np.finfo(float).tiny))
    return MannWhitneyResult(u, p, exact)
