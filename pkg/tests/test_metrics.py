"""Tests for assignment, frame recall, matched DoA error and the rank-sum test."""

import json
import math
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from seqsel.dataset import FrameTarget
from seqsel.metrics import (
    SENTINEL,
    brute_force_assignment,
    eval_doa,
    evaluate,
    frame_recall,
    great_circle,
    hungarian,
    mann_whitney_u,
    match_frame,
)


class TestHungarian:
    def test_diagonal(self):
        assign, total = hungarian([[1, 2], [2, 1]])
        assert assign.tolist() == [0, 1] and total == 2

    def test_permuted_zero_diagonal(self):
        cost = np.ones((4, 4))
        perm = [2, 0, 3, 1]
        cost[range(4), perm] = 0.0
        assign, total = hungarian(cost)
        assert assign.tolist() == perm and total == 0.0

    def test_random_against_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            cost = rng.random((4, 4))
            assign, total = hungarian(cost)
            assert total == brute_force_assignment(cost)[1]
            assert sorted(assign.tolist()) == [0, 1, 2, 3]
            assert total == sum(cost[i, assign[i]] for i in range(4))

    @settings(max_examples=50)
    @given(st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_integer_costs_with_ties(self, n, seed):
        cost = np.random.default_rng(seed).integers(0, 3, (n, n)).astype(float)
        assert hungarian(cost)[1] == brute_force_assignment(cost)[1]

    def test_rectangular_wide(self):
        cost = np.array([[5.0, 1.0, 3.0]])
        assign, total = hungarian(cost)
        assert assign.tolist() == [1] and total == 1.0

    def test_rectangular_tall(self):
        cost = np.array([[5.0], [1.0], [3.0]])
        assign, total = hungarian(cost)
        assert assign.tolist() == [-1, 0, -1] and total == 1.0
        assert total < SENTINEL

    def test_empty(self):
        assign, total = hungarian(np.zeros((0, 0)))
        assert assign.size == 0 and total == 0.0

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            hungarian([[0.0, math.nan], [1.0, 2.0]])


class TestFrameRecall:
    def test_count_match(self):
        assert frame_recall([[0.7, 0.3, 0.1, 0.05]], [[0, 0, 1, 0]]) == 100.0

    def test_threshold_is_strict(self):
        assert frame_recall([[0.5, 0.0]], [[1, 0]]) == 0.0
        assert frame_recall([[0.5, 0.0]], [[0, 0]]) == 100.0

    def test_percentage(self):
        hat = np.array([[0.9, 0.1], [0.9, 0.9], [0.1, 0.1], [0.6, 0.2]])
        true = np.array([[1, 0], [1, 0], [0, 0], [0, 1]])
        assert frame_recall(hat, true) == 75.0

    def test_empty(self):
        with pytest.raises(ValueError):
            frame_recall(np.zeros((0, 4)), np.zeros((0, 4)))


def random_frames(rng, n=40, s=4):
    shape = (n, s)
    return (
        rng.random(shape),
        rng.uniform(-np.pi, np.pi, shape),
        rng.uniform(-1.2, 1.2, shape),
        (rng.random(shape) < 0.5).astype(float),
        rng.uniform(-np.pi, np.pi, shape),
        rng.uniform(-1.2, 1.2, shape),
    )


class TestEvalDoa:
    def test_nothing_active(self):
        m = match_frame(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))
        assert m.angles == [] and m.unmatched_pred == m.unmatched_true == 0

    def test_exact_hit(self):
        m = match_frame([0.9, 0.1], [0.4, 2.0], [0.2, 0.0], [1, 0], [0.4, 0.0], [0.2, 0.0])
        assert len(m.angles) == 1 and m.angles[0] == pytest.approx(0.0, abs=1e-7)

    def test_crossed_slots(self):
        m = match_frame([0.9, 0.9], [1.0, -2.0], [0.3, -0.4], [1, 1], [-2.0, 1.0], [-0.4, 0.3])
        np.testing.assert_allclose(m.angles, [0.0, 0.0], atol=1e-7)

    def test_surplus_counted(self):
        m = match_frame([0.9, 0.9, 0.9], [0.0, 1.0, 2.0], [0, 0, 0], [1, 0, 0], [1.0, 0, 0], [0, 0, 0])
        assert m.angles == [pytest.approx(0.0, abs=1e-7)]
        assert (m.unmatched_pred, m.unmatched_true) == (2, 0)

    def test_great_circle_hand_values(self):
        assert great_circle(0.0, 0.0, np.pi / 2, 0.0) == pytest.approx(np.pi / 2)
        assert great_circle(0.0, np.pi / 2, 1.3, np.pi / 2) == pytest.approx(0.0, abs=1e-7)

    def test_slot_permutation_invariance(self):
        rng = np.random.default_rng(0)
        g_hat, az_hat, el_hat, g, az, el = random_frames(rng)
        base = eval_doa(g_hat, az_hat, el_hat, g, az, el)
        p, q = [2, 0, 3, 1], [1, 3, 0, 2]
        moved = eval_doa(g_hat[:, p], az_hat[:, p], el_hat[:, p], g[:, q], az[:, q], el[:, q])
        for a, b in zip(base, moved):
            np.testing.assert_allclose(sorted(a.angles), sorted(b.angles), atol=1e-12)
            assert (a.unmatched_pred, a.unmatched_true) == (b.unmatched_pred, b.unmatched_true)

    def test_matched_sum_is_minimal(self):
        rng = np.random.default_rng(1)
        g_hat, az_hat, el_hat, _, az, el = random_frames(rng, n=30)
        ones = np.ones_like(g_hat)
        for f, m in enumerate(eval_doa(ones, az_hat, el_hat, ones, az, el)):
            cost = great_circle(az_hat[f][:, None], el_hat[f][:, None], az[f][None], el[f][None])
            assert sum(m.angles) == pytest.approx(brute_force_assignment(cost)[1], abs=1e-12)

    def test_recall_ignores_angles(self):
        rng = np.random.default_rng(2)
        g_hat, az_hat, el_hat, g, az, el = random_frames(rng)
        t1 = FrameTarget(g, az, el)
        t2 = FrameTarget(g, az * 0, el * 0)
        assert evaluate(g_hat, az_hat, el_hat, t1).frame_recall == evaluate(g_hat, az_hat * 3, el_hat, t2).frame_recall


class TestReport:
    def report(self, provenance=True):
        rng = np.random.default_rng(3)
        g_hat, az_hat, el_hat, g, az, el = random_frames(rng, n=10)
        shape = (2, 5, 4)
        t = FrameTarget(g.reshape(shape), az.reshape(shape), el.reshape(shape))
        prov = [("a", 0), ("a", 1)] if provenance else None
        return evaluate(g_hat.reshape(shape), az_hat.reshape(shape), el_hat.reshape(shape), t, prov)

    def test_bounds(self):
        r = self.report()
        assert 0.0 <= r.frame_recall <= 100.0
        assert all(0.0 <= e <= math.pi for e in r.doa_errors)
        assert r.n_frames == 10

    def test_json_key_order(self):
        d = json.loads(self.report().to_json())
        assert list(d)[:3] == ["frame_recall", "n_frames", "n_matched"]
        assert d["doa_median_deg"] == pytest.approx(math.degrees(d["doa_median_rad"]))

    def test_json_null_without_matches(self):
        t = FrameTarget.empty((1, 2), 2)
        d = evaluate(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), t).to_dict()
        assert d["doa_median_rad"] is None and d["n_matched"] == 0

    def test_frame_csv(self, tmp_path):
        r = self.report()
        path = tmp_path / "f.csv"
        r.write_frame_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "file,chunk,frame,matched,angle_rad"
        assert len(lines) == 1 + len(r.doa_errors)
        assert lines[1].split(",")[0] == "a"

    def test_frame_csv_needs_provenance(self, tmp_path):
        with pytest.raises(ValueError):
            self.report(provenance=False).write_frame_csv(tmp_path / "f.csv")


class TestMannWhitney:
    def test_hand_case(self):
        r = mann_whitney_u([1, 2], [3, 4], alternative="less")
        assert r.u == 0.0 and r.exact
        assert Fraction(r.p).limit_denominator(100) == Fraction(1, 6)
        assert r.p == 1 / 6
        assert mann_whitney_u([1, 2], [3, 4]).p == 2 / 6

    def test_enumeration_by_hand(self):
        a, b = [1.0, 4.0, 6.0], [2.0, 3.0, 5.0, 7.0]
        u = sum((x > y) + 0.5 * (x == y) for x in a for y in b)
        pooled = sorted(a + b)
        us = [sum(pooled[i] > y for i in c for y in set(pooled) - {pooled[i] for i in c}) for c in combinations(range(7), 3)]
        r = mann_whitney_u(a, b, alternative="greater")
        assert r.u == u
        assert r.p == sum(x >= u for x in us) / len(us)

    def test_identical_samples(self):
        r = mann_whitney_u([1.0, 2.0, 2.0], [1.0, 2.0, 2.0])
        assert r.u == 4.5 and r.p == 1.0

    def test_all_values_equal(self):
        assert mann_whitney_u([3.0] * 20, [3.0] * 12).p == 1.0

    def test_complement(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n, m = rng.integers(1, 15, 2)
            a = rng.integers(0, 6, n).astype(float)
            b = rng.integers(0, 6, m).astype(float)
            assert mann_whitney_u(a, b).u + mann_whitney_u(b, a).u == n * m

    @pytest.mark.parametrize("alternative", ["two-sided", "less", "greater"])
    def test_exact_against_scipy(self, alternative):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n, m = rng.integers(1, 9, 2)
            a, b = rng.normal(size=n), rng.normal(size=m) + 0.5
            ours = mann_whitney_u(a, b, alternative)
            ref = stats.mannwhitneyu(a, b, alternative=alternative, method="exact")
            assert ours.exact
            assert ours.u == ref.statistic
            assert ours.p == pytest.approx(min(ref.pvalue, 1.0), rel=1e-12)

    @pytest.mark.parametrize("alternative", ["two-sided", "less", "greater"])
    def test_normal_against_scipy(self, alternative):
        rng = np.random.default_rng(2)
        for _ in range(30):
            a = rng.integers(0, 20, rng.integers(9, 60)).astype(float)
            b = rng.integers(2, 22, rng.integers(9, 60)).astype(float)
            ours = mann_whitney_u(a, b, alternative)
            ref = stats.mannwhitneyu(a, b, alternative=alternative, method="asymptotic", use_continuity=True)
            assert not ours.exact
            assert ours.u == ref.statistic
            assert ours.p == pytest.approx(ref.pvalue, rel=1e-9)

    @settings(max_examples=100)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.lists(st.floats(-5, 5), min_size=1, max_size=12))
    def test_p_in_unit_interval(self, a, b):
        assert 0.0 < mann_whitney_u(a, b).p <= 1.0

    def test_empty_sample(self):
        with pytest.raises(ValueError):
            mann_whitney_u([], [1.0])

    def test_bad_alternative(self):
        with pytest.raises(ValueError):
            mann_whitney_u([1.0], [2.0], alternative="bigger")
