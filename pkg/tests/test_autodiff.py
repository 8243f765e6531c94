"""Tests for the reverse-mode differentiation engine."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seqsel import autodiff as ad
from seqsel.autodiff import TapeError, Tensor, backward, no_grad, reset_tape
from seqsel.autodiff.gradcheck import gradcheck, numerical_grad, relative_error
from seqsel.autodiff.ops import EPS_ACOS


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@pytest.fixture(autouse=True)
def fresh_tape():
    reset_tape()
    yield
    reset_tape()


class TestTensor:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Tensor([1.0, np.nan])

    def test_rejects_inf(self):
        with pytest.raises(ValueError):
            Tensor(np.inf)

    def test_shape_matches_data(self):
        t = Tensor(np.zeros((2, 3)))
        assert t.shape == (2, 3)
        assert t.size == 6
        assert t.data.dtype == np.float64

    def test_leaf_flag(self):
        a = leaf([1.0])
        b = a * 2.0
        assert a.is_leaf and not b.is_leaf


class TestElementwise:
    def test_sigmoid_zero(self):
        assert ad.sigmoid(Tensor(0.0)).item() == 0.5

    def test_relu_definition(self):
        np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_arccos_at_one_is_finite_with_finite_gradient(self):
        x = leaf([1.0])
        y = ad.arccos_clamped(x)
        assert y.item() == pytest.approx(math.acos(1 - EPS_ACOS))
        backward(ad.sum(y))
        assert np.all(np.isfinite(x.grad))

    def test_arccos_gradient_bounded_at_minus_one(self):
        x = leaf([-1.0])
        backward(ad.sum(ad.arccos_clamped(x)))
        assert np.isfinite(x.grad).all()
        assert abs(x.grad[0]) <= 1.0 / math.sqrt(1 - (1 - EPS_ACOS) ** 2) + 1e-6

    def test_arccos_antipodal_value(self):
        assert ad.arccos_clamped(Tensor(-1.0)).item() == pytest.approx(math.pi, abs=1e-12)

    def test_log_clamped_of_zero_is_finite(self):
        x = leaf([0.0])
        y = ad.log_clamped(x)
        assert np.isfinite(y.data).all()
        backward(ad.sum(y))
        assert np.isfinite(x.grad).all()

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ad.elementwise("cube", Tensor(1.0))

    def test_binary_kind_needs_second_operand(self):
        with pytest.raises(ValueError):
            ad.elementwise("add", Tensor(1.0))

    def test_non_broadcastable_shapes(self):
        with pytest.raises(ValueError):
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))

    def test_broadcast_gradient_sums_over_expanded_axis(self):
        a = leaf(np.ones((3, 2)))
        b = leaf([1.0, 2.0])
        backward(ad.sum(a * b))
        np.testing.assert_array_equal(b.grad, [3.0, 3.0])
        np.testing.assert_array_equal(a.grad, np.tile([1.0, 2.0], (3, 1)))

    @pytest.mark.parametrize("kind", [k for k in ad.ELEMENTWISE_KINDS if k not in ("relu", "arccos-clamped", "log-clamped")])
    def test_gradcheck_smooth_kinds(self, kind):
        rng = np.random.default_rng(hash(kind) % 2**32)
        a = leaf(rng.uniform(0.2, 1.5, (2, 3)))
        b = leaf(rng.uniform(0.5, 1.5, (2, 3)))
        w = rng.normal(size=(2, 3))
        if kind in ("add", "sub", "mul", "div"):
            err = gradcheck(lambda: ad.sum(ad.elementwise(kind, a, b) * w), [a, b])
        else:
            err = gradcheck(lambda: ad.sum(ad.elementwise(kind, a, constant=0.7) * w), [a])
        assert err < 1e-6


class TestMatmul:
    def test_identity(self):
        np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), Tensor([[3.0], [4.0]])).data, [[3.0], [4.0]])

    def test_hand_value(self):
        assert ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data[0, 0] == 11.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_random(self):
        rng = np.random.default_rng(0)
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        w = rng.normal(size=(3, 2))
        assert gradcheck(lambda: ad.sum(ad.matmul(a, b) * w), [a, b]) < 1e-6

    def test_gradient_formula(self):
        rng = np.random.default_rng(1)
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        g = rng.normal(size=(3, 2))
        backward(ad.sum(ad.matmul(a, b) * g))
        np.testing.assert_allclose(a.grad, g @ b.data.T, rtol=1e-12)
        np.testing.assert_allclose(b.grad, a.data.T @ g, rtol=1e-12)


def conv_oracle(x, k, bias):
    """Direct loop cross-correlation with zero padding 1."""
    h, w, _ = x.shape
    co = k.shape[0]
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((h, w, co))
    for i in range(h):
        for j in range(w):
            for o in range(co):
                out[i, j, o] = bias[o]
                for di in range(3):
                    for dj in range(3):
                        out[i, j, o] += np.dot(xp[i + di, j + dj], k[o, di, dj])
    return out


class TestConv2d:
    def test_delta_kernel_is_identity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 5, 2))
        k = np.zeros((2, 3, 3, 2))
        k[0, 1, 1, 0] = 1.0
        k[1, 1, 1, 1] = 1.0
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(2))).data
        np.testing.assert_array_equal(out, x)

    def test_all_ones_two_by_two(self):
        out = ad.conv2d(Tensor(np.ones((2, 2, 1))), Tensor(np.ones((1, 3, 3, 1))), Tensor([0.0])).data
        np.testing.assert_array_equal(out, conv_oracle(np.ones((2, 2, 1)), np.ones((1, 3, 3, 1)), [0.0]))
        np.testing.assert_array_equal(out[..., 0], [[4.0, 4.0], [4.0, 4.0]])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        x, k, b = rng.normal(size=(5, 6, 3)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        np.testing.assert_allclose(ad.conv2d(Tensor(x), Tensor(k), Tensor(b)).data, conv_oracle(x, k, b), rtol=1e-12, atol=1e-12)

    def test_batched_leading_axes(self):
        rng = np.random.default_rng(4)
        x, k, b = rng.normal(size=(2, 3, 4, 5, 2)), rng.normal(size=(3, 3, 3, 2)), rng.normal(size=3)
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b)).data
        np.testing.assert_allclose(out[1, 2], conv_oracle(x[1, 2], k, b), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            ad.conv2d(Tensor(np.zeros((3, 3, 2))), Tensor(np.zeros((1, 3, 3, 1))), Tensor([0.0]))

    def test_gradient(self):
        rng = np.random.default_rng(5)
        x, k, b = leaf(rng.normal(size=(3, 4, 2))), leaf(rng.normal(size=(2, 3, 3, 2))), leaf(rng.normal(size=2))
        w = rng.normal(size=(3, 4, 2))
        assert gradcheck(lambda: ad.sum(ad.conv2d(x, k, b) * w), [x, k, b]) < 1e-5


class TestMaxPool:
    def test_definition(self):
        x = Tensor(np.array([1.0, 3.0, 2.0, 8.0]).reshape(1, 4, 1))
        np.testing.assert_array_equal(ad.maxpool2d(x, 1, 2).data.ravel(), [3.0, 8.0])

    def test_tie_routes_to_first(self):
        x = leaf(np.full((1, 4, 1), 2.0))
        out = ad.maxpool2d(x, 1, 2)
        np.testing.assert_array_equal(out.data.ravel(), [2.0, 2.0])
        backward(ad.sum(out))
        np.testing.assert_array_equal(x.grad.ravel(), [1.0, 0.0, 1.0, 0.0])

    def test_remainder_truncated(self):
        x = Tensor(np.arange(5.0).reshape(1, 5, 1))
        np.testing.assert_array_equal(ad.maxpool2d(x, 1, 2).data.ravel(), [1.0, 3.0])

    def test_full_size_stack_widths(self):
        x = Tensor(np.zeros((1, 1024, 1)))
        for p in (8, 8, 2):
            x = ad.maxpool2d(x, 1, p)
        assert x.shape == (1, 8, 1)

    def test_pool_exceeds_dimension(self):
        with pytest.raises(ValueError):
            ad.maxpool2d(Tensor(np.zeros((1, 2, 1))), 1, 4)

    def test_gradient_away_from_ties(self):
        rng = np.random.default_rng(6)
        x = leaf(rng.permutation(24).reshape(2, 6, 2) * 0.1)
        w = rng.normal(size=(1, 3, 2))
        assert gradcheck(lambda: ad.sum(ad.maxpool2d(x, 2, 2) * w), [x]) < 1e-5


class TestBatchNorm:
    def test_train_normalizes(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(3.0, 2.0, size=(8, 5, 3)))
        out = ad.batchnorm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), "train", ad.BatchNormStats(3)).data
        np.testing.assert_allclose(out.reshape(-1, 3).mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.reshape(-1, 3).var(axis=0), 1.0, atol=1e-4)

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(8)
        beta = np.array([0.5, -1.0])
        out = ad.batchnorm(Tensor(rng.normal(size=(4, 2))), Tensor(np.zeros(2)), Tensor(beta), "train", ad.BatchNormStats(2))
        np.testing.assert_array_equal(out.data, np.broadcast_to(beta, (4, 2)))

    def test_eval_before_train_raises(self):
        with pytest.raises(RuntimeError):
            ad.batchnorm(Tensor(np.zeros((2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), "eval", ad.BatchNormStats(2))

    def test_running_stats_momentum(self):
        stats = ad.BatchNormStats(1)
        g, b = Tensor(np.ones(1)), Tensor(np.zeros(1))
        ad.batchnorm(Tensor(np.array([[1.0], [3.0]])), g, b, "train", stats)
        np.testing.assert_allclose(stats.mean, [2.0])
        ad.batchnorm(Tensor(np.array([[5.0], [7.0]])), g, b, "train", stats)
        np.testing.assert_allclose(stats.mean, [0.9 * 2.0 + 0.1 * 6.0])

    def test_eval_uses_running_stats(self):
        stats = ad.BatchNormStats(1)
        g, b = Tensor(np.ones(1)), Tensor(np.zeros(1))
        ad.batchnorm(Tensor(np.array([[1.0], [3.0]])), g, b, "train", stats)
        out = ad.batchnorm(Tensor(np.array([[2.0]])), g, b, "eval", stats).data
        np.testing.assert_allclose(out, [[0.0]], atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(9)
        x, g, b = leaf(rng.normal(size=(4, 3, 2))), leaf(rng.uniform(0.5, 1.5, 2)), leaf(rng.normal(size=2))
        w = rng.normal(size=(4, 3, 2))
        assert gradcheck(lambda: ad.sum(ad.batchnorm(x, g, b, "train", ad.BatchNormStats(2)) * w), [x, g, b]) < 1e-4


class TestSoftmax:
    def test_equal_scores(self):
        np.testing.assert_allclose(ad.softmax(Tensor([2.0, 2.0, 2.0])).data, [1 / 3] * 3, rtol=1e-15)

    def test_large_scores_stable(self):
        np.testing.assert_array_equal(ad.softmax(Tensor([1000.0, 0.0])).data, [1.0, 0.0])

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-700, 700)))
    def test_sums_to_one(self, x):
        out = ad.softmax(Tensor(x)).data
        assert abs(out.sum() - 1.0) < 1e-9
        assert np.all(out >= 0)

    def test_gradient(self):
        rng = np.random.default_rng(10)
        x = leaf(rng.normal(size=(3, 5)))
        w = rng.normal(size=(3, 5))
        assert gradcheck(lambda: ad.sum(ad.softmax(x) * w), [x]) < 1e-6


class TestConcat:
    def test_single_part(self):
        a = Tensor([1.0, 2.0])
        assert ad.concat([a], axis=0) is a

    def test_values(self):
        np.testing.assert_array_equal(ad.concat([Tensor([1.0, 2.0]), Tensor([3.0])], axis=0).data, [1.0, 2.0, 3.0])

    def test_mismatched_dims(self):
        with pytest.raises(ValueError):
            ad.concat([Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 3)))], axis=0)

    def test_linearity_of_gradient(self):
        a, b = leaf([1.0, 2.0]), leaf([3.0])
        backward(ad.sum(ad.concat([a, b], axis=0)))
        np.testing.assert_array_equal(a.grad, [1.0, 1.0])
        np.testing.assert_array_equal(b.grad, [1.0])


class TestShapeOps:
    def test_getitem_fancy_index_accumulates(self):
        a = leaf([1.0, 2.0, 3.0])
        backward(ad.sum(a[np.array([0, 0, 2])]))
        np.testing.assert_array_equal(a.grad, [2.0, 0.0, 1.0])

    def test_take_along_axis_scatter(self):
        a = leaf([[1.0, 2.0], [3.0, 4.0]])
        out = ad.take_along_axis(a, np.array([[1, 1], [0, 1]]), axis=1)
        np.testing.assert_array_equal(out.data, [[2.0, 2.0], [3.0, 4.0]])
        backward(ad.sum(out))
        np.testing.assert_array_equal(a.grad, [[0.0, 2.0], [1.0, 1.0]])

    def test_transpose_and_reshape_round_trip(self):
        a = leaf(np.arange(6.0).reshape(2, 3))
        out = a.T.reshape(6)
        np.testing.assert_array_equal(out.data, [0, 3, 1, 4, 2, 5])
        backward(ad.sum(out * np.arange(6.0)))
        np.testing.assert_array_equal(a.grad, [[0, 2, 4], [1, 3, 5]])

    def test_stack_gradient(self):
        a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
        backward(ad.sum(ad.stack([a, b], axis=0) * np.array([[1.0, 2.0], [3.0, 4.0]])))
        np.testing.assert_array_equal(a.grad, [1.0, 2.0])
        np.testing.assert_array_equal(b.grad, [3.0, 4.0])


class TestBackward:
    def test_identity_loss(self):
        x = leaf(5.0)
        backward(x)
        assert x.grad == 1.0

    def test_product_rule(self):
        x, y = leaf(2.0), leaf(3.0)
        backward(x * y)
        assert x.grad == 3.0 and y.grad == 2.0

    def test_non_scalar_loss(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(ValueError):
            backward(x * 2.0)

    def test_shared_node_accumulates(self):
        # f = u*u + sin(u), u = x*y  ->  df/dx = (2u + cos u) * y
        x, y = leaf(0.7), leaf(-1.3)
        u = x * y
        backward(u * u + ad.sin(u))
        uv = 0.7 * -1.3
        assert x.grad == pytest.approx((2 * uv + math.cos(uv)) * -1.3, rel=1e-14)
        assert y.grad == pytest.approx((2 * uv + math.cos(uv)) * 0.7, rel=1e-14)

    def test_replay_rejected(self):
        x = leaf(2.0)
        loss = x * x
        backward(loss)
        with pytest.raises(TapeError):
            backward(loss)

    def test_stale_tensor_cannot_join_new_tape(self):
        x = leaf(2.0)
        y = x * x
        backward(y)
        with pytest.raises(TapeError):
            y * x

    def test_no_grad_records_nothing(self):
        x = leaf(2.0)
        with no_grad():
            y = x * x
        assert y.is_leaf and not y.requires_grad

    def test_tape_topological_order(self):
        x = leaf([1.0, 2.0])
        y = ad.exp(x)
        z = ad.sum(y * x)
        tape = ad.current_tape()
        ids = {id(t): t.node_id for t in (y, z)}
        assert ids[id(y)] < ids[id(z)]
        for _, parents, node_id in tape.records:
            for p in parents:
                assert p.node_id is None or p.node_id < node_id

    @settings(max_examples=30, deadline=None)
    @given(st.lists(finite, min_size=2, max_size=6))
    def test_gradients_finite(self, values):
        x = leaf(values)
        loss = ad.sum(ad.arccos_clamped(ad.tanh(x)) + ad.log_clamped(ad.sigmoid(x)))
        backward(loss)
        assert np.all(np.isfinite(x.grad))


class TestGradcheckHelpers:
    def test_numerical_grad_of_square(self):
        x = leaf([1.0, -2.0])
        np.testing.assert_allclose(numerical_grad(lambda: ad.sum(x * x), x), [2.0, -4.0], rtol=1e-9)

    def test_relative_error_floor(self):
        assert relative_error(np.zeros(3), np.full(3, 1e-12)) < 1e-5

    def test_detects_wrong_gradient(self, monkeypatch):
        from seqsel.autodiff import ops

        original = ops.Sin.backward
        monkeypatch.setattr(ops.Sin, "backward", lambda self, g: tuple(-r for r in original(self, g)))
        x = leaf([0.3, 0.9])
        assert gradcheck(lambda: ad.sum(ad.sin(x)), [x]) > 0.5
