"""Oracle and property tests for the tape-based autodiff kernel.

Expected values are either computed by hand (small closed-form cases) or
checked against an independent numpy reference evaluated without the tape.
"""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psakit import core
from psakit.core import (
    ShapeError,
    Tape,
    Tensor,
    UsageError,
    add,
    bce_with_logits,
    channel_max,
    channel_mean,
    concat_channels,
    conv1x1,
    conv2d,
    finite_diff_gradcheck,
    global_avg_pool,
    global_max_pool,
    layer_norm,
    matmul,
    mse_loss,
    mul,
    reduce_sum,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
)


def t(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


class TestTensorBasics:
    def test_float64_and_contiguous(self):
        x = Tensor(np.arange(6, dtype=np.int32).reshape(2, 3))
        assert x.data.dtype == np.float64
        assert x.data.flags["C_CONTIGUOUS"]

    def test_rank_bounds(self):
        Tensor(np.zeros(3))
        Tensor(np.zeros((2, 3, 4, 5)))
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3, 4, 5, 6)))

    def test_scalar_becomes_rank1(self):
        x = Tensor(3.0)
        assert x.shape == (1,)

    def test_uids_monotonic(self):
        a, b = t([1.0]), t([2.0])
        assert b.uid > a.uid


class TestMatmul:
    def test_hand_oracle(self):
        # [[1,2],[3,4]] @ [[5],[6]] = [[17],[39]]
        out = matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[5.0], [6.0]]))
        npt.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))

    def test_rank_enforced(self):
        with pytest.raises(ShapeError):
            matmul(t(np.zeros((2, 3, 4))), t(np.zeros((4, 2))))


class TestConv:
    def test_conv1x1_equals_matmul(self):
        rng = np.random.default_rng(0)
        x = t(rng.standard_normal((5, 4, 3)))
        w = t(rng.standard_normal((7, 5)))
        b = t(rng.standard_normal(7))
        out = conv1x1(x, w, b)
        ref = (w.data @ x.data.reshape(5, 12) + b.data[:, None]).reshape(7, 4, 3)
        npt.assert_allclose(out.data, ref, atol=1e-12, rtol=0)

    def test_conv3x3_delta_kernel_is_identity(self):
        rng = np.random.default_rng(1)
        x = t(rng.standard_normal((3, 6, 5)))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        out = conv2d(x, t(w), stride=1, pad=1)
        npt.assert_array_equal(out.data, x.data)

    def test_conv3x3_ones_kernel_counts_window(self):
        # all-ones 5x5 input, all-ones 3x3 kernel, pad 1:
        # interior 9, edge 6, corner 4
        x = t(np.ones((1, 5, 5)))
        w = t(np.ones((1, 1, 3, 3)))
        out = conv2d(x, w, stride=1, pad=1)
        assert out.data[0, 2, 2] == 9.0
        assert out.data[0, 0, 2] == 6.0
        assert out.data[0, 0, 0] == 4.0

    def test_conv_stride2_shape(self):
        x = t(np.zeros((2, 7, 6)))
        w = t(np.zeros((4, 2, 3, 3)))
        out = conv2d(x, w, stride=2, pad=1)
        assert out.shape == (4, 4, 3)

    def test_conv7x7_matches_loop_reference(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 9, 8))
        w = rng.standard_normal((1, 2, 7, 7))
        out = conv2d(t(x), t(w), stride=1, pad=3)
        xp = np.pad(x, ((0, 0), (3, 3), (3, 3)))
        ref = np.zeros((1, 9, 8))
        for i in range(9):
            for j in range(8):
                ref[0, i, j] = np.sum(xp[:, i : i + 7, j : j + 7] * w[0])
        npt.assert_allclose(out.data, ref, atol=1e-12, rtol=0)

    def test_bad_stride_rejected(self):
        x = t(np.zeros((1, 5, 5)))
        w = t(np.zeros((1, 1, 3, 3)))
        with pytest.raises(ShapeError):
            conv2d(x, w, stride=3, pad=1)


class TestPoolAndReductions:
    def test_gap_oracle(self):
        # mean of [[1,2],[3,4]] is 2.5
        out = global_avg_pool(t([[[1.0, 2.0], [3.0, 4.0]]]))
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 2.5

    def test_gmp_picks_max(self):
        x = t([[[1.0, 7.0], [3.0, 4.0]], [[0.0, -1.0], [5.0, 2.0]]])
        out = global_max_pool(x)
        npt.assert_array_equal(out.data.ravel(), [7.0, 5.0])

    def test_gmp_tie_gradient_goes_to_first(self):
        x = t([[[2.0, 2.0], [0.0, 1.0]]])
        with Tape() as tape:
            y = reduce_sum(global_max_pool(x))
        grads = tape.backward(y)
        npt.assert_array_equal(grads[x.uid], [[[1.0, 0.0], [0.0, 0.0]]])

    def test_channel_mean_max(self):
        x = t(np.arange(12, dtype=np.float64).reshape(3, 2, 2))
        m = channel_mean(x)
        assert m.shape == (1, 2, 2)
        npt.assert_allclose(m.data[0], x.data.mean(axis=0))
        mx = channel_max(x)
        npt.assert_array_equal(mx.data[0], x.data.max(axis=0))

    def test_reduce_sum(self):
        out = reduce_sum(t([[1.0, 2.0], [3.0, 4.0]]))
        assert out.shape == (1,)
        assert out.data[0] == 10.0


class TestSoftmaxSigmoid:
    def test_softmax_oracle(self):
        # softmax([0, ln 3]) = [1/4, 3/4]
        out = softmax(t([0.0, np.log(3.0)]), axis=0)
        npt.assert_allclose(out.data, [0.25, 0.75], atol=1e-15, rtol=0)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        x = t(rng.standard_normal((4, 7)))
        out = softmax(x, axis=1)
        npt.assert_allclose(out.data.sum(axis=1), np.ones(4), atol=1e-12, rtol=0)

    def test_softmax_extreme_logits_finite(self):
        out = softmax(t([1e4, -1e4, 0.0]), axis=0)
        assert np.all(np.isfinite(out.data))
        npt.assert_allclose(out.data.sum(), 1.0, atol=1e-12, rtol=0)

    def test_sigmoid_saturation(self):
        # sigmoid(50) = 1 - eps with eps < 1e-20
        out = sigmoid(t([50.0]))
        eps = 1.0 - out.data[0]
        assert 0.0 <= eps < 1e-20

    def test_sigmoid_extreme_negative_finite(self):
        out = sigmoid(t([-1e4]))
        assert np.isfinite(out.data[0])
        assert out.data[0] >= 0.0

    def test_sigmoid_open_interval(self):
        # stay in the range where float64 can still represent 1 - sigmoid
        out = sigmoid(t([-30.0, 0.0, 30.0]))
        assert np.all(out.data > 0.0)
        assert np.all(out.data < 1.0)


class TestElementwise:
    def test_add_mul_same_shape(self):
        a, b = t([[1.0, 2.0]]), t([[3.0, 4.0]])
        npt.assert_array_equal(add(a, b).data, [[4.0, 6.0]])
        npt.assert_array_equal(mul(a, b).data, [[3.0, 8.0]])

    def test_channel_gate_broadcast(self):
        x = t(np.ones((3, 2, 2)))
        g = t(np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1))
        out = mul(g, x)
        npt.assert_array_equal(out.data[:, 0, 0], [1.0, 2.0, 3.0])

    def test_spatial_gate_broadcast(self):
        x = t(np.ones((3, 2, 2)))
        g = t(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2))
        out = mul(x, g)
        npt.assert_array_equal(out.data[0], [[1.0, 2.0], [3.0, 4.0]])

    def test_scalar_broadcast(self):
        out = add(t([[1.0, 2.0]]), t([5.0]))
        npt.assert_array_equal(out.data, [[6.0, 7.0]])

    def test_disallowed_broadcast_rejected(self):
        with pytest.raises(ShapeError):
            add(t(np.ones((3, 2))), t(np.ones((2, 3))))
        with pytest.raises(ShapeError):
            mul(t(np.ones((3, 1))), t(np.ones((3, 4))))

    def test_relu(self):
        out = relu(t([-1.0, 0.0, 2.0]))
        npt.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_scale(self):
        out = scale(t([2.0, -4.0]), -0.5)
        npt.assert_array_equal(out.data, [-1.0, 2.0])

    def test_concat_channels(self):
        a = t(np.ones((2, 3, 3)))
        b = t(np.zeros((1, 3, 3)))
        out = concat_channels(a, b)
        assert out.shape == (3, 3, 3)
        npt.assert_array_equal(out.data[2], np.zeros((3, 3)))


class TestStructural:
    def test_transpose2d(self):
        x = t([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        out = core.transpose2d(x)
        npt.assert_array_equal(out.data, x.data.T)

    def test_transpose2d_gradcheck(self):
        rng = np.random.default_rng(20)
        x = t(rng.standard_normal((3, 5)))
        probe = t(rng.standard_normal((5, 3)))
        err = finite_diff_gradcheck(
            lambda v: reduce_sum(mul(core.transpose2d(v), probe)), x
        )
        assert err < 1e-4

    def test_stack_select_roundtrip(self):
        rng = np.random.default_rng(21)
        a = t(rng.standard_normal((2, 3, 4)))
        b = t(rng.standard_normal((2, 3, 4)))
        s = core.stack0([a, b])
        assert s.shape == (2, 2, 3, 4)
        npt.assert_array_equal(core.select0(s, 1).data, b.data)

    def test_stack_select_gradcheck(self):
        rng = np.random.default_rng(22)
        x = t(rng.standard_normal((2, 2, 3, 2)))
        probe = t(rng.standard_normal((2, 3, 2)))
        err = finite_diff_gradcheck(
            lambda v: reduce_sum(mul(core.select0(v, 1), probe)), x
        )
        assert err < 1e-4

    def test_stack_mixed_shapes_rejected(self):
        with pytest.raises(ShapeError):
            core.stack0([t(np.zeros((1, 2, 2))), t(np.zeros((1, 2, 3)))])


class TestReshape:
    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(4)
        x = t(rng.standard_normal((2, 3, 4)))
        y = reshape(reshape(x, (6, 4)), (2, 3, 4))
        npt.assert_array_equal(y.data, x.data)

    def test_bad_size(self):
        with pytest.raises(ShapeError):
            reshape(t(np.zeros((2, 3))), (7,))


class TestLayerNorm:
    def test_normalizes_and_affine(self):
        x = t(np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1, 1))
        gamma = t(np.ones(4))
        beta = t(np.zeros(4))
        out = layer_norm(x, gamma, beta)
        assert abs(out.data.mean()) < 1e-12
        assert abs(out.data.std() - 1.0) < 1e-3  # eps keeps it just under 1

    def test_requires_1x1_spatial(self):
        with pytest.raises(ShapeError):
            layer_norm(t(np.zeros((4, 2, 2))), t(np.ones(4)), t(np.zeros(4)))


class TestLosses:
    def test_mse_oracle(self):
        pred = t([[1.0, 2.0]])
        target = t([[0.0, 0.0]])
        out = mse_loss(pred, target)
        assert out.shape == (1,)
        npt.assert_allclose(out.data[0], (1.0 + 4.0) / 2.0, atol=1e-15)

    def test_bce_oracle_zero_logits(self):
        # loss at z=0 is ln 2 regardless of target
        z = t(np.zeros((2, 2)))
        y = t(np.array([[0.0, 1.0], [0.5, 0.25]]))
        out = bce_with_logits(z, y)
        npt.assert_allclose(out.data[0], np.log(2.0), atol=1e-15)

    def test_bce_extreme_logits_finite(self):
        z = t([[1e3, -1e3]])
        y = t([[0.0, 1.0]])
        out = bce_with_logits(z, y)
        assert np.isfinite(out.data[0])

    def test_bce_gradient_is_sigmoid_minus_target(self):
        rng = np.random.default_rng(5)
        z = t(rng.standard_normal((3, 4)))
        y = t(rng.uniform(size=(3, 4)))
        with Tape() as tape:
            loss = bce_with_logits(z, y)
        grads = tape.backward(loss)
        sig = 1.0 / (1.0 + np.exp(-z.data))
        npt.assert_allclose(grads[z.uid], (sig - y.data) / 12.0, atol=1e-12, rtol=0)


class TestTape:
    def test_records_in_execution_order(self):
        a, b = t([1.0]), t([2.0])
        with Tape() as tape:
            c = add(a, b)
            d = mul(c, c)
            e = reduce_sum(d)
        uids = [r.output.uid for r in tape.records]
        assert uids == sorted(uids)
        assert uids[-1] == e.uid

    def test_no_recording_without_tape(self):
        a, b = t([1.0]), t([2.0])
        tape = Tape()
        with tape:
            pass
        add(a, b)
        assert len(tape.records) == 0

    def test_backward_requires_scalar(self):
        x = t([1.0, 2.0])
        with Tape() as tape:
            y = relu(x)
        with pytest.raises(UsageError):
            tape.backward(y)

    def test_backward_requires_output_on_tape(self):
        x = t([1.0])
        with Tape() as tape:
            relu(x)
        stranger = reduce_sum(t([3.0]))
        with pytest.raises(UsageError):
            tape.backward(stranger)

    def test_backward_deterministic_repeat(self):
        rng = np.random.default_rng(6)
        x = t(rng.standard_normal((3, 4)))
        with Tape() as tape:
            y = reduce_sum(mul(softmax(x, axis=1), x))
        g1 = tape.backward(y)[x.uid].copy()
        g2 = tape.backward(y)[x.uid].copy()
        npt.assert_array_equal(g1, g2)

    def test_replay_bit_exact(self):
        rng = np.random.default_rng(7)
        x = t(rng.standard_normal((2, 5, 4)))
        w = t(rng.standard_normal((3, 2, 3, 3)))
        with Tape() as tape:
            y = conv2d(x, w, stride=1, pad=1)
            z = reduce_sum(relu(y))
        recorded = [r.output.data.copy() for r in tape.records]
        replayed = tape.replay()
        for got, want in zip(replayed, recorded):
            npt.assert_array_equal(got, want)
        assert z.data[0] == recorded[-1][0]

    def test_fanout_accumulates(self):
        x = t([3.0])
        with Tape() as tape:
            y = reduce_sum(mul(x, x))  # d/dx x^2 = 2x
        grads = tape.backward(y)
        npt.assert_allclose(grads[x.uid], [6.0], atol=1e-12)

    def test_parameter_grad_deposited(self):
        p = core.Parameter("w", t([2.0]))
        with Tape() as tape:
            y = reduce_sum(mul(p.value, p.value))
        tape.backward(y)
        npt.assert_allclose(p.grad, [4.0], atol=1e-12)


class TestGradcheck:
    def test_sum_of_squares_tight(self):
        rng = np.random.default_rng(8)
        x = t(rng.standard_normal((3, 3)))
        err = finite_diff_gradcheck(lambda v: reduce_sum(mul(v, v)), x)
        assert err < 1e-8

    def test_softmax_then_sum_grad_near_zero(self):
        # sum of softmax is constant 1, so the gradient must vanish
        rng = np.random.default_rng(9)
        x = t(rng.standard_normal(6))
        with Tape() as tape:
            y = reduce_sum(softmax(x, axis=0))
        g = tape.backward(y)[x.uid]
        assert np.max(np.abs(g)) < 1e-8

    def test_rejects_nonscalar(self):
        x = t([1.0, 2.0])
        with pytest.raises(UsageError):
            finite_diff_gradcheck(lambda v: relu(v), x)

    @pytest.mark.parametrize("seed", [10, 11, 12])
    def test_primitives_under_gradcheck(self, seed):
        # constants are drawn once so every f is a pure function of x
        rng = np.random.default_rng(seed)
        x3 = t(rng.standard_normal((3, 4, 5)))
        k = {
            "m20x2": t(rng.standard_normal((20, 2))),
            "w1x1": t(rng.standard_normal((4, 3))),
            "b1x1": t(rng.standard_normal(4)),
            "w3x3": t(rng.standard_normal((2, 3, 3, 3))),
            "b3x3": t(rng.standard_normal(2)),
            "w7x7": t(rng.standard_normal((1, 3, 7, 7))),
            "pc": t(rng.standard_normal((3, 1, 1))),
            "ps": t(rng.standard_normal((1, 4, 5))),
            "pf": t(rng.standard_normal((3, 4, 5))),
            "p2": t(rng.standard_normal((12, 5))),
            "xc": t(rng.standard_normal((2, 4, 5))),
            "p5": t(rng.standard_normal((5, 4, 5))),
            "yb": t(rng.uniform(size=(3, 4, 5))),
            "ym": t(rng.standard_normal((3, 4, 5))),
        }

        cases = {
            "matmul": lambda v: reduce_sum(matmul(reshape(v, (3, 20)), k["m20x2"])),
            "conv1x1": lambda v: reduce_sum(conv1x1(v, k["w1x1"], k["b1x1"])),
            "conv3x3_s1": lambda v: reduce_sum(conv2d(v, k["w3x3"], k["b3x3"], stride=1, pad=1)),
            "conv3x3_s2": lambda v: reduce_sum(conv2d(v, k["w3x3"], stride=2, pad=1)),
            "conv7x7": lambda v: reduce_sum(conv2d(v, k["w7x7"], stride=1, pad=3)),
            "gap": lambda v: reduce_sum(global_avg_pool(v)),
            "gmp": lambda v: reduce_sum(mul(global_max_pool(v), k["pc"])),
            "channel_mean": lambda v: reduce_sum(mul(channel_mean(v), k["ps"])),
            "channel_max": lambda v: reduce_sum(mul(channel_max(v), k["ps"])),
            "softmax": lambda v: reduce_sum(mul(softmax(v, axis=2), k["pf"])),
            "sigmoid": lambda v: reduce_sum(mul(sigmoid(v), k["pf"])),
            "relu": lambda v: reduce_sum(mul(relu(v), k["pf"])),
            "add_bcast": lambda v: reduce_sum(mul(add(v, k["pc"]), k["pf"])),
            "mul_bcast": lambda v: reduce_sum(mul(mul(v, k["ps"]), k["pf"])),
            "reshape": lambda v: reduce_sum(mul(reshape(v, (12, 5)), k["p2"])),
            "concat": lambda v: reduce_sum(mul(concat_channels(v, k["xc"]), k["p5"])),
            "scale": lambda v: reduce_sum(scale(v, -1.7)),
            "bce": lambda v: bce_with_logits(v, k["yb"]),
            "mse": lambda v: mse_loss(v, k["ym"]),
        }
        for name, fn in cases.items():
            err = finite_diff_gradcheck(fn, t(x3.data.copy()))
            assert err < 1e-4, f"{name}: {err:.3e}"

    def test_layer_norm_gradcheck(self):
        rng = np.random.default_rng(13)
        x = t(rng.standard_normal((6, 1, 1)))
        gamma = t(rng.standard_normal(6))
        beta = t(rng.standard_normal(6))
        weights = t(rng.standard_normal((6, 1, 1)))
        err = finite_diff_gradcheck(
            lambda v: reduce_sum(mul(layer_norm(v, gamma, beta), weights)), x
        )
        assert err < 1e-4
        err_g = finite_diff_gradcheck(
            lambda v: reduce_sum(mul(layer_norm(x, v, beta), weights)), gamma
        )
        assert err_g < 1e-4

    def test_conv_weight_and_bias_gradcheck(self):
        rng = np.random.default_rng(14)
        x = t(rng.standard_normal((2, 5, 6)))
        w = t(rng.standard_normal((3, 2, 3, 3)))
        b = t(rng.standard_normal(3))
        probe = t(rng.standard_normal((3, 3, 3)))
        err_w = finite_diff_gradcheck(
            lambda v: reduce_sum(mul(conv2d(x, v, b, stride=2, pad=1), probe)), w
        )
        assert err_w < 1e-4
        err_b = finite_diff_gradcheck(
            lambda v: reduce_sum(mul(conv2d(x, w, v, stride=2, pad=1), probe)), b
        )
        assert err_b < 1e-4


class TestParamInit:
    def test_same_name_same_seed_reproduces(self):
        a = core.ParamInit(42).conv_weight("blk.w", (4, 3, 3, 3), fan_in=27)
        b = core.ParamInit(42).conv_weight("blk.w", (4, 3, 3, 3), fan_in=27)
        npt.assert_array_equal(a.value.data, b.value.data)

    def test_different_names_differ(self):
        init = core.ParamInit(42)
        a = init.conv_weight("a.w", (4, 4), fan_in=4)
        b = init.conv_weight("b.w", (4, 4), fan_in=4)
        assert not np.array_equal(a.value.data, b.value.data)

    def test_fan_in_bound(self):
        p = core.ParamInit(0).conv_weight("w", (8, 100), fan_in=100)
        assert np.max(np.abs(p.value.data)) <= 0.1

    def test_zeros_and_ones(self):
        init = core.ParamInit(0)
        npt.assert_array_equal(init.zeros("b", (3,)).value.data, np.zeros(3))
        npt.assert_array_equal(init.ones("g", (3,)).value.data, np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
def test_softmax_shift_invariance(vals):
    x = np.asarray(vals)
    a = softmax(Tensor(x), axis=0).data
    b = softmax(Tensor(x + 7.5), axis=0).data
    npt.assert_allclose(a, b, atol=1e-12, rtol=0)
    npt.assert_allclose(a.sum(), 1.0, atol=1e-12, rtol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_reshape_preserves_raveled_data(c, h, w):
    x = Tensor(np.arange(c * h * w, dtype=np.float64).reshape(c, h, w))
    y = reshape(x, (c * h * w,))
    npt.assert_array_equal(y.data, x.data.ravel())
