import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsrec import autodiff as ad
from newsrec.autodiff import Tensor


def test_matmul_identity():
    a = Tensor(np.eye(2)) @ Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(a.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_hand_value():
    # [[1,2],[3,4]] @ [[5],[6]] worked out by hand: rows dot column
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[5.0], [6.0]])
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ad.ShapeError) as exc:
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    assert "(2, 3)" in str(exc.value)


def test_matmul_associative_on_random_chains():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a, b, c = (Tensor(rng.standard_normal((4, 4))) for _ in range(3))
        left = ((a @ b) @ c).data
        right = (a @ (b @ c)).data
        assert np.max(np.abs(left - right)) < 1e-9


def test_softmax_uniform():
    out = ad.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_hand_value():
    # exp(ln 2) = 2 and exp(0) = 1, so weights are 2/3 and 1/3
    out = ad.softmax(Tensor([math.log(2.0), 0.0]))
    np.testing.assert_allclose(out.data, [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_large_inputs_no_overflow():
    out = ad.softmax(Tensor([1000.0, 0.0]))
    assert np.all(np.isfinite(out.data))
    assert out.data[0] > 1 - 1e-12 and out.data[1] < 1e-12


def test_softmax_empty_axis_errors():
    with pytest.raises(ad.ShapeError):
        ad.softmax(Tensor(np.zeros((3, 0))), axis=-1)


@given(
    st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=1, max_size=8),
)
@settings(max_examples=200, deadline=None)
def test_softmax_is_distribution(xs):
    out = ad.softmax(Tensor(xs)).data
    assert np.all(out >= 0)
    assert abs(out.sum() - 1.0) < 1e-12


def test_elementwise_mul():
    out = ad.mul(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [3.0, 8.0])


def test_sigmoid_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_elementwise_shape_error():
    with pytest.raises(ad.ShapeError):
        ad.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_dropout_p_zero_is_exact_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = ad.dropout(x, 0.0, np.random.default_rng(0), training=True)
    assert out is x


def test_dropout_eval_mode_is_bitwise_identity():
    x = Tensor(np.random.default_rng(1).standard_normal((4, 4)))
    out = ad.dropout(x, 0.5, np.random.default_rng(0), training=False)
    assert out is x
    assert out.data.tobytes() == x.data.tobytes()


def test_dropout_scales_survivors():
    x = Tensor(np.ones(10000))
    out = ad.dropout(x, 0.2, np.random.default_rng(3), training=True)
    survivors = out.data[out.data > 0]
    np.testing.assert_allclose(survivors, 1.0 / 0.8)
    assert abs(len(survivors) / 10000 - 0.8) < 0.02


def test_dropout_invalid_rate():
    with pytest.raises(ValueError):
        ad.dropout(Tensor([1.0]), 1.0, np.random.default_rng(0), training=True)


def test_backward_product_rule():
    x = Tensor(3.0, requires_grad=True)
    y = Tensor(4.0, requires_grad=True)
    (x * y).backward()
    assert x.grad == 4.0 and y.grad == 3.0


def test_backward_power_rule():
    x = Tensor([1.0, -2.0], requires_grad=True)
    ad.tsum(ad.powc(x, 2.0)).backward()
    np.testing.assert_array_equal(x.grad, [2.0, -4.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ad.ShapeError):
        (x * x).backward()


def test_backward_accumulates_without_reset():
    x = Tensor(3.0, requires_grad=True)
    loss = x * x
    loss.backward()
    loss.backward()
    assert x.grad == 12.0  # 6 + 6: documented accumulation semantics
    ad.zero_grad([x])
    assert x.grad is None


def test_fanout_gradient_sums_both_paths():
    x = Tensor(2.0, requires_grad=True)
    y = x * x + x * 3.0
    y.backward()
    assert x.grad == 7.0


def test_no_grad_suppresses_tape():
    x = Tensor(1.0, requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_debug_checks_flag_non_finite():
    ad.set_debug_checks(True)
    try:
        with pytest.raises(FloatingPointError):
            Tensor([np.nan])
    finally:
        ad.set_debug_checks(False)
    Tensor([np.nan])  # silent when the flag is off


def _fd_single(f, x, eps=1e-6):
    """Scalar central difference, independent of the tape."""
    return (f(x + eps) - f(x - eps)) / (2 * eps)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=60, deadline=None)
def test_backward_matches_fd_on_random_graphs(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 4, size=2))
    a = Tensor(rng.standard_normal(shape), requires_grad=True)
    b = Tensor(rng.standard_normal(shape), requires_grad=True)
    w = Tensor(rng.standard_normal((shape[1], 3)), requires_grad=True)

    def f(params):
        a_, b_, w_ = params["a"], params["b"], params["w"]
        h = ad.tanh(a_ * b_ + a_)
        h = ad.matmul(h, w_)
        h = ad.softmax(h, axis=-1)
        h = ad.sigmoid(h + ad.tmean(b_))
        return ad.tmean(h)

    errs = ad.finite_difference_check(f, {"a": a, "b": b, "w": w}, eps=1e-5, seed=seed)
    assert max(errs.values()) < 1e-3


def test_relu_gradient_away_from_kink():
    x = Tensor([2.0, -3.0], requires_grad=True)
    ad.tsum(ad.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 0.0])


def test_concat_and_take_gradients():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0], requires_grad=True)
    c = ad.concat([a, b], axis=0)
    ad.tsum(c[1:]).backward()
    np.testing.assert_array_equal(a.grad, [0.0, 1.0])
    np.testing.assert_array_equal(b.grad, [1.0])


def test_embedding_scatter_adds_repeated_rows():
    table = Tensor(np.ones((4, 2)), requires_grad=True)
    out = ad.embedding(table, np.array([1, 1, 3]))
    ad.tsum(out).backward()
    np.testing.assert_array_equal(table.grad[:, 0], [0.0, 2.0, 0.0, 1.0])


def test_broadcast_to_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ad.broadcast_to(ad.reshape(x, (1, 2)), (3, 2))
    ad.tsum(y).backward()
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_masked_softmax_zeroes_masked_and_sums_to_one():
    x = Tensor(np.array([[1.0, 5.0, 2.0], [0.0, 0.0, 0.0]]))
    mask = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    y = ad.masked_softmax(x, mask, axis=-1).data
    assert y[0, 1] == 0.0
    assert abs(y[0].sum() - 1.0) < 1e-12
    assert np.all(y[1] == 0.0)  # empty support row


def test_masked_softmax_gradient_matches_fd():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    mask = np.array([[1, 1, 0, 1], [1, 0, 0, 1]], dtype=float)

    def f(params):
        return ad.tsum(ad.tanh(ad.masked_softmax(params["x"], mask, axis=-1)))

    errs = ad.finite_difference_check(f, {"x": x})
    assert errs["x"] < 1e-6


class TestFiniteDifferenceCheck:
    def test_quadratic_bowl_near_exact(self):
        x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)

        def f(params):
            return ad.tsum(ad.powc(params["x"], 2.0))

        errs = ad.finite_difference_check(f, {"x": x}, eps=1e-5)
        assert errs["x"] < 1e-8

    def test_tanh_chain(self):
        x = Tensor(np.array([0.3, -0.7]), requires_grad=True)

        def f(params):
            return ad.tmean(ad.tanh(ad.tanh(params["x"])))

        errs = ad.finite_difference_check(f, {"x": x}, eps=1e-5)
        assert errs["x"] < 1e-6

    def test_nondeterministic_f_rejected(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        rng = np.random.default_rng(0)

        def f(params):
            return ad.tsum(params["x"] * rng.random())

        with pytest.raises(ad.DeterminismError):
            ad.finite_difference_check(f, {"x": x})

    def test_frozen_blocks_skipped(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        frozen = Tensor(np.array([2.0]), requires_grad=False)

        def f(params):
            return ad.tsum(params["x"] * params["frozen"])

        errs = ad.finite_difference_check(f, {"x": x, "frozen": frozen})
        assert set(errs) == {"x"}

    def test_grad_tweak_hook_breaks_check(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)

        def f(params):
            return ad.tsum(ad.powc(params["x"], 2.0))

        errs = ad.finite_difference_check(
            f, {"x": x}, grad_tweak=lambda name, g: g * 1.5
        )
        assert errs["x"] > 1e-3


class TestAdam:
    def test_zero_grad_leaves_params_unchanged(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        before = p.data.copy()
        ad.adam_step({"p": p}, {"p": np.zeros(2)}, ad.AdamState(), lr=0.1)
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_matches_hand_recurrence(self):
        # one step from scratch: m=(1-b1)g, v=(1-b2)g^2, bias correction
        # cancels both factors, so delta = -lr * g / (|g| + eps)
        g, lr, eps = 2.0, 0.1, 1e-8
        p = Tensor(np.array([1.0]), requires_grad=True)
        ad.adam_step({"p": p}, {"p": np.array([g])}, ad.AdamState(), lr=lr, eps=eps)
        expected = 1.0 - lr * g / (abs(g) + eps)
        assert p.data[0] == pytest.approx(expected, abs=1e-15)
        assert abs((p.data[0] - 1.0) + lr * np.sign(g)) < 1e-8

    def test_step_counter_increments(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        state = ad.AdamState()
        for expected in (1, 2, 3):
            ad.adam_step({"p": p}, {"p": np.array([0.5])}, state)
            assert state.step == expected

    def test_shape_mismatch_rejected(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with pytest.raises(ad.ShapeError):
            ad.adam_step({"p": p}, {"p": np.zeros(3)}, ad.AdamState())

    def test_default_learning_rate_is_1e_4(self):
        from newsrec.config import TrainConfig

        assert TrainConfig().lr == 1e-4


def test_substream_is_stable_and_named():
    a = ad.substream(42, "dropout").random(3)
    b = ad.substream(42, "dropout").random(3)
    c = ad.substream(42, "sampling").random(3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_child_seed_stable():
    assert ad.child_seed(7, "transe") == ad.child_seed(7, "transe")
    assert ad.child_seed(7, "transe") != ad.child_seed(7, "gat")
