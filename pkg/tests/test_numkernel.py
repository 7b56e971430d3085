import math

import numpy as np
import pytest

import purex.numkernel as nk
from purex.errors import ConfigError
from purex.numkernel import Parameter, RngState, Tensor


def P(arr, name="p"):
    return Parameter(np.asarray(arr, dtype=np.float64), name)


def T(arr):
    return nk.tensor(np.asarray(arr, dtype=np.float64))


# ---------------------------------------------------------------------------
# linear


def test_linear_unit_vector_selects_column():
    y = nk.linear(T([1.0, 0.0]), P([[2.0, 3.0], [4.0, 5.0]]), P([0.0, 0.0]))
    assert np.allclose(y.data, [2.0, 4.0])


def test_linear_zero_input_passes_bias():
    y = nk.linear(T([0.0, 0.0]), P([[1.0, 2.0], [3.0, 4.0]]), P([7.0, -1.0]))
    assert np.allclose(y.data, [7.0, -1.0])


def test_linear_hand_arithmetic():
    # 0.5*1 + 0.5*2 + 0.1 = 1.6
    y = nk.linear(T([1.0, 2.0]), P([[0.5, 0.5]]), P([0.1]))
    assert np.allclose(y.data, [1.6])


def test_linear_shape_mismatch_names_both_shapes():
    with pytest.raises(ConfigError, match=r"\(2, 2\).*\(3,\)"):
        nk.linear(T([1.0, 2.0, 3.0]), P([[1.0, 2.0], [3.0, 4.0]]), P([0.0, 0.0]))


def test_linear_gradients():
    W, b = P([[1.0, 2.0], [3.0, 4.0]], "W"), P([0.5, -0.5], "b")
    x = T([2.0, -1.0])
    y = nk.linear(x, W, b)
    loss = nk.vsum(y)
    nk.backward(loss)
    assert np.allclose(W.grad, [[2.0, -1.0], [2.0, -1.0]])
    assert np.allclose(b.grad, [1.0, 1.0])
    assert np.allclose(x.grad, [4.0, 6.0])  # column sums of W


# ---------------------------------------------------------------------------
# conv1d


def conv_oracle(inp, filters, l):
    """Brute-force sliding-window dot products."""
    n, d = inp.shape
    K = filters.shape[0]
    m = n - l + 1
    out = np.zeros((K, m))
    for j in range(K):
        for i in range(m):
            out[j, i] = float(np.dot(filters[j], inp[i:i + l].ravel()))
    return out


def test_conv1d_sum_filter():
    out = nk.conv1d(T([[1.0], [2.0], [3.0]]), P([[1.0, 1.0, 1.0]]))
    assert np.allclose(out.data, [[6.0]])


def test_conv1d_center_selection_filter():
    out = nk.conv1d(T([[10.0], [20.0], [30.0], [40.0]]), P([[0.0, 1.0, 0.0]]))
    assert np.allclose(out.data, [[20.0, 30.0]])


def test_conv1d_matches_sliding_window_oracle():
    gen = np.random.default_rng(7)
    inp = gen.normal(size=(5, 2))
    filt = gen.normal(size=(3, 6))
    out = nk.conv1d(T(inp), P(filt))
    assert out.data.shape == (3, 3)
    assert np.allclose(out.data, conv_oracle(inp, filt, 3), atol=1e-12)


def test_conv1d_rejects_short_input():
    with pytest.raises(ConfigError, match="padding"):
        nk.conv1d(T([[1.0], [2.0]]), P([[1.0, 1.0, 1.0]]))


# ---------------------------------------------------------------------------
# pooling


def test_max_pool_basic_and_tie_rule():
    out = nk.max_pool(T([[1.0, 5.0, 2.0]]))
    assert np.allclose(out.data, [5.0])
    c = T([[3.0, 3.0, 3.0]])
    out = nk.max_pool(c)
    nk.backward(nk.vsum(out))
    assert np.allclose(out.data, [3.0])
    assert np.allclose(c.grad, [[1.0, 0.0, 0.0]])  # first occurrence on ties


def test_max_pool_matches_row_max_oracle():
    gen = np.random.default_rng(3)
    c = gen.normal(size=(4, 7))
    out = nk.max_pool(T(c))
    assert np.array_equal(out.data, c.max(axis=1))


def piecewise_oracle(c, p1, p2):
    K, m = c.shape
    segs = [(0, p1), (p1, p2 + 1), (p2 + 1, m)]
    out = np.zeros(3 * K)
    for s, (lo, hi) in enumerate(segs):
        if hi > lo:
            out[s * K:(s + 1) * K] = c[:, lo:hi].max(axis=1)
    return out


def test_piecewise_max_pool_example():
    c = T([[1.0, 9.0, 2.0, 8.0, 3.0]])
    out = nk.piecewise_max_pool(c, 1, 3)
    assert np.allclose(out.data, [1.0, 9.0, 3.0])


def test_piecewise_empty_first_segment_is_zero():
    nk.reset_empty_segment_count()
    out = nk.piecewise_max_pool(T([[1.0, 9.0, 2.0]]), 0, 1)
    assert out.data[0] == 0.0
    assert nk.empty_segment_count() == 1


def test_piecewise_single_column_middle():
    out = nk.piecewise_max_pool(T([[4.0, -7.0, 2.0]]), 1, 1)
    assert np.allclose(out.data, [4.0, -7.0, 2.0])


def test_piecewise_matches_oracle_all_boundaries():
    gen = np.random.default_rng(11)
    for _ in range(50):
        K = int(gen.integers(1, 4))
        m = int(gen.integers(1, 8))
        c = gen.normal(size=(K, m))
        for p1 in range(m):
            for p2 in range(p1, m):
                out = nk.piecewise_max_pool(T(c), p1, p2)
                assert np.array_equal(out.data, piecewise_oracle(c, p1, p2))


# ---------------------------------------------------------------------------
# tanh / log_softmax / dropout


def test_tanh_values():
    out = nk.tanh_act(T([0.0, 1.0, 15.0, -15.0]))
    assert out.data[0] == 0.0
    assert np.isclose(out.data[1], math.tanh(1.0))  # 0.761594...
    assert -1.0 < out.data[3] < out.data[2] < 1.0


def test_log_softmax_uniform_and_shift_invariance():
    out = nk.log_softmax(T([0.0, 0.0]))
    assert np.allclose(np.exp(out.data), [0.5, 0.5])
    a = nk.log_softmax(T([1.0, -2.0, 0.3])).data
    b = nk.log_softmax(T([1.0 + 17.5, -2.0 + 17.5, 0.3 + 17.5])).data
    assert np.allclose(a, b, atol=1e-12)


def test_log_softmax_matches_direct_oracle():
    s = np.array([1.0, 2.0, 3.0])
    probs = np.exp(s) / np.exp(s).sum()
    out = nk.log_softmax(T(s))
    assert np.allclose(np.exp(out.data), probs, atol=1e-12)
    assert np.isclose(np.exp(out.data).sum(), 1.0, atol=1e-9)


def test_log_softmax_sums_to_one_on_random_inputs():
    gen = np.random.default_rng(5)
    for _ in range(200):
        s = gen.normal(scale=10.0, size=int(gen.integers(1, 9)))
        out = nk.log_softmax(T(s))
        assert abs(np.exp(out.data).sum() - 1.0) < 1e-9


def test_dropout_identity_cases():
    x = T([1.0, 2.0, 3.0])
    assert nk.dropout(x, 0.0, RngState(0), training=True) is x
    assert nk.dropout(x, 0.9, RngState(0), training=False) is x
    with pytest.raises(ConfigError):
        nk.dropout(x, 1.0, RngState(0), training=True)


def test_dropout_survivor_fraction():
    x = T(np.ones(100000))
    out = nk.dropout(x, 0.5, RngState(42), training=True)
    frac = np.count_nonzero(out.data) / x.data.size
    assert abs(frac - 0.5) < 0.01
    survivors = out.data[out.data != 0]
    assert np.allclose(survivors, 2.0)  # inverted scaling 1/(1-p)


# ---------------------------------------------------------------------------
# adam


def test_adam_zero_grad_is_noop_on_value():
    p = P([1.0, -2.0])
    before = p.value.copy()
    nk.adam_step(p, lr=0.1)
    assert np.array_equal(p.value, before)
    assert p.step_count == 1


def test_adam_first_step_matches_hand_recurrence():
    p = P([0.0])
    p.grad[:] = 1.0
    nk.adam_step(p, lr=0.001)
    # t=1: m_hat = g, v_hat = g^2, delta = -lr * g / (|g| + eps)
    expected = -0.001 * 1.0 / (1.0 + nk.ADAM_EPS)
    assert np.isclose(p.value[0], expected, rtol=1e-12)
    assert np.array_equal(p.grad, [0.0])  # cleared


def test_adam_monotone_against_gradient_sign():
    p = P([0.5])
    vals = [p.value[0]]
    for _ in range(5):
        p.grad[:] = 2.0
        nk.adam_step(p, lr=0.01)
        vals.append(p.value[0])
    assert all(b < a for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# rng


def test_rng_reproducible_and_splittable():
    a = RngState(9).generator.random(5)
    b = RngState(9).generator.random(5)
    assert np.array_equal(a, b)
    c1 = RngState(9).split("bag", 3).generator.random(5)
    c2 = RngState(9).split("bag", 3).generator.random(5)
    c3 = RngState(9).split("bag", 4).generator.random(5)
    assert np.array_equal(c1, c2)
    assert not np.array_equal(c1, c3)


def test_rng_state_round_trip():
    rng = RngState(77)
    rng.generator.random(13)
    snap = rng.get_state()
    ahead = rng.generator.random(4)
    restored = RngState.from_state(snap)
    assert np.array_equal(restored.generator.random(4), ahead)


# ---------------------------------------------------------------------------
# grad_check


def test_grad_check_pure_linear_is_exact():
    W, b = P(np.random.default_rng(0).normal(size=(3, 4)), "W"), P(np.zeros(3), "b")
    x = np.random.default_rng(1).normal(size=4)

    def fn():
        return nk.vsum(nk.linear(nk.tensor(x), W, b))

    assert nk.grad_check(fn, [W, b], epsilon=1e-6) < 1e-8


def test_grad_check_linear_softmax_ce():
    gen = np.random.default_rng(2)
    W, b = P(gen.normal(size=(4, 5)), "W"), P(gen.normal(size=4), "b")
    x = gen.normal(size=5)

    def fn():
        scores = nk.linear(nk.tensor(x), W, b)
        return nk.scale(nk.pick(nk.log_softmax(scores), 2), -1.0)

    assert nk.grad_check(fn, [W, b]) < 1e-4


def test_grad_check_randomized_ops_20_seeds():
    """Every gradient transform against finite differences, >= 20 seeds."""
    for seed in range(20):
        gen = np.random.default_rng(seed)
        n = int(gen.integers(3, 7))
        d = int(gen.integers(1, 4))
        K = int(gen.integers(1, 4))
        l = int(gen.integers(1, min(3, n) + 1))
        inp = P(gen.normal(size=(n, d)), "inp")
        filt = P(gen.normal(size=(K, l * d)), "filt")
        p1, p2 = sorted(gen.integers(0, n - l + 1, size=2).tolist())

        def conv_stack():
            c = nk.conv1d(nk.param_tensor(inp), filt)
            pooled = nk.piecewise_max_pool(c, p1, p2)
            return nk.vsum(nk.tanh_act(pooled))

        assert nk.grad_check(conv_stack, [inp, filt], rng=RngState(seed)) < 1e-4

        v = P(gen.normal(size=6), "v")

        def softmax_pick():
            return nk.scale(nk.pick(nk.log_softmax(nk.param_tensor(v)), 1), -1.0)

        assert nk.grad_check(softmax_pick, [v], rng=RngState(seed)) < 1e-4

        w = P(gen.normal(size=5), "w")

        def dropout_fn():
            # frozen mask: the rng is rebuilt identically on every call
            return nk.vsum(nk.dropout(nk.param_tensor(w), 0.4, RngState(seed), True))

        assert nk.grad_check(dropout_fn, [w], rng=RngState(seed)) < 1e-4

        t = P(gen.normal(size=(2, 3)), "t")

        def maxpool_fn():
            return nk.vsum(nk.max_pool(nk.param_tensor(t)))

        assert nk.grad_check(maxpool_fn, [t], rng=RngState(seed)) < 1e-4


def test_grad_check_log1m_exp_and_picked_mse():
    gen = np.random.default_rng(13)
    v = P(gen.normal(size=4), "v")

    def f_log1m():
        return nk.log1m_exp(nk.pick(nk.log_softmax(nk.param_tensor(v)), 0))

    assert nk.grad_check(f_log1m, [v]) < 1e-4

    W = P(gen.normal(size=(2, 3)), "W")
    b = P(gen.normal(size=2), "b")
    X = gen.normal(size=(4, 3))
    actions = [0, 1, 1, 0]
    targets = [0.3, -0.2, 0.9, 0.0]

    def f_mse():
        q = nk.linear_rows(nk.tensor(X), W, b)
        return nk.picked_mse(q, actions, targets)

    assert nk.grad_check(f_mse, [W, b]) < 1e-4


def test_log1m_exp_clamps_near_one():
    lp = T(np.asarray(-1e-12))  # p -> 1
    out = nk.log1m_exp(lp)
    assert np.isclose(out.data, math.log(1e-7))
    nk.backward(out)
    assert lp.grad == 0.0  # clamped region has zero gradient
