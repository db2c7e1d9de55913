import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempogauge.nn import (BRNN, Activation, AvgPoolTime, BatchNorm, Dense, Dropout, Flatten,
                           ParameterSet, Sequential, ShapeError, UninitializedStatisticsError,
                           avg_pool_time, batch_norm_forward, brnn_layer_forward, cce_loss,
                           dense_forward, dropout_forward, elu, grad_check, sgd_step, softmax,
                           softmax_cce, standard_suite)
from tempogauge.nn.functional import activation_forward, batch_norm_backward

F64 = np.float64


# dense -------------------------------------------------------------------------------

def test_dense_identity(rng):
    x = rng.standard_normal((4, 6))
    np.testing.assert_array_equal(dense_forward(x, np.eye(6), np.zeros(6)), x)


def test_dense_zero_input_gives_bias(rng):
    b = rng.standard_normal(3)
    y = dense_forward(np.zeros((5, 4)), rng.standard_normal((4, 3)), b)
    np.testing.assert_array_equal(y, np.broadcast_to(b, (5, 3)))


def test_dense_weight_gradient_is_xT_dy(rng):
    layer = Dense(5, 3, rng, F64)
    x = rng.standard_normal((4, 5))
    layer.forward(x, training=True)
    dy = rng.standard_normal((4, 3))
    layer.backward(dy)
    np.testing.assert_allclose(layer.grads["W"], x.T @ dy)
    assert grad_check(Dense(5, 3, rng, F64), x).max_error < 1e-4


def test_dense_shape_error(rng):
    with pytest.raises(ShapeError):
        dense_forward(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(5))


# recurrent layer -------------------------------------------------------------------------

def test_brnn_zero_everything_gives_zero():
    y, _ = brnn_layer_forward(np.zeros((2, 9, 4)), np.zeros((2, 4, 3)), np.zeros((2, 3, 3)),
                              np.zeros((2, 3)))
    assert y.shape == (2, 9, 6)
    assert np.all(y == 0)


def test_brnn_parameter_counts(rng):
    assert BRNN(40, 25, rng).n_params() == 3300
    assert BRNN(50, 25, rng).n_params() == 3800
    stack = Sequential([("a", BRNN(40, 25, rng)), ("b", BRNN(50, 25, rng)),
                        ("c", BRNN(50, 25, rng))])
    assert stack.n_params() == 10_900
    assert stack.parameters().count() == 10_900


def test_brnn_small_bptt_matches_finite_differences(rng):
    report = grad_check(BRNN(3, 2, rng, F64), rng.standard_normal((1, 7, 3)))
    assert report.max_error < 1e-4


def test_brnn_forward_direction_is_causal(rng):
    layer = BRNN(3, 4, rng, F64)
    x = rng.standard_normal((1, 10, 3))
    y = layer.forward(x)
    x2 = x.copy()
    x2[:, 6:] += 1.0
    y2 = layer.forward(x2)
    np.testing.assert_array_equal(y[:, :6, :4], y2[:, :6, :4])  # forward half unaffected
    assert not np.allclose(y[:, :6, 4:], y2[:, :6, 4:])         # backward half sees the future


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 12), st.integers(1, 5), st.integers(1, 4),
       st.integers(0, 2**32 - 1))
def test_brnn_direction_symmetry(B, T, n_in, H, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((B, T, n_in))
    Wx, Wh, b = r.standard_normal((2, n_in, H)), r.standard_normal((2, H, H)) * 0.5, \
        r.standard_normal((2, H))
    y, _ = brnn_layer_forward(x, Wx, Wh, b)
    y_rev, _ = brnn_layer_forward(x[:, ::-1], Wx[::-1], Wh[::-1], b[::-1])
    swapped = np.concatenate([y[:, :, H:], y[:, :, :H]], axis=2)
    np.testing.assert_allclose(y_rev[:, ::-1], swapped, rtol=1e-12, atol=1e-12)


def test_brnn_shape_error(rng):
    with pytest.raises(ShapeError):
        BRNN(4, 2, rng).forward(np.zeros((1, 5, 3)))


# batch norm --------------------------------------------------------------------------

def test_batch_norm_train_standardises_each_feature(rng):
    x = rng.standard_normal((64, 10, 5)) * rng.uniform(0.1, 9, 5) + rng.uniform(-4, 4, 5)
    y, _ = batch_norm_forward(x, np.ones(5), np.zeros(5), "train")
    np.testing.assert_allclose(y.mean(axis=(0, 1)), 0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 1)), 1, atol=1e-3)  # eps shifts var by ~1e-5/var


def test_batch_norm_fixed_point(rng):
    x = rng.standard_normal((500, 3))
    x = (x - x.mean(0)) / x.std(0)
    y, _ = batch_norm_forward(x, np.ones(3), np.zeros(3), "train")
    np.testing.assert_allclose(y, x, atol=1e-4)


def test_batch_norm_gradients(rng):
    bn = BatchNorm(4, dtype=F64)
    bn.params["gamma"][:] = rng.uniform(0.5, 2, 4)
    bn.params["beta"][:] = rng.standard_normal(4)
    assert grad_check(bn, rng.standard_normal((8, 4)) * 3 + 1).max_error < 1e-4
    assert grad_check(bn, rng.standard_normal((8, 4)), training=False).max_error < 1e-4


def test_batch_norm_moving_statistics(rng):
    mm, mv = np.zeros(2), np.ones(2)
    x = rng.standard_normal((100, 2)) * 2 + 3
    batch_norm_forward(x, np.ones(2), np.zeros(2), "train", mm, mv)
    np.testing.assert_allclose(mm, 0.01 * x.mean(0))
    np.testing.assert_allclose(mv, 0.99 + 0.01 * x.var(0))


def test_batch_norm_infer_uses_moving_statistics():
    y, cache = batch_norm_forward(np.array([[4.0, 1.0]]), np.ones(2), np.zeros(2), "infer",
                                  np.array([2.0, 1.0]), np.array([4.0, 1.0]), eps=0.0)
    np.testing.assert_allclose(y, [[1.0, 0.0]])
    dx, _, _ = batch_norm_backward(np.ones((1, 2)), cache)
    np.testing.assert_allclose(dx, [[0.5, 1.0]])


def test_batch_norm_without_statistics_refuses_inference():
    with pytest.raises(UninitializedStatisticsError):
        batch_norm_forward(np.zeros((1, 2)), np.ones(2), np.zeros(2), "infer")
    bn = BatchNorm(3, init_statistics=False)
    with pytest.raises(UninitializedStatisticsError):
        bn.forward(np.zeros((2, 3), dtype=np.float32))
    bn.forward(np.ones((2, 3), dtype=np.float32), training=True)
    bn.forward(np.zeros((2, 3), dtype=np.float32))  # statistics now exist


# dropout --------------------------------------------------------------------------------

def test_dropout_p_zero_and_infer_are_identity(rng):
    x = rng.standard_normal((3, 4))
    for mode in ("train", "infer"):
        assert dropout_forward(x, 0.0, mode, rng)[0] is x
    assert dropout_forward(x, 0.9, "infer")[0] is x


def test_dropout_statistics():
    r = np.random.default_rng(5)
    x = np.ones(1_000_000)
    y, mask = dropout_forward(x, 0.5, "train", r)
    survivors = np.count_nonzero(y) / x.size
    assert 0.498 <= survivors <= 0.502
    assert abs(y.mean() - 1.0) < 0.01
    np.testing.assert_array_equal(np.unique(y), [0.0, 2.0])


def test_dropout_needs_rng_and_valid_p():
    with pytest.raises(ValueError):
        dropout_forward(np.ones(3), 0.5, "train")
    with pytest.raises(ValueError):
        dropout_forward(np.ones(3), 1.0, "train", np.random.default_rng())


def test_dropout_layer_backward_uses_the_same_mask(rng):
    d = Dropout(0.5)
    y = d.forward(np.ones((4, 4)), training=True, rng=rng)
    np.testing.assert_array_equal(d.backward(np.ones((4, 4))), y)


# pooling ----------------------------------------------------------------------------------

def test_pool_identity(rng):
    x = rng.standard_normal((2, 7, 3))
    np.testing.assert_array_equal(avg_pool_time(x, 1), x)


def test_pool_output_length():
    assert avg_pool_time(np.zeros((1, 256, 50)), 5).shape == (1, 51, 50)


def test_pool_constant():
    np.testing.assert_array_equal(avg_pool_time(np.full((2, 13, 4), 3.5), 5), np.full((2, 2, 4), 3.5))


def test_pool_gradient(rng):
    assert grad_check(AvgPoolTime(5), rng.standard_normal((2, 23, 3))).max_error < 1e-4
    pool = AvgPoolTime(5)
    pool.forward(np.zeros((1, 12, 1)), training=True)
    dx = pool.backward(np.ones((1, 2, 1)))
    np.testing.assert_array_equal(dx[0, :, 0], [0.2] * 10 + [0, 0])  # remainder gets nothing


# activations ----------------------------------------------------------------------------

def test_softmax_of_zeros_is_uniform():
    np.testing.assert_allclose(softmax(np.zeros(256)), 1 / 256)


def test_elu_values():
    assert elu(np.array(0.0)) == 0.0
    assert abs(elu(np.array(-20.0)) + 1) < 1e-8
    assert elu(np.array(2.5)) == 2.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=20), st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(logits, shift):
    z = np.array(logits)
    assert np.max(np.abs(softmax(z) - softmax(z + shift))) < 1e-9


def test_softmax_is_stable_for_huge_logits():
    p = softmax(np.array([1e4, 0.0, -1e4]))
    assert np.all(np.isfinite(p)) and p[0] == 1.0


@pytest.mark.parametrize("kind", ["tanh", "elu", "softmax"])
def test_activation_gradients(kind, rng):
    assert grad_check(Activation(kind), rng.standard_normal((3, 6))).max_error < 1e-4


def test_unknown_activation():
    with pytest.raises(ValueError):
        activation_forward(np.zeros(2), "relu6")


# loss -------------------------------------------------------------------------------------

def test_cce_uniform():
    t = np.eye(256)[[3, 200]]
    assert cce_loss(np.full((2, 256), 1 / 256), t) == pytest.approx(np.log(256))
    assert np.log(256) == pytest.approx(5.5452, abs=1e-4)


def test_cce_perfect_and_clamped():
    t = np.eye(4)[[0, 2]]
    assert cce_loss(t, t) <= 1e-12
    assert cce_loss(1 - t, t) == pytest.approx(-np.log(1e-12))


def test_softmax_cce_gradient(rng):
    targets = np.eye(7)[rng.integers(0, 7, 5)]
    report = grad_check(Sequential([]), rng.standard_normal((5, 7)), targets=targets)
    assert report.max_error < 1e-4
    loss, probs, d = softmax_cce(np.zeros((2, 4)), np.eye(4)[[0, 1]])
    assert loss == pytest.approx(np.log(4))
    np.testing.assert_allclose(d, (probs - np.eye(4)[[0, 1]]) / 2)


# optimiser --------------------------------------------------------------------------------

def test_sgd_hand_evaluated_recurrence():
    p = ParameterSet({"w": np.array([1.0])})
    sgd_step(p, {"w": np.array([1.0])})
    assert p.velocity["w"][0] == pytest.approx(1.0)
    assert p["w"][0] == pytest.approx(0.999)
    sgd_step(p, {"w": np.array([1.0])})
    assert p.velocity["w"][0] == pytest.approx(1.9)
    assert p["w"][0] == pytest.approx(0.9971)


def test_sgd_clips_each_component():
    p = ParameterSet({"w": np.zeros(3)})
    sgd_step(p, {"w": np.array([7.0, -7.0, 2.0])}, lr=1.0, momentum=0.0)
    np.testing.assert_array_equal(p["w"], [-5.0, 5.0, -2.0])


def test_sgd_zero_gradient_is_fixed_point(rng):
    w = rng.standard_normal(5)
    p = ParameterSet({"w": w.copy()})
    sgd_step(p, {"w": np.zeros(5)})
    np.testing.assert_array_equal(p["w"], w)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=10))
def test_sgd_applied_step_is_bounded(grads):
    g = np.array(grads)
    p = ParameterSet({"w": np.zeros_like(g)})
    sgd_step(p, {"w": g}, lr=1.0, momentum=0.0)
    assert np.all(np.abs(p["w"]) <= 5.0)


def test_sgd_is_deterministic(rng):
    w, g = rng.standard_normal(8), rng.standard_normal(8) * 10
    a, b = ParameterSet({"w": w.copy()}), ParameterSet({"w": w.copy()})
    for _ in range(3):
        sgd_step(a, {"w": g})
        sgd_step(b, {"w": g})
    np.testing.assert_array_equal(a["w"], b["w"])


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_step(ParameterSet({"w": np.zeros(3)}), {"w": np.zeros(4)})


# networks and the checker -----------------------------------------------------------------

def test_forward_passes_are_finite(rng):
    net = Sequential([("rnn", BRNN(4, 3, rng)), ("pool", AvgPoolTime(2)),
                      ("bn", BatchNorm(6)), ("drop", Dropout(0.5)), ("flat", Flatten()),
                      ("d", Dense(18, 5, rng)), ("act", Activation("elu"))])
    x = rng.standard_normal((3, 6, 4)).astype(np.float32) * 100
    assert np.all(np.isfinite(net.forward(x)))
    assert np.all(np.isfinite(net.forward(x, training=True, rng=rng)))


def test_checker_skips_dropout(rng):
    net = Sequential([("d1", Dense(4, 4, rng, F64)), ("drop", Dropout(0.5)),
                      ("d2", Dense(4, 2, rng, F64))])
    report = grad_check(net, rng.standard_normal((3, 4)))
    assert report.skipped == ["drop"]
    assert report.passed
    assert any("skipped" in line for line in report.lines())


def test_checker_detects_a_wrong_gradient(rng):
    layer = Dense(3, 2, rng, F64)
    original = layer.backward

    def broken(dy):
        dx = original(dy)
        layer.grads["W"] *= 1.5
        return dx

    layer.backward = broken
    assert not grad_check(layer, rng.standard_normal((4, 3))).passed


def test_checker_requires_float64(rng):
    with pytest.raises(TypeError):
        grad_check(Dense(2, 2, rng, np.float32), np.zeros((1, 2)))


def test_recurrent_stack_gradient():
    suite = standard_suite(max_entries=60)
    assert suite["brnn_stack"].max_error < 1e-4
    assert all(r.passed for r in suite.values())
    assert suite["head"].skipped == ["dropout"]
