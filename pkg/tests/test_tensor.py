import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from churnlab import tensor as T
from churnlab.errors import ConfigError, NumericError, UsageError
from churnlab.losses import ce_loss, entropy_regularized_loss

from oracles import check_model_gradient, random_model, scalar_mlp_probs


def test_zero_network_is_uniform():
    shapes = T.layer_shapes_for([4, 5, 3])
    params = T.ModelParams(shapes, np.zeros(T.ModelParams.size_for(shapes)))
    p = T.forward_probs(params, np.random.default_rng(1).standard_normal((7, 4)))
    assert np.array_equal(p, np.full((7, 3), 1 / 3))


def test_huge_logit_does_not_overflow():
    params = T.ModelParams(((1, 2),), np.array([1000.0, 0.0, 0.0, 0.0]))
    p = T.forward_probs(params, np.array([[1.0]]))
    assert p[0, 0] == 1.0
    assert p[0, 1] == math.exp(-1000.0)


def test_forward_matches_scalar_recomputation():
    params = random_model([2, 16, 3], seed=0)
    x = np.random.default_rng(0).standard_normal((5, 2))
    p = T.forward_probs(params, x)
    for row, xr in zip(p, x):
        assert row == pytest.approx(scalar_mlp_probs(params, xr), abs=1e-12)


def test_tape_forward_equals_plain_forward():
    params = random_model([3, 8, 8, 4], seed=2)
    x = np.random.default_rng(3).standard_normal((6, 3))
    tape = T.Tape()
    probs, leaves = T.build_forward(tape, params, x)
    assert np.array_equal(probs.value, T.forward_probs(params, x))
    assert len(leaves) == 6


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-1e6, 1e6)))
def test_softmax_rows_sum_to_one(logits):
    tape = T.Tape()
    p = T.softmax(tape.param(logits)).value
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(p >= 0)


def test_batch_width_mismatch():
    params = random_model([2, 4, 3], seed=0)
    with pytest.raises(ConfigError):
        T.forward_probs(params, np.zeros((3, 5)))


def test_non_finite_activation_names_layer():
    params = random_model([2, 4, 3], seed=0)
    with pytest.raises(NumericError, match="layer 0") as info:
        T.forward_probs(params, np.array([[np.inf, 0.0]]))
    assert info.value.layer == 0


def test_square_gradient():
    tape = T.Tape()
    w = tape.param(np.array(3.0))
    assert T.compute_gradients(tape, w * w).tolist() == [6.0]


def test_softmax_ce_gradient_is_p_minus_y():
    tape = T.Tape()
    z = tape.param(np.zeros((1, 3)))
    loss = ce_loss(T.softmax(z), [0])
    g = T.compute_gradients(tape, loss)
    assert g == pytest.approx([1 / 3 - 1, 1 / 3, 1 / 3], abs=1e-15)


def test_non_scalar_loss_rejected():
    tape = T.Tape()
    w = tape.param(np.ones(3))
    with pytest.raises(UsageError):
        T.compute_gradients(tape, w * 2.0)


def test_unused_parameter_gets_zero_gradient():
    tape = T.Tape()
    a = tape.param(np.array([1.0, 2.0]))
    tape.param(np.array([5.0]))
    g = T.compute_gradients(tape, T.total(a * a))
    assert g.tolist() == [2.0, 4.0, 0.0]


def test_entropy_regularized_gradient_matches_finite_differences():
    model = random_model([2, 8, 3], seed=4, scale=0.7)
    x = np.random.default_rng(5).standard_normal((6, 2))
    y = np.array([0, 1, 2, 0, 1, 2])
    err, _, _ = check_model_gradient(lambda tape, p: entropy_regularized_loss(p[0], y, 0.3), [model], x)
    assert err <= 1e-5


def test_gather_gradient_accumulates_repeats():
    tape = T.Tape()
    a = tape.param(np.array([[1.0, 2.0, 3.0]]))
    g = T.compute_gradients(tape, T.total(T.gather(a, np.array([[2, 2, 0]]))))
    assert g.tolist() == [1.0, 0.0, 2.0]


def _params(values):
    return T.ModelParams(((1, 1),), np.array(values[:2], dtype=float))


def test_plain_sgd_step():
    p = T.ModelParams(((1, 1),), np.array([1.0, 1.0]))
    new, _ = T.optimizer_step(p, np.array([0.5, 0.5]), T.OptState.zeros(2, momentum=0.0), 0.1)
    assert new.values.tolist() == [0.95, 0.95]


def test_zero_gradient_is_fixed_point():
    p = T.ModelParams(((1, 1),), np.array([0.3, -0.2]))
    new, state = T.optimizer_step(p, np.zeros(2), T.OptState.zeros(2), 0.5)
    assert np.array_equal(new.values, p.values)
    assert np.array_equal(state.velocity, np.zeros(2))


def test_nesterov_lookahead_hand_value():
    p = T.ModelParams(((1, 1),), np.array([0.0, 0.0]))
    state = T.OptState(np.array([1.0, 1.0]), momentum=0.9)
    new, state = T.optimizer_step(p, np.zeros(2), state, 0.1)
    assert state.velocity.tolist() == [0.9, 0.9]
    assert new.values == pytest.approx([0.81, 0.81], abs=1e-16)


def test_optimizer_is_deterministic():
    rng = np.random.default_rng(0)
    p = T.ModelParams(((3, 2),), rng.standard_normal(8))
    g = rng.standard_normal(8)
    s = T.OptState(rng.standard_normal(8))
    a = T.optimizer_step(p, g, s, 0.05)
    b = T.optimizer_step(p, g, s, 0.05)
    assert a[0].values.tobytes() == b[0].values.tobytes()
    assert a[1].velocity.tobytes() == b[1].velocity.tobytes()


def test_non_finite_gradient_reports_step():
    p = T.ModelParams(((1, 1),), np.zeros(2))
    state = T.OptState(np.zeros(2), step=17)
    with pytest.raises(NumericError, match="step 17") as info:
        T.optimizer_step(p, np.array([np.nan, 0.0]), state, 0.1)
    assert info.value.step == 17


def test_optimizer_length_mismatch():
    p = T.ModelParams(((1, 1),), np.zeros(2))
    with pytest.raises(UsageError):
        T.optimizer_step(p, np.zeros(3), T.OptState.zeros(2), 0.1)


@pytest.mark.parametrize(
    "sched, step, expected",
    [
        (T.LrSchedule(1.0, warmup_steps=10), 5, 0.5),
        (T.LrSchedule(1.0, warmup_steps=10), 0, 0.0),
        (T.LrSchedule(0.8, 0, (30, 60, 80), 0.1), 65, 0.008),
        (T.LrSchedule(0.8, 0, (30, 60, 80), 0.1), 29, 0.8),
        (T.LrSchedule(0.8, 0, (30, 60, 80), 0.1), 30, 0.08),
        (T.LrSchedule(0.8, 5, (30, 60, 80), 0.1), 1000, 0.0008),
    ],
)
def test_lr_schedule(sched, step, expected):
    assert T.lr_at(sched, step) == pytest.approx(expected, rel=1e-12, abs=0)


def test_lr_schedule_validation():
    with pytest.raises(ConfigError):
        T.LrSchedule(1.0, decay_factor=1.5)


def test_params_length_invariant():
    with pytest.raises(ConfigError):
        T.ModelParams(((2, 3),), np.zeros(5))
    assert T.ModelParams.size_for(((2, 3), (3, 4))) == 2 * 3 + 3 + 3 * 4 + 4


def test_init_is_glorot_bounded_and_seeded():
    a = T.init_params([4, 10, 3], init_seed=7)
    b = T.init_params([4, 10, 3], init_seed=7)
    c = T.init_params([4, 10, 3], init_seed=8)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.values.tobytes() != c.values.tobytes()
    (w0, b0), (w1, b1) = a.layers()
    assert np.abs(w0).max() <= math.sqrt(6 / 14)
    assert np.abs(w1).max() <= math.sqrt(6 / 13)
    assert not b0.any() and not b1.any()
