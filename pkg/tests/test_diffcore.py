"""Tape, ops, LSTM and optimizer checks."""

import numpy as np
import pytest

import diffcore as dc
from diffcore import (
    SGD,
    DimensionError,
    Linear,
    LSTMCell,
    Module,
    NumericError,
    Parameter,
    Tape,
    count_trainable,
    grad_check,
)


def _weighted(tape, out, seed=0):
    """Project a matrix onto a fixed random direction so every entry gets a gradient."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return dc.sum_all(dc.mul(out, tape.constant(w)))


def _param(rng, shape, name, low=-1.0, high=1.0):
    return Parameter(name, rng.uniform(low, high, size=shape))


class TestOpGradients:
    @pytest.mark.parametrize(
        "build",
        [
            lambda t, a, b: dc.add(a, b),
            lambda t, a, b: dc.sub(a, dc.row(b, 0)),
            lambda t, a, b: dc.mul(a, b),
            lambda t, a, b: dc.scale(a, -2.5),
            lambda t, a, b: dc.matmul(a, dc.transpose(b)),
            lambda t, a, b: dc.sigmoid(a),
            lambda t, a, b: dc.tanh(b),
            lambda t, a, b: dc.exp(a),
            lambda t, a, b: dc.softplus(b),
            lambda t, a, b: dc.softmax_row(a),
            lambda t, a, b: dc.concat_cols([a, b]),
            lambda t, a, b: dc.stack_rows([a, b]),
            lambda t, a, b: dc.slice_cols(a, 1, 3),
        ],
    )
    def test_op_gradient_matches_central_difference(self, build):
        rng = np.random.default_rng(3)
        a = _param(rng, (2, 3), "a")
        b = _param(rng, (2, 3), "b")

        def f(tape):
            return _weighted(tape, build(tape, tape.bind(a), tape.bind(b)))

        assert grad_check(f, [a, b]) < 1e-6

    def test_log_gradients(self):
        rng = np.random.default_rng(4)
        a = _param(rng, (1, 4), "a", 0.2, 2.0)

        def f(tape):
            x = tape.bind(a)
            return dc.sum_all(dc.add(dc.log(x), dc.clamped_log(x)))

        assert grad_check(f, [a]) < 1e-6

    def test_loss_gradients(self):
        rng = np.random.default_rng(5)
        logits = _param(rng, (1, 4), "logits")
        d = _param(rng, (1, 1), "d")
        target = np.array([0.1, 0.2, 0.3, 0.4])

        def f(tape):
            p = dc.softmax_row(tape.bind(logits))
            terms = [
                dc.cross_entropy(p, 2),
                dc.soft_cross_entropy(p, target),
                dc.mse(tape.bind(d), 0.7),
                dc.squared_distance(p, target),
            ]
            return dc.total(terms)

        assert grad_check(f, [logits, d]) < 1e-6

    def test_attached_target_gradients(self):
        rng = np.random.default_rng(15)
        logits = _param(rng, (1, 4), "logits")
        target_logits = _param(rng, (1, 4), "target_logits")
        d = _param(rng, (1, 1), "d")
        e = _param(rng, (1, 1), "e")

        def f(tape):
            p = dc.softmax_row(tape.bind(logits))
            t = dc.softmax_row(tape.bind(target_logits))
            return dc.total([dc.soft_cross_entropy(p, t), dc.mse(tape.bind(d), tape.bind(e))])

        assert grad_check(f, [logits, target_logits, d, e]) < 1e-6

    def test_grad_check_needs_positive_step(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: t.constant([[0.0]]), [], h=0.0)

    def test_lstm_step_gradient(self):
        rng = np.random.default_rng(6)
        cell = LSTMCell(3, 4, rng, "cell")
        x = _param(rng, (1, 3), "x")
        h0 = _param(rng, (1, 4), "h0")
        c0 = _param(rng, (1, 4), "c0")

        def f(tape):
            h, c = dc.lstm_step(tape, tape.bind(x), tape.bind(h0), tape.bind(c0), cell)
            h2, c2 = dc.lstm_step(tape, tape.bind(x), h, c, cell)
            return dc.add(_weighted(tape, h2, 1), _weighted(tape, c2, 2))

        assert grad_check(f, [x, h0, c0, *cell.parameters()]) < 1e-6


class TestTape:
    def test_backward_twice_is_refused(self):
        tape = Tape()
        p = Parameter("p", [[1.0]])
        out = dc.sum_all(tape.bind(p))
        tape.backward(out)
        with pytest.raises(NumericError):
            tape.backward(out)

    def test_non_finite_values_are_rejected(self):
        tape = Tape()
        with pytest.raises(NumericError):
            tape.constant([[np.nan]])
        with pytest.raises(NumericError):
            dc.log(tape.constant([[-1.0]]))

    def test_matmul_shape_mismatch_names_both_shapes(self):
        tape = Tape()
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            dc.matmul(tape.constant(np.ones((2, 3))), tape.constant(np.ones((2, 3))))

    def test_operands_on_different_tapes(self):
        with pytest.raises(DimensionError):
            dc.add(Tape().constant([[1.0]]), Tape().constant([[1.0]]))

    def test_bind_returns_one_leaf_per_parameter(self):
        tape = Tape()
        p = Parameter("p", [[2.0]])
        assert tape.bind(p).id == tape.bind(p).id

    def test_shared_parameter_accumulates(self):
        tape = Tape()
        p = Parameter("p", [[3.0]])
        out = dc.add(tape.bind(p), dc.mul(tape.bind(p), tape.bind(p)))
        tape.backward(out)
        np.testing.assert_allclose(p.grad, [[1.0 + 2 * 3.0]])

    def test_frozen_parameter_gets_no_grad(self):
        tape = Tape()
        p = Parameter("p", [[1.0, 2.0]], trainable=False)
        tape.backward(dc.sum_all(tape.bind(p)))
        np.testing.assert_array_equal(p.grad, 0.0)

    def test_grad_before_backward(self):
        tape = Tape()
        m = tape.constant([[1.0]])
        with pytest.raises(NumericError):
            tape.grad(m)

    def test_non_scalar_root(self):
        tape = Tape()
        with pytest.raises(DimensionError):
            tape.backward(tape.constant(np.ones((1, 2))))


class TestLosses:
    def test_cross_entropy_clamp_is_counted(self):
        tape = Tape()
        p = tape.constant([[1.0, 0.0]])
        out = dc.cross_entropy(p, 1)
        assert out.item() == pytest.approx(-np.log(dc.EPS_PROB))
        assert tape.clamped == 1
        tape.backward(out)
        np.testing.assert_array_equal(tape.grad(p), 0.0)

    def test_cross_entropy_class_out_of_range(self):
        tape = Tape()
        with pytest.raises(IndexError):
            dc.cross_entropy(tape.constant([[0.5, 0.5]]), 2)

    def test_prediction_off_simplex(self):
        tape = Tape()
        with pytest.raises(NumericError):
            dc.cross_entropy(tape.constant([[0.5, 0.6]]), 0)

    def test_uniform_cross_entropy(self):
        tape = Tape()
        out = dc.cross_entropy(tape.constant(np.full((1, 4), 0.25)), 3)
        assert out.item() == pytest.approx(np.log(4))

    def test_squared_distance_shape_mismatch(self):
        tape = Tape()
        with pytest.raises(DimensionError):
            dc.squared_distance(tape.constant([[1.0, 2.0]]), np.zeros(3))


class TestModules:
    def test_linear_parameter_count(self):
        assert count_trainable(Linear(10, 5, np.random.default_rng(0), "fc")) == 55

    def test_lstm_parameter_count(self):
        assert count_trainable(LSTMCell(64, 512, np.random.default_rng(0), "enc")) == 1_181_696

    def test_duplicate_names_are_refused(self):
        class Twin(Module):
            def __init__(self):
                rng = np.random.default_rng(0)
                self.a = Linear(2, 2, rng, "same")
                self.b = Linear(2, 2, rng, "same")

        with pytest.raises(ValueError, match="Duplicate"):
            Twin().parameters()

    def test_state_dict_round_trip_and_digest(self):
        rng = np.random.default_rng(1)
        src, dst = Linear(3, 2, rng, "fc"), Linear(3, 2, rng, "fc")
        assert src.digest() != dst.digest()
        dst.load_state_dict(src.state_dict())
        assert src.digest() == dst.digest()

    def test_load_state_dict_shape_mismatch(self):
        m = Linear(3, 2, np.random.default_rng(0), "fc")
        state = m.state_dict()
        state["fc.W"] = np.zeros((2, 2))
        with pytest.raises(DimensionError):
            m.load_state_dict(state)

    def test_initialisation_bounds(self):
        m = Linear(16, 4, np.random.default_rng(0), "fc")
        assert np.abs(m.W.value).max() <= 0.25


class TestSGD:
    def test_clipping_scales_to_global_norm(self):
        p = Parameter("p", [[0.0, 0.0]])
        p.grad[:] = [[30.0, 40.0]]
        opt = SGD([p], lr=1.0, momentum=0.0, clip_norm=5.0)
        assert opt.step() == pytest.approx(50.0)
        np.testing.assert_allclose(p.value, [[-3.0, -4.0]])

    def test_momentum(self):
        p = Parameter("p", [[0.0]])
        opt = SGD([p], lr=0.1, momentum=0.9, clip_norm=None)
        p.grad[:] = 1.0
        opt.step()
        opt.step()
        np.testing.assert_allclose(p.value, [[-0.29]])

    def test_frozen_parameters_are_skipped(self):
        p = Parameter("p", [[1.0]], trainable=False)
        assert SGD([p]).params == []

    def test_non_finite_gradient(self):
        p = Parameter("p", [[1.0]])
        p.grad[:] = np.inf
        with pytest.raises(NumericError):
            SGD([p]).step()
