"""Tests for the tensor library: losses, softmax, gradient checks and the optimizer"""

from __future__ import annotations

import math

import numpy as np
import pytest

from gendoc.errors import InputValidationError, NumericError
from gendoc.numerics import (
    IGNORE_INDEX,
    Adam,
    Tensor,
    conv2d,
    conv_transpose2d,
    cross_entropy,
    grad_check,
    layer_norm,
    lr_at,
    no_grad,
    parameter,
    precision,
    softmax,
    softmax_rows,
)
from gendoc.numerics.gradcheck import relative_error


# ============ Unit Tests: cross_entropy ============


class TestCrossEntropy:
    def test_uniform_logits_give_log_vocab(self):
        loss = cross_entropy(Tensor(np.zeros((3, 16))), np.array([1, 5, 9]))
        assert float(loss.data) == pytest.approx(math.log(16), abs=1e-6)

    def test_confident_prediction_near_zero(self):
        logits = np.zeros((1, 8))
        logits[0, 3] = 30.0
        assert float(cross_entropy(Tensor(logits), np.array([3])).data) < 1e-3

    def test_smoothing_matches_direct_formula(self, float64):
        logits = np.array([[1.0, 0.0, 0.0, 0.0]])
        log_p = logits[0] - np.log(np.exp(logits[0]).sum())
        expected = 0.9 * -log_p[0] + 0.1 * -log_p.mean()
        loss = cross_entropy(Tensor(logits), np.array([0]), smoothing=0.1)
        assert float(loss.data) == pytest.approx(expected, rel=1e-12)

    def test_weight_scales_loss(self):
        logits = Tensor(np.zeros((2, 4)))
        plain = float(cross_entropy(logits, np.array([0, 1])).data)
        assert float(cross_entropy(logits, np.array([0, 1]), weight=0.5).data) == pytest.approx(plain / 2)

    def test_ignored_positions_excluded(self):
        logits = np.zeros((2, 4))
        logits[1] = [9.0, 0.0, 0.0, 0.0]
        loss = cross_entropy(Tensor(logits), np.array([IGNORE_INDEX, 0]))
        assert float(loss.data) < 1e-3

    def test_all_ignored_is_zero(self):
        loss = cross_entropy(Tensor(np.ones((3, 4))), np.full(3, IGNORE_INDEX))
        assert float(loss.data) == 0.0

    def test_target_out_of_range_rejected(self):
        with pytest.raises(InputValidationError):
            cross_entropy(Tensor(np.zeros((1, 4))), np.array([4]))

    def test_smoothing_range(self):
        with pytest.raises(InputValidationError):
            cross_entropy(Tensor(np.zeros((1, 4))), np.array([0]), smoothing=1.0)

    def test_gradient_is_probs_minus_target(self, float64):
        logits = parameter(np.array([[0.5, -1.0, 2.0]]))
        cross_entropy(logits, np.array([2])).backward()
        probs = np.exp(logits.data) / np.exp(logits.data).sum()
        expected = probs.copy()
        expected[0, 2] -= 1.0
        np.testing.assert_allclose(logits.grad, expected, atol=1e-12)


# ============ Unit Tests: softmax_rows ============


class TestSoftmaxRows:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(softmax_rows(Tensor(np.zeros((1, 2)))).data, [[0.5, 0.5]])

    def test_shift_invariance(self):
        for c in (-50.0, 0.0, 7.0, 300.0):
            out = softmax_rows(Tensor(np.full((1, 3), c))).data
            np.testing.assert_allclose(out, [[1 / 3] * 3], rtol=1e-6)

    def test_matches_direct_formula(self, float64):
        row = np.array([1.0, 2.0, 3.0])
        expected = np.exp(row) / np.exp(row).sum()
        np.testing.assert_allclose(softmax_rows(Tensor(row[None])).data[0], expected, rtol=1e-14)

    def test_rows_sum_to_one(self):
        x = Tensor(np.random.default_rng(0).normal(size=(5, 7)) * 10)
        np.testing.assert_allclose(softmax_rows(x).data.sum(axis=1), np.ones(5), rtol=1e-6)

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            softmax_rows(Tensor(np.array([[0.0, np.nan]])))

    def test_needs_two_dims(self):
        with pytest.raises(InputValidationError):
            softmax_rows(Tensor(np.zeros(3)))


# ============ Unit Tests: grad_check ============


class TestGradCheck:
    def test_square(self):
        x = parameter(np.array([3.0]))
        report = grad_check(lambda p: (p["x"] * p["x"]).sum(), {"x": x})
        assert report.passed
        assert report.errors["x"] <= 1e-6

    def test_softmax_sum_has_zero_gradient(self, float64):
        x = parameter(np.array([[0.3, -1.2, 2.0]]))
        softmax(x).sum().backward()
        np.testing.assert_allclose(x.grad, np.zeros((1, 3)), atol=1e-12)

    def test_two_layer_mlp(self):
        rng = np.random.default_rng(1)
        params = {
            "w1": parameter(rng.normal(size=(5, 8))),
            "b1": parameter(rng.normal(size=8)),
            "w2": parameter(rng.normal(size=(8, 4))),
        }
        x = rng.normal(size=(6, 5))
        targets = rng.integers(4, size=6)

        def loss(p):
            hidden = (Tensor(x) @ p["w1"] + p["b1"]).tanh()
            return cross_entropy(hidden @ p["w2"], targets)

        report = grad_check(loss, params)
        assert report.passed, report.to_dict()
        assert report.worst()[1] <= 1e-5

    def test_layer_norm_and_convolutions(self):
        rng = np.random.default_rng(2)
        params = {
            "gamma": parameter(rng.normal(size=6)),
            "beta": parameter(rng.normal(size=6)),
            "w": parameter(rng.normal(size=(3, 2, 3, 3))),
            "b": parameter(rng.normal(size=3)),
            "wt": parameter(rng.normal(size=(3, 2, 4, 4))),
            "bt": parameter(rng.normal(size=2)),
        }
        image = rng.normal(size=(2, 6, 6))

        def loss(p):
            y = conv2d(Tensor(image), p["w"], p["b"], stride=1, padding=1)
            y = layer_norm(y, p["gamma"], p["beta"])
            z = conv_transpose2d(y, p["wt"], p["bt"], stride=2, padding=1)
            return (z * z).mean()

        assert grad_check(loss, params).passed

    def test_float32_mode_tolerance(self):
        rng = np.random.default_rng(3)
        params = {"w": parameter(rng.normal(size=(4, 3)))}
        x = rng.normal(size=(2, 4))
        report = grad_check(lambda p: cross_entropy(Tensor(x) @ p["w"], np.array([0, 2])), params,
                            float64=False)
        assert report.dtype == "float32"
        assert report.tolerance == 1e-3
        assert report.passed

    def test_corrupted_backward_fails(self):
        x = parameter(np.array([1.5, -0.5]))

        def loss(p):
            y = p["x"] * p["x"]
            # sum whose backward sends three times the true gradient
            return Tensor._make(y.data.sum(), (y,), "broken_sum", lambda g: y._send(np.full(y.shape, 3.0 * g)))

        assert not grad_check(loss, {"x": x}).passed

    def test_small_gradients_under_a_large_loss(self):
        rng = np.random.default_rng(4)
        params = {"x": parameter(rng.normal(size=20))}
        report = grad_check(lambda p: (p["x"].tanh() * 1e-5).sum() + 7.0, params)
        assert report.passed, report.to_dict()

    def test_near_zero_coordinates_compared_at_tensor_scale(self):
        ad = np.array([1.0, 1e-9, -0.5])
        fd = np.array([1.0, 3e-9, -0.5])
        assert relative_error(ad, fd).max() <= 1e-8
        assert relative_error(np.zeros(2), np.array([0.0, 5e-7])).max() == pytest.approx(0.5)

    def test_numeric_fn_checks_a_surrogate_gradient(self):
        start = np.array([0.4, -1.1, 2.0])
        shift = np.array([0.3, 0.2, -0.6])
        x = parameter(start.copy())

        def copied(p):
            # forward value is start + shift; the gradient flows to x as if it were x itself
            z = p["x"] + (Tensor(start + shift) - p["x"]).detach()
            return (z * z).sum()

        def shifted(p):
            z = p["x"] + Tensor(shift)
            return (z * z).sum()

        assert grad_check(copied, {"x": x}, numeric_fn=shifted).passed
        assert not grad_check(copied, {"x": x}).passed

    def test_non_finite_loss_aborts(self):
        x = parameter(np.array([-1.0]))
        with pytest.raises(NumericError):
            grad_check(lambda p: p["x"].log().sum(), {"x": x})

    def test_parameters_restored(self):
        data = np.array([0.25, 0.5], dtype=np.float32)
        x = parameter(data.copy())
        grad_check(lambda p: (p["x"] * p["x"]).sum(), {"x": x})
        assert x.data.dtype == np.float32
        np.testing.assert_array_equal(x.data, data)
        assert x.grad is None


# ============ Unit Tests: tensor behaviour ============


class TestTensor:
    def test_broadcast_gradient_reduces(self, float64):
        a = parameter(np.ones((3, 4)))
        b = parameter(np.ones(4))
        (a * b).sum().backward()
        np.testing.assert_allclose(b.grad, np.full(4, 3.0))

    def test_gather_scatters_back(self, float64):
        table = parameter(np.zeros((5, 2)))
        table[np.array([1, 1, 3])].sum().backward()
        np.testing.assert_allclose(table.grad[:, 0], [0, 2, 0, 1, 0])

    def test_no_grad_records_nothing(self):
        x = parameter(np.ones(2))
        with no_grad():
            y = x * 2.0
        assert not y._parents

    def test_precision_switch(self):
        with precision(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32


# ============ Unit Tests: optimizer ============


class TestSchedules:
    def test_warmup_is_linear(self):
        assert lr_at(0, 1.0, 4, 10) == pytest.approx(0.25)
        assert lr_at(3, 1.0, 4, 10) == pytest.approx(1.0)

    def test_linear_decay_reaches_zero(self):
        assert lr_at(10, 1.0, 0, 10, "linear") == pytest.approx(0.0)
        assert lr_at(5, 1.0, 0, 10, "linear") == pytest.approx(0.5)

    def test_cosine_midpoint(self):
        assert lr_at(5, 1.0, 0, 10, "cosine") == pytest.approx(0.5)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            lr_at(0, 1.0, 0, 10, "step")


class TestAdam:
    def test_minimizes_quadratic(self):
        x = parameter(np.array([5.0, -3.0]))
        opt = Adam({"x": x}, grad_clip=None)
        for step in range(300):
            opt.zero_grad()
            (x * x).sum().backward()
            opt.step(lr_at(step, 0.1, 0, 300, "linear"))
        assert np.abs(x.data).max() < 0.1

    def test_group_multiplier(self):
        a, b = parameter(np.array([1.0])), parameter(np.array([1.0]))
        opt = Adam({"backbone.w": a, "decoder.w": b}, grad_clip=None, lr_multipliers={"backbone.": 2.0})
        (a.sum() + b.sum()).backward()
        opt.step(0.01)
        assert 1.0 - a.data[0] == pytest.approx(2 * (1.0 - b.data[0]), rel=1e-4)

    def test_clip_returns_pre_clip_norm(self):
        x = parameter(np.array([3.0, 4.0]))
        opt = Adam({"x": x}, grad_clip=1.0)
        x.grad = np.array([3.0, 4.0], dtype=x.dtype)
        assert opt.step(0.1) == pytest.approx(5.0)

    def test_state_round_trip(self):
        x = parameter(np.array([1.0, 2.0]))
        opt = Adam({"x": x})
        (x * x).sum().backward()
        opt.step(0.1)
        other = Adam({"x": x})
        other.load_state(opt.state_tensors(), opt.t)
        assert other.t == 1
        np.testing.assert_array_equal(other.m["x"], opt.m["x"])
        np.testing.assert_array_equal(other.v["x"], opt.v["x"])
