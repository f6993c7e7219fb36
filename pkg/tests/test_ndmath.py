import math

import numpy as np
import pytest

from conftest import assert_grads_close, random_model, zero_model
from uanll.errors import FormatError, InvalidStateError, ShapeError
from uanll.losses import uanll_loss
from uanll.ndmath import (
    GradientSet,
    finite_difference_grad,
    forward_batch,
    init_model,
    load_model,
    model_backward,
    model_forward,
    save_model,
    sigmoid,
    softmax,
)


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_single_logit(self):
        assert softmax(np.array([3.7]))[0] == 1.0

    def test_hand_evaluation(self):
        # exp(ln 1) = 1, exp(ln 3) = 3 -> (1/4, 3/4)
        out = softmax(np.array([math.log(1.0), math.log(3.0)]))
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-15)

    def test_sums_to_one_and_positive(self, rng):
        for _ in range(50):
            z = rng.normal(scale=20.0, size=rng.integers(1, 9))
            h = softmax(z)
            assert abs(h.sum() - 1.0) <= 1e-12
            assert np.all(h > 0.0)

    def test_shift_invariance(self, rng):
        z = rng.normal(size=6)
        for c in (-1000.0, -3.3, 7.0, 500.0):
            np.testing.assert_allclose(softmax(z + c), softmax(z), atol=1e-12)

    def test_batched_rows(self, rng):
        z = rng.normal(size=(4, 5))
        out = softmax(z)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(out[2], softmax(z[2]))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([1.0, np.nan]))
        with pytest.raises(ValueError):
            softmax(np.array([np.inf, 0.0]))


class TestSigmoid:
    def test_midpoint(self):
        assert sigmoid(0.0) == 0.5

    def test_saturation(self):
        assert sigmoid(1000.0) == pytest.approx(1.0, abs=1e-15)
        assert sigmoid(-1000.0) == pytest.approx(0.0, abs=1e-15)

    def test_hand_evaluation(self):
        assert sigmoid(-2.0) == pytest.approx(1.0 / (1.0 + math.exp(2.0)), abs=1e-15)
        assert f"{sigmoid(-2.0):.5f}" == "0.11920"

    def test_monotone(self, rng):
        x = np.sort(rng.normal(scale=5.0, size=100))
        y = sigmoid(x)
        assert np.all(np.diff(y) >= 0.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            sigmoid(float("nan"))


class TestModelForward:
    def test_zero_weights_uniform(self):
        model = zero_model(n_inputs=6, n_classes=4, var_bias=0.37)
        pred, _ = model_forward(model, np.ones(6))
        np.testing.assert_allclose(pred.h, 0.25)
        assert pred.s == 0.37

    def test_single_layer_hand_multiply(self):
        # no trunk: logits are the affine class map of the input
        w = np.array([[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]])
        b = np.array([0.1, -0.2, 0.0])
        model = init_model([2], 3, seed=0)
        model = model.replace_arrays([w, b, np.array([[2.0, -3.0]]), np.array([0.5])])
        x = np.array([0.3, -0.7])
        pred, _ = model_forward(model, x)
        np.testing.assert_allclose(pred.h, softmax(w @ x + b), atol=1e-15)
        assert pred.s == pytest.approx(2.0 * 0.3 - 3.0 * (-0.7) + 0.5, abs=1e-15)

    def test_probabilities_sum(self, rng):
        model = random_model(rng)
        for _ in range(10):
            pred, _ = model_forward(model, rng.normal(size=5))
            assert abs(pred.h.sum() - 1.0) <= 1e-9

    def test_dimension_mismatch(self, rng):
        model = random_model(rng)
        with pytest.raises(ShapeError):
            model_forward(model, np.zeros(7))
        with pytest.raises(ShapeError):
            forward_batch(model, np.zeros((3, 4)))

    def test_deterministic(self, rng):
        model = random_model(rng)
        x = rng.normal(size=5)
        p1, _ = model_forward(model, x)
        p2, _ = model_forward(model, x)
        assert np.array_equal(p1.h, p2.h) and p1.s == p2.s

    def test_relu_forward(self, rng):
        model = random_model(rng, activation="relu")
        pred, _ = model_forward(model, rng.normal(size=5))
        assert abs(pred.h.sum() - 1.0) <= 1e-9


class TestModelBackward:
    def test_zero_cotangent(self, rng):
        model = random_model(rng)
        _, _, cache = forward_batch(model, rng.normal(size=(2, 5)))
        grads = model_backward(model, cache, np.zeros((2, 3)), np.zeros(2))
        assert all(np.all(g == 0.0) for g in grads.arrays())

    def test_heads_disconnected(self, rng):
        # s does not depend on the class head, and h not on the var head
        model = random_model(rng)
        _, _, cache = forward_batch(model, rng.normal(size=(1, 5)))
        g_s = model_backward(model, cache, np.zeros((1, 3)), np.ones(1))
        assert np.all(g_s.class_w == 0.0) and np.all(g_s.class_b == 0.0)
        assert np.any(g_s.var_w != 0.0)
        g_h = model_backward(model, cache, np.ones((1, 3)), np.zeros(1))
        assert np.all(g_h.var_w == 0.0) and np.all(g_h.var_b == 0.0)

    def test_matches_finite_differences(self, rng):
        for _ in range(5):
            model = random_model(rng)
            x = rng.normal(size=(3, 5))
            y = np.eye(3)[rng.integers(0, 3, size=3)]

            def loss_fn(m):
                h, s, _ = forward_batch(m, x)
                return uanll_loss(y, h, s).value

            h, s, cache = forward_batch(model, x)
            lv = uanll_loss(y, h, s)
            analytic = model_backward(model, cache, lv.d_h, lv.d_s)
            assert_grads_close(analytic, finite_difference_grad(loss_fn, model))

    def test_stale_cache_rejected(self, rng):
        model = random_model(rng)
        other = random_model(rng)
        _, _, cache = forward_batch(model, rng.normal(size=(1, 5)))
        with pytest.raises(InvalidStateError):
            model_backward(other, cache, np.zeros((1, 3)), np.zeros(1))

    def test_cotangent_shape_mismatch(self, rng):
        model = random_model(rng)
        _, _, cache = forward_batch(model, rng.normal(size=(2, 5)))
        with pytest.raises(ShapeError):
            model_backward(model, cache, np.zeros((3, 3)), np.zeros(3))


class TestFiniteDifference:
    def test_quadratic(self, rng):
        model = random_model(rng)

        def loss_fn(m):
            return 0.5 * sum(float(np.sum(a * a)) for a in m.arrays())

        fd = finite_difference_grad(loss_fn, model)
        for g, a in zip(fd.arrays(), model.arrays()):
            np.testing.assert_allclose(g, a, atol=1e-6)

    def test_constant(self, rng):
        fd = finite_difference_grad(lambda m: 4.2, random_model(rng))
        assert all(np.all(g == 0.0) for g in fd.arrays())

    def test_bad_eps(self, rng):
        with pytest.raises(ValueError):
            finite_difference_grad(lambda m: 0.0, random_model(rng), eps=0.0)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        model = random_model(rng, n_inputs=7, hidden=(5, 4), n_classes=6)
        path = tmp_path / "model.uanll"
        save_model(model, path)
        loaded = load_model(path)
        for a, b in zip(model.arrays(), loaded.arrays()):
            assert np.array_equal(a, b) and a.dtype == b.dtype

    def test_trunkless_round_trip(self, tmp_path):
        model = init_model([3], 2, seed=1)
        save_model(model, tmp_path / "m.uanll")
        loaded = load_model(tmp_path / "m.uanll")
        assert loaded.layer_dims == [3]
        for a, b in zip(model.arrays(), loaded.arrays()):
            assert np.array_equal(a, b)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.uanll"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_model(path)

    def test_truncated(self, rng, tmp_path):
        model = random_model(rng)
        path = tmp_path / "m.uanll"
        save_model(model, path)
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(FormatError):
            load_model(path)

    def test_trailing_bytes(self, rng, tmp_path):
        model = random_model(rng)
        path = tmp_path / "m.uanll"
        save_model(model, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_model(path)


class TestGradientSet:
    def test_zeros_match_shapes(self, rng):
        model = random_model(rng)
        zeros = GradientSet.zeros(model)
        for g, a in zip(zeros.arrays(), model.arrays()):
            assert g.shape == a.shape and np.all(g == 0.0)
