import math

import numpy as np
import pytest

from conftest import random_simplex
from uanll.errors import ShapeError
from uanll.losses import (
    ablation_loss,
    cross_entropy_loss,
    het_regression_loss,
    one_hot,
    smooth_labels,
    uanll_loss,
    uanll_loss_sigma,
)


def fd_input_grads(loss_fn, y, h, s=None, eps=1e-6):
    """Finite differences of a loss w.r.t. its h (and s) inputs."""
    h = np.array(h, dtype=np.float64)
    d_h = np.zeros_like(h)
    it = np.nditer(h, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        hp, hm = h.copy(), h.copy()
        hp[idx] += eps
        hm[idx] -= eps
        if s is None:
            d_h[idx] = (loss_fn(y, hp).value - loss_fn(y, hm).value) / (2 * eps)
        else:
            d_h[idx] = (loss_fn(y, hp, s).value - loss_fn(y, hm, s).value) / (2 * eps)
        it.iternext()
    if s is None:
        return d_h, None
    s = np.array(s, dtype=np.float64)
    d_s = np.zeros_like(s)
    for i in range(s.size):
        sp, sm = s.copy(), s.copy()
        sp[i] += eps
        sm[i] -= eps
        d_s[i] = (loss_fn(y, h, sp).value - loss_fn(y, h, sm).value) / (2 * eps)
    return d_h, d_s


class TestUanllLoss:
    def test_perfect_prediction(self):
        lv = uanll_loss([[1.0, 0.0]], [[1.0, 0.0]], [0.0])
        assert lv.value == 0.0

    def test_direct_substitution(self):
        lv = uanll_loss([[1.0, 0.0]], [[0.5, 0.5]], [0.0])
        assert lv.value == pytest.approx(0.25, abs=1e-15)

    def test_negative_value_possible(self):
        # exp(-ln 0.5) = 2, SE = 0.5 -> (2 * 0.5 + 2 ln 0.5) / 2
        lv = uanll_loss([[1.0, 0.0]], [[0.5, 0.5]], [math.log(0.5)])
        expected = (2.0 * 0.5 + 2.0 * math.log(0.5)) / 2.0
        assert lv.value == pytest.approx(expected, abs=1e-15)
        assert f"{lv.value:.5f}" == "-0.19315"
        assert lv.value < 0.0

    def test_gradients_match_fd(self, rng):
        for _ in range(10):
            m, n = int(rng.integers(1, 5)), int(rng.integers(2, 6))
            y = one_hot(rng.integers(0, n, size=m), n)
            h = np.stack([random_simplex(rng, n) for _ in range(m)])
            s = rng.normal(size=m)
            lv = uanll_loss(y, h, s)
            d_h, d_s = fd_input_grads(uanll_loss, y, h, s)
            np.testing.assert_allclose(lv.d_h, d_h, rtol=1e-5, atol=1e-9)
            np.testing.assert_allclose(lv.d_s, d_s, rtol=1e-5, atol=1e-9)

    def test_batch_mean_and_per_sample(self, rng):
        y = one_hot([0, 1, 1], 2)
        h = np.array([[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]])
        s = np.array([0.1, -0.3, 0.0])
        lv = uanll_loss(y, h, s)
        assert lv.per_sample.shape == (3,)
        assert lv.value == pytest.approx(lv.per_sample.mean(), abs=1e-15)

    def test_shape_and_finite_errors(self):
        with pytest.raises(ShapeError):
            uanll_loss([[1.0, 0.0]], [[0.5, 0.3, 0.2]], [0.0])
        with pytest.raises(ShapeError):
            uanll_loss([[1.0, 0.0]], [[0.5, 0.5]], [0.0, 1.0])
        with pytest.raises(ValueError):
            uanll_loss([[1.0, 0.0]], [[np.nan, 0.5]], [0.0])
        with pytest.raises(ValueError):
            uanll_loss([[1.0, 0.0]], [[0.5, 0.5]], [np.inf])


class TestSigmaParameterization:
    def test_reduces_to_ablation_at_unit_variance(self, rng):
        y = one_hot([0, 2], 3)
        h = np.stack([random_simplex(rng, 3) for _ in range(2)])
        lv = uanll_loss_sigma(y, h, [1.0, 1.0])
        assert lv.value == pytest.approx(ablation_loss(y, h).value, abs=1e-15)

    def test_identity_with_log_form(self, rng):
        y = one_hot([0], 2)
        h = np.array([[0.5, 0.5]])
        for var in (0.1, 0.5, 1.0, 2.0, 10.0):
            a = uanll_loss_sigma(y, h, [var]).value
            b = uanll_loss([[1.0, 0.0]], h, [math.log(var)]).value
            assert a == pytest.approx(b, abs=1e-12)

    def test_divergence_at_zero(self):
        y, h = [[1.0, 0.0]], [[0.5, 0.5]]
        small = uanll_loss_sigma(y, h, [1e-30]).value
        assert small > 1e29
        with pytest.raises(ValueError):
            uanll_loss_sigma(y, h, [0.0])
        with pytest.raises(ValueError):
            uanll_loss_sigma(y, h, [-1.0])

    def test_sigma_gradient_matches_fd(self, rng):
        y = one_hot([1], 3)
        h = np.array([random_simplex(rng, 3)])
        var = np.array([0.7])
        lv = uanll_loss_sigma(y, h, var)
        d_h, d_var = fd_input_grads(uanll_loss_sigma, y, h, var)
        np.testing.assert_allclose(lv.d_h, d_h, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(lv.d_s, d_var, rtol=1e-5, atol=1e-9)


class TestAblationLoss:
    def test_perfect(self):
        assert ablation_loss([[0.0, 1.0]], [[0.0, 1.0]]).value == 0.0

    def test_arithmetic(self):
        assert ablation_loss([[1.0, 0.0]], [[0.5, 0.5]]).value == pytest.approx(0.25)

    def test_equals_uanll_at_zero_s_bitwise(self, rng):
        for _ in range(20):
            m, n = int(rng.integers(1, 6)), int(rng.integers(2, 7))
            y = one_hot(rng.integers(0, n, size=m), n)
            h = np.stack([random_simplex(rng, n) for _ in range(m)])
            a = ablation_loss(y, h)
            u = uanll_loss(y, h, np.zeros(m))
            assert u.value == a.value
            assert np.array_equal(u.d_h, a.d_h)
            assert np.array_equal(u.per_sample, a.per_sample)

    def test_d_s_always_zero(self, rng):
        y = one_hot([0, 1], 2)
        h = np.array([[0.9, 0.1], [0.4, 0.6]])
        assert np.all(ablation_loss(y, h).d_s == 0.0)

    def test_gradients_match_fd(self, rng):
        y = one_hot([2, 0], 4)
        h = np.stack([random_simplex(rng, 4) for _ in range(2)])
        lv = ablation_loss(y, h)
        d_h, _ = fd_input_grads(ablation_loss, y, h)
        np.testing.assert_allclose(lv.d_h, d_h, rtol=1e-5, atol=1e-9)


class TestOptimalLogVariance:
    def test_zero_crossing_by_bisection(self, rng):
        # d_s vanishes where exp(-s) SE = N, i.e. s = ln(SE / N)
        for _ in range(5):
            n = int(rng.integers(2, 6))
            y = one_hot([int(rng.integers(0, n))], n)
            h = np.array([random_simplex(rng, n)])
            se = float(np.sum((y - h) ** 2))

            def ds_at(s):
                return uanll_loss(y, h, [s]).d_s[0]

            lo, hi = -30.0, 30.0
            assert ds_at(lo) < 0 < ds_at(hi)
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                if ds_at(mid) < 0:
                    lo = mid
                else:
                    hi = mid
            root = 0.5 * (lo + hi)
            assert root == pytest.approx(math.log(se / n), abs=1e-9)

    def test_grid_scan_minimum(self, rng):
        n = 3
        y = one_hot([0], n)
        h = np.array([random_simplex(rng, n)])
        se = float(np.sum((y - h) ** 2))
        grid = np.linspace(-10, 10, 20001)
        vals = [uanll_loss(y, h, [s]).value for s in grid]
        s_star = grid[int(np.argmin(vals))]
        assert s_star == pytest.approx(math.log(se / n), abs=2e-3)


class TestHetRegressionLoss:
    def test_zero_at_match(self):
        assert het_regression_loss([1.0], [1.0], [0.0]).value == 0.0

    def test_half_mse_at_zero_s(self, rng):
        y = rng.normal(size=8)
        h = rng.normal(size=8)
        lv = het_regression_loss(y, h, np.zeros(8))
        assert lv.value == pytest.approx(0.5 * np.mean((y - h) ** 2), abs=1e-12)

    def test_optimal_s_at_unit_error(self):
        # y=1, h=0: d/ds (exp(-s) + s)/2 = 0 at s = ln(1) = 0
        assert het_regression_loss([1.0], [0.0], [0.0]).d_s[0] == pytest.approx(0.0, abs=1e-15)
        grid = np.linspace(-5, 5, 10001)
        vals = [het_regression_loss([1.0], [0.0], [s]).value for s in grid]
        assert grid[int(np.argmin(vals))] == pytest.approx(0.0, abs=1e-3)

    def test_gradients_match_fd(self, rng):
        y, h, s = rng.normal(size=4), rng.normal(size=4), rng.normal(size=4)
        lv = het_regression_loss(y, h, s)
        eps = 1e-6
        for i in range(4):
            hp, hm = h.copy(), h.copy()
            hp[i] += eps
            hm[i] -= eps
            fd = (het_regression_loss(y, hp, s).value - het_regression_loss(y, hm, s).value) / (2 * eps)
            assert lv.d_h[i, 0] == pytest.approx(fd, rel=1e-5, abs=1e-9)
            sp, sm = s.copy(), s.copy()
            sp[i] += eps
            sm[i] -= eps
            fd = (het_regression_loss(y, h, sp).value - het_regression_loss(y, h, sm).value) / (2 * eps)
            assert lv.d_s[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            het_regression_loss([1.0, 2.0], [1.0], [0.0, 0.0])


class TestCrossEntropy:
    def test_near_perfect(self):
        lv = cross_entropy_loss([[1.0, 0.0]], [[1.0, 0.0]])
        assert lv.value == pytest.approx(0.0, abs=1e-15)
        assert not lv.clamped  # the zero sits under a zero label

    def test_uniform_gives_log_n(self):
        for n in (2, 5, 10):
            y = one_hot([0], n)
            h = np.full((1, n), 1.0 / n)
            assert cross_entropy_loss(y, h).value == pytest.approx(math.log(n), abs=1e-12)

    def test_smoothed_labels_uniform_prediction(self):
        y = smooth_labels(one_hot([3], 10), 0.4, 10)
        h = np.full((1, 10), 0.1)
        assert cross_entropy_loss(y, h).value == pytest.approx(math.log(10), abs=1e-12)

    def test_clamp_flag(self):
        lv = cross_entropy_loss([[1.0, 0.0]], [[0.0, 1.0]])
        assert lv.clamped
        assert lv.value == pytest.approx(-math.log(1e-12), abs=1e-6)

    def test_gradients_match_fd(self, rng):
        y = one_hot([1, 0], 3)
        h = np.stack([random_simplex(rng, 3) for _ in range(2)])
        lv = cross_entropy_loss(y, h)
        d_h, _ = fd_input_grads(cross_entropy_loss, y, h)
        np.testing.assert_allclose(lv.d_h, d_h, rtol=1e-4, atol=1e-8)


class TestSmoothLabels:
    def test_identity_at_zero(self):
        y = one_hot([2], 5)
        assert np.array_equal(smooth_labels(y, 0.0, 5), y)

    def test_paper_rate(self):
        out = smooth_labels(one_hot([4], 10), 0.4, 10)[0]
        assert out[4] == 0.64
        others = np.delete(out, 4)
        assert np.all(others == 0.04)
        assert abs(out.sum() - 1.0) <= 1e-12

    def test_full_smoothing(self):
        out = smooth_labels(one_hot([0], 4), 1.0, 4)[0]
        np.testing.assert_allclose(out, 0.25, atol=1e-15)

    def test_argmax_preserved(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 12))
            k = int(rng.integers(0, n))
            r = float(rng.uniform(0.0, (n - 1) / n))
            out = smooth_labels(one_hot([k], n), r, n)[0]
            assert np.argmax(out) == k
            assert out[k] > np.delete(out, k).max()
            assert abs(out.sum() - 1.0) <= 1e-12

    def test_rate_out_of_range(self):
        with pytest.raises(ValueError):
            smooth_labels(one_hot([0], 3), -0.1, 3)
        with pytest.raises(ValueError):
            smooth_labels(one_hot([0], 3), 1.1, 3)

    def test_requires_one_hot(self):
        with pytest.raises(ValueError):
            smooth_labels(np.array([[0.5, 0.5]]), 0.1, 2)


class TestOneHot:
    def test_basic(self):
        np.testing.assert_array_equal(one_hot([1, 0], 3), [[0, 1, 0], [1, 0, 0]])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            one_hot([3], 3)
