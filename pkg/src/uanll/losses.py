"""Loss functions with values and exact gradients.

All losses average over the batch with the 1/(2m) prefactor built in, so
batch size never rescales learning rates. Gradients are reported w.r.t.
the probability vector h and the log-variance s of each sample; feeding
them to model_backward completes the chain rule through the network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

CE_CLAMP = 1e-12


@dataclass
class LossValue:
    """Batch loss with per-sample values and analytic partials.

    value is the batch mean; d_h is (m, N), d_s is (m,) — both are
    gradients of `value`, so the 1/m averaging is already inside.
    """

    value: float
    d_h: np.ndarray = field(repr=False)
    d_s: np.ndarray = field(repr=False)
    per_sample: np.ndarray = field(repr=False)
    clamped: bool = False


def _as_batch(y, h, s=None):
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if y.shape != h.shape:
        raise ShapeError(f"label shape {y.shape} != prediction shape {h.shape}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(h))):
        raise ValueError("non-finite labels or predictions")
    if s is None:
        return y, h, None
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    if s.shape != (y.shape[0],):
        raise ShapeError(f"expected {y.shape[0]} log-variances, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite log-variances")
    return y, h, s


def uanll_loss(y, h, s) -> LossValue:
    """Uncertainty-aware NLL for N-class outputs.

    Per sample: (exp(-s) * sum_k (y_k - h_k)^2 + N*s) / 2, averaged over the
    batch. The exp(-s) factor lets the model discount hard samples at the
    price of the N*s regularizer; the minimum over s sits at log(SE/N).
    """
    y, h, s = _as_batch(y, h, s)
    m, n = y.shape
    diff = y - h
    se = np.sum(diff * diff, axis=1)
    inv_var = np.exp(-s)
    per_sample = 0.5 * (inv_var * se + n * s)
    d_h = -(inv_var[:, None] * diff) / m
    d_s = (-inv_var * se + n) / (2.0 * m)
    return LossValue(float(per_sample.mean()), d_h, d_s, per_sample)


def uanll_loss_sigma(y, h, sigma2) -> LossValue:
    """Variance-parameterized form: (SE/sigma2 + N*log(sigma2)) / 2 per sample.

    Equals uanll_loss at s = log(sigma2). d_s holds the gradient w.r.t.
    sigma2 itself.
    """
    y, h, sigma2 = _as_batch(y, h, sigma2)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be strictly positive")
    m, n = y.shape
    diff = y - h
    se = np.sum(diff * diff, axis=1)
    per_sample = 0.5 * (se / sigma2 + n * np.log(sigma2))
    d_h = -(diff / sigma2[:, None]) / m
    d_sigma2 = (-se / sigma2**2 + n / sigma2) / (2.0 * m)
    return LossValue(float(per_sample.mean()), d_h, d_sigma2, per_sample)


def ablation_loss(y, h) -> LossValue:
    """Squared-error-only variant: sum_k (y_k - h_k)^2 / 2 per sample.

    Identical to uanll_loss with s forced to zero; d_s is always zero.
    """
    y, h, _ = _as_batch(y, h)
    m, n = y.shape
    diff = y - h
    se = np.sum(diff * diff, axis=1)
    per_sample = 0.5 * se
    d_h = -diff / m
    return LossValue(float(per_sample.mean()), d_h, np.zeros(m), per_sample)


def het_regression_loss(y, h, s) -> LossValue:
    """Scalar heteroscedastic regression loss, log-variance parameterized.

    Per sample: (exp(-s) * (y - h)^2 + s) / 2. With s fixed at zero this is
    exactly half the mean squared error.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    h = np.atleast_1d(np.asarray(h, dtype=np.float64))
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    if not (y.shape == h.shape == s.shape) or y.ndim != 1:
        raise ShapeError("het_regression_loss expects equal-length scalar batches")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(h)) and np.all(np.isfinite(s))):
        raise ValueError("non-finite inputs")
    m = y.shape[0]
    sq = (y - h) ** 2
    inv_var = np.exp(-s)
    per_sample = 0.5 * (inv_var * sq + s)
    d_h = (-(inv_var * (y - h)) / m)[:, None]
    d_s = (-inv_var * sq + 1.0) / (2.0 * m)
    return LossValue(float(per_sample.mean()), d_h, d_s, per_sample)


def cross_entropy_loss(y, h) -> LossValue:
    """Mean cross entropy -sum_k y_k log h_k; accepts smoothed labels.

    Probabilities below 1e-12 are clamped before the log; the clamped flag
    is set when a clamped entry carries label mass (file-loaded predictions
    may contain exact zeros even though a softmax head cannot).
    """
    y, h, _ = _as_batch(y, h)
    m, _ = y.shape
    low = h < CE_CLAMP
    clamped = bool(np.any(low & (y > 0)))
    hc = np.where(low, CE_CLAMP, h)
    per_sample = -np.sum(y * np.log(hc), axis=1)
    d_h = np.where(low, 0.0, -y / hc) / m
    return LossValue(float(per_sample.mean()), d_h, np.zeros(m), per_sample, clamped)


def smooth_labels(y, rate: float, n_classes: int) -> np.ndarray:
    """Mix one-hot labels with the uniform distribution.

    Output rows are (1 - rate) * y + rate/N; the true-class entry becomes
    1 - rate + rate/N, every other entry rate/N. Rows keep summing to one
    and the argmax is preserved for any rate < 1.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"smoothing rate must lie in [0, 1], got {rate}")
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != n_classes:
        raise ShapeError(f"labels have {y.shape[-1]} classes, expected {n_classes}")
    flat = np.atleast_2d(y)
    one_hot = np.all((flat == 0.0) | (flat == 1.0)) and np.all(flat.sum(axis=-1) == 1.0)
    if not one_hot:
        raise ValueError("smooth_labels expects exact one-hot rows")
    return (1.0 - rate) * y + rate / n_classes


def one_hot(labels, n_classes: int) -> np.ndarray:
    """Integer class indices to one-hot float64 rows."""
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError("label index out of range")
    return np.eye(n_classes, dtype=np.float64)[labels]
