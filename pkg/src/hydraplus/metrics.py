"""Evaluation metrics and histogram comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NumericError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)


def _probs_labels(pred_probs, labels):
    probs = np.asarray(pred_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or len(probs) == 0:
        raise ValueError("expected a non-empty (n, K) probability array")
    if labels.shape != (len(probs),):
        raise ShapeError("one label per prediction")
    return probs, labels


def error_rate(pred_probs, labels):
    """Fraction of argmax predictions that miss; ties go to the lower index."""
    probs, labels = _probs_labels(pred_probs, labels)
    return float(np.mean(np.argmax(probs, axis=1) != labels))


def ece(pred_probs, labels, bins=10):
    """Expected calibration error with uniform, right-inclusive bins on (0, 1]."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    probs, labels = _probs_labels(pred_probs, labels)
    conf = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == labels).astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    total = 0.0
    n = len(conf)
    for b in range(bins):
        in_bin = idx == b
        count = int(in_bin.sum())
        if count:
            total += count / n * abs(correct[in_bin].mean() - conf[in_bin].mean())
    return float(total)


def nll_gaussian(means, variances, targets):
    """Mean full Gaussian negative log-likelihood, including log(2 pi)."""
    mu = np.asarray(means, dtype=np.float64)
    var = np.asarray(variances, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if mu.size == 0:
        raise ValueError("empty input")
    if np.any(var <= 0):
        raise NumericError("variances must be positive")
    return float(np.mean(0.5 * ((mu - y) ** 2 / var + np.log(var) + LOG_2PI)))


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    masses: np.ndarray
    empty: bool = False

    @property
    def bins(self):
        return len(self.masses)


def shared_range(*samples):
    """Range covering every sample; widened when degenerate."""
    values = np.concatenate([np.ravel(np.asarray(s, dtype=np.float64)) for s in samples])
    if values.size == 0:
        return 0.0, 1.0
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        pad = max(abs(lo) * 1e-6, 1e-12)
        lo, hi = lo - pad, hi + pad
    return lo, hi


def build_histogram(values, bins=50, value_range=None):
    """Normalised histogram on ``bins`` uniform bins over ``value_range``.

    Values outside the range are clamped into the edge bins; a value equal to
    the upper edge lands in the last bin.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    values = np.ravel(np.asarray(values, dtype=np.float64))
    lo, hi = value_range if value_range is not None else shared_range(values)
    if not lo < hi:
        raise ValueError("histogram range needs lower < upper")
    edges = np.linspace(lo, hi, bins + 1)
    if values.size == 0:
        return Histogram(edges, np.zeros(bins), empty=True)
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    return Histogram(edges, counts / values.size)


def total_variation(h_a, h_b):
    """Sum of absolute mass differences over identical binnings."""
    if h_a.bins != h_b.bins or not np.array_equal(h_a.edges, h_b.edges):
        raise ValueError("histograms use different binnings")
    return float(np.abs(h_a.masses - h_b.masses).sum())


def histogram_rows(h_a, h_b=None):
    """Rows ``(bin_left, bin_right, mass_a, mass_b)``; ``mass_b`` is NaN without ``h_b``."""
    mass_b = h_b.masses if h_b is not None else np.full(h_a.bins, np.nan)
    return [(h_a.edges[i], h_a.edges[i + 1], h_a.masses[i], mass_b[i]) for i in range(h_a.bins)]
