import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydraplus.exceptions import NumericError, ShapeError
from hydraplus.metrics import (
    Histogram,
    build_histogram,
    ece,
    error_rate,
    histogram_rows,
    nll_gaussian,
    shared_range,
    total_variation,
)


def conf_rows(conf, k=2):
    """Probability rows whose argmax is class 0 with the given confidence."""
    conf = np.asarray(conf, dtype=float)
    rest = (1 - conf) / (k - 1)
    return np.column_stack([conf] + [rest] * (k - 1))


class TestError:
    def test_all_correct(self):
        assert error_rate(np.eye(3), [0, 1, 2]) == 0.0

    def test_all_wrong(self):
        assert error_rate(np.eye(3), [1, 2, 0]) == 1.0

    def test_one_of_four(self):
        assert error_rate(np.eye(4), [0, 1, 2, 0]) == 0.25

    def test_empty(self):
        with pytest.raises(ValueError):
            error_rate(np.zeros((0, 3)), [])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            error_rate(np.eye(3), [0, 1])


class TestEce:
    def test_perfect(self):
        assert ece(np.eye(3), [0, 1, 2]) == 0.0

    def test_single_bin(self):
        assert ece(conf_rows([0.85] * 4), [0, 0, 0, 1]) == pytest.approx(0.10, abs=1e-12)

    def test_confident_and_right(self):
        assert ece(conf_rows([0.95, 0.95]), [0, 0]) == pytest.approx(0.05, abs=1e-12)

    def test_right_inclusive_edges(self):
        # conf exactly 0.8 belongs to (0.7, 0.8], conf 0.81 to (0.8, 0.9]
        assert ece(conf_rows([0.8, 0.81]), [0, 1]) == pytest.approx(0.5 * 0.2 + 0.5 * 0.81)

    def test_empty(self):
        with pytest.raises(ValueError):
            ece(np.zeros((0, 2)), [])

    def test_bins_validated(self):
        with pytest.raises(ValueError):
            ece(np.eye(2), [0, 1], bins=0)

    @given(st.integers(1, 40), st.integers(0, 2**31))
    @settings(max_examples=80, deadline=None)
    def test_one_bin_is_global_gap(self, n, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(3), size=n)
        y = rng.integers(0, 3, size=n)
        acc = np.mean(p.argmax(1) == y)
        assert ece(p, y, bins=1) == pytest.approx(abs(acc - p.max(1).mean()), abs=1e-12)
        assert 0 <= ece(p, y) <= 1


class TestNll:
    def test_exact_fit(self):
        assert nll_gaussian([1.0], [1.0], [1.0]) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_unit_residual(self):
        assert nll_gaussian([1.0], [1.0], [0.0]) == pytest.approx(0.5 * (1 + math.log(2 * math.pi)), abs=1e-12)

    def test_cancelling_variance(self):
        assert nll_gaussian([0.0], [1 / (2 * math.pi)], [0.0]) == pytest.approx(0.0, abs=1e-12)

    def test_non_positive(self):
        with pytest.raises(NumericError):
            nll_gaussian([0.0], [0.0], [0.0])


class TestTv:
    def h(self, masses):
        return Histogram(np.linspace(0, 1, len(masses) + 1), np.asarray(masses, dtype=float))

    def test_identical(self):
        assert total_variation(self.h([0.2, 0.8]), self.h([0.2, 0.8])) == 0.0

    def test_disjoint(self):
        assert total_variation(self.h([1, 0, 0]), self.h([0, 0, 1])) == 2.0

    def test_hand(self):
        assert total_variation(self.h([1, 0]), self.h([0.5, 0.5])) == 1.0

    def test_mismatched_binning(self):
        with pytest.raises(ValueError):
            total_variation(self.h([1, 0]), self.h([1, 0, 0]))
        other = Histogram(np.linspace(0, 2, 3), np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            total_variation(self.h([1, 0]), other)

    @given(st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_metric_properties(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (self.h(rng.dirichlet(np.ones(6))) for _ in range(3))
        ab = total_variation(a, b)
        assert 0 <= ab <= 2 + 1e-12
        assert ab == total_variation(b, a)
        assert ab <= total_variation(a, c) + total_variation(c, b) + 1e-12


class TestHistogram:
    def test_single_value(self):
        h = build_histogram([0.3], 50, (0.0, 1.0))
        assert h.masses.sum() == 1.0 and h.masses.max() == 1.0

    def test_upper_edge_in_last_bin(self):
        h = build_histogram([1.0], 4, (0.0, 1.0))
        np.testing.assert_array_equal(h.masses, [0, 0, 0, 1])

    def test_uniform_stream(self):
        vals = np.random.default_rng(0).uniform(-2, 3, size=10**6)
        h = build_histogram(vals, 50, (-2.0, 3.0))
        assert np.abs(h.masses - 1 / 50).max() < 1e-2

    def test_empty(self):
        h = build_histogram([], 5, (0.0, 1.0))
        assert h.empty and not h.masses.any()

    def test_bad_range(self):
        with pytest.raises(ValueError):
            build_histogram([0.5], 5, (1.0, 1.0))

    def test_shared_range_union(self):
        assert shared_range([0.0, 1.0], [-2.0, 0.5]) == (-2.0, 1.0)
        lo, hi = shared_range([0.0, 0.0])
        assert lo < 0.0 < hi

    def test_rows(self):
        a = build_histogram([0.1, 0.9], 2, (0.0, 1.0))
        rows = histogram_rows(a)
        assert rows[0][:3] == (0.0, 0.5, 0.5) and math.isnan(rows[0][3])
        assert histogram_rows(a, a)[1][3] == 0.5
