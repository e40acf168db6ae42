import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sfda2.errors import InvalidInputError
from sfda2.stats import ClassStatistics, batch_covariance_oracle, update_class_stats


class TestBatchCovarianceOracle:
    def test_single_row(self):
        mean, cov = batch_covariance_oracle(np.array([[3.0, -1.0, 2.0]]))
        assert_array_equal(mean, [3.0, -1.0, 2.0])
        assert_array_equal(cov, np.zeros((3, 3)))

    def test_symmetric_pair(self):
        mean, cov = batch_covariance_oracle(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        assert_array_equal(mean, [0.0, 0.0])
        assert_array_equal(cov, np.diag([1.0, 0.0]))

    def test_three_point_hand_instance(self):
        # mean (2/3, 2/3); population covariance worked out from the
        # centered outer products: diag 8/9, off-diagonal -4/9
        mean, cov = batch_covariance_oracle(
            np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])
        )
        assert_allclose(mean, [2.0 / 3.0, 2.0 / 3.0], atol=1e-15)
        expect = np.array([[8.0, -4.0], [-4.0, 8.0]]) / 9.0
        assert_allclose(cov, expect, atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            batch_covariance_oracle(np.zeros((0, 2)))

    def test_population_normalization(self):
        # divide-by-m, not m-1
        rows = np.random.default_rng(0).standard_normal((7, 3))
        _, cov = batch_covariance_oracle(rows)
        assert_allclose(cov, np.cov(rows.T, bias=True), atol=1e-12)


class TestUpdateClassStats:
    def test_single_sample_single_class(self):
        stats = ClassStatistics.empty(3, 2)
        z = np.array([[1.5, -2.0]])
        out = update_class_stats(stats, z, [1])
        assert_array_equal(out.means[1], z[0])
        assert_array_equal(out.covs[1], np.zeros((2, 2)))
        assert out.counts[1] == 1
        # untouched classes stay at the empty state
        assert_array_equal(out.means[0], np.zeros(2))
        assert_array_equal(out.covs[2], np.zeros((2, 2)))
        assert out.counts[0] == 0

    def test_one_batch_equals_oracle(self):
        rng = np.random.default_rng(1)
        rows = rng.standard_normal((25, 4))
        stats = update_class_stats(ClassStatistics.empty(2, 4), rows, [0] * 25)
        mean, cov = batch_covariance_oracle(rows)
        assert_allclose(stats.means[0], mean, atol=1e-12)
        assert_allclose(stats.covs[0], cov, atol=1e-12)
        assert stats.counts[0] == 25

    def test_split_batches_match_single_pass(self):
        rng = np.random.default_rng(2)
        rows = rng.standard_normal((60, 3))
        labels = rng.integers(0, 4, size=60)
        whole = update_class_stats(ClassStatistics.empty(4, 3), rows, labels)
        split = ClassStatistics.empty(4, 3)
        for lo, hi in ((0, 10), (10, 30), (30, 60)):
            split = update_class_stats(split, rows[lo:hi], labels[lo:hi])
        assert_allclose(split.means, whole.means, atol=1e-10)
        assert_allclose(split.covs, whole.covs, atol=1e-10)
        assert_array_equal(split.counts, whole.counts)

    def test_batch_order_invariance(self):
        rng = np.random.default_rng(3)
        batches = [
            (rng.standard_normal((m, 2)), rng.integers(0, 3, size=m))
            for m in (5, 12, 8)
        ]
        forward_order = ClassStatistics.empty(3, 2)
        for rows, labels in batches:
            forward_order = update_class_stats(forward_order, rows, labels)
        reverse_order = ClassStatistics.empty(3, 2)
        for rows, labels in reversed(batches):
            reverse_order = update_class_stats(reverse_order, rows, labels)
        assert_allclose(reverse_order.means, forward_order.means, atol=1e-10)
        assert_allclose(reverse_order.covs, forward_order.covs, atol=1e-10)
        assert_array_equal(reverse_order.counts, forward_order.counts)

    def test_covariances_stay_symmetric(self):
        rng = np.random.default_rng(4)
        stats = ClassStatistics.empty(2, 5)
        for _ in range(10):
            rows = rng.standard_normal((9, 5)) * 3.0 + rng.standard_normal(5)
            stats = update_class_stats(stats, rows, rng.integers(0, 2, size=9))
        for c in range(2):
            assert_array_equal(stats.covs[c], stats.covs[c].T)
            assert np.linalg.eigvalsh(stats.covs[c]).min() >= -1e-12

    def test_input_is_not_mutated(self):
        stats = ClassStatistics.empty(2, 2)
        out = update_class_stats(stats, np.ones((3, 2)), [0, 0, 1])
        assert_array_equal(stats.counts, [0, 0])
        assert out is not stats

    def test_label_out_of_range_rejected(self):
        stats = ClassStatistics.empty(2, 2)
        with pytest.raises(InvalidInputError):
            update_class_stats(stats, np.ones((1, 2)), [2])
        with pytest.raises(InvalidInputError):
            update_class_stats(stats, np.ones((1, 2)), [-1])

    def test_width_mismatch_rejected(self):
        stats = ClassStatistics.empty(2, 3)
        with pytest.raises(InvalidInputError):
            update_class_stats(stats, np.ones((1, 2)), [0])

    def test_empty_constructor_validates(self):
        with pytest.raises(InvalidInputError):
            ClassStatistics.empty(0, 2)
        with pytest.raises(InvalidInputError):
            ClassStatistics.empty(2, 0)
