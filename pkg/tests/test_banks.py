import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sfda2.banks import init_banks, knn, update_banks
from sfda2.errors import InvalidInputError
from sfda2.model import Layer, Model


def passthrough_model(dim, n_classes=2):
    """Features equal the inputs, so bank contents are directly controlled."""
    return Model(
        layers=[Layer(np.eye(dim), np.zeros(dim), "identity")],
        clf_weights=np.eye(n_classes, dim),
        clf_bias=np.zeros(n_classes),
    )


def banks_from_rows(rows, **kwargs):
    rows = np.asarray(rows, dtype=np.float64)
    return init_banks(passthrough_model(rows.shape[1]), rows, **kwargs)


class TestInitBanks:
    def test_single_sample(self):
        fbank, sbank = banks_from_rows([[1.0, 2.0]])
        assert fbank.size == 1
        assert sbank.size == 1

    def test_zero_model_scores_uniform(self):
        model = Model(
            layers=[Layer(np.zeros((3, 2)), np.zeros(3), "identity")],
            clf_weights=np.zeros((4, 3)),
            clf_bias=np.zeros(4),
        )
        _, sbank = init_banks(model, np.random.default_rng(0).standard_normal((6, 2)))
        assert_allclose(sbank.probs, np.full((6, 4), 0.25), atol=1e-15)

    def test_normalized_rows_unit_norm(self):
        rows = np.random.default_rng(1).standard_normal((40, 5))
        fbank, _ = banks_from_rows(rows)
        assert_allclose(np.linalg.norm(fbank.normalized, axis=1), np.ones(40), atol=1e-9)
        assert_array_equal(fbank.raw, rows)

    def test_zero_feature_row_flagged(self):
        fbank, _ = banks_from_rows([[0.0, 0.0], [1.0, 0.0]])
        assert fbank.zero_rows[0]
        assert not fbank.zero_rows[1]
        assert_array_equal(fbank.normalized[0], np.zeros(2))

    def test_empty_dataset_rejected(self):
        with pytest.raises(InvalidInputError):
            init_banks(passthrough_model(2), np.zeros((0, 2)))


class TestUpdateBanks:
    def test_empty_index_list_is_noop(self):
        fbank, sbank = banks_from_rows([[1.0, 0.0], [0.0, 1.0]])
        raw, probs = fbank.raw.copy(), sbank.probs.copy()
        update_banks(fbank, sbank, [], np.zeros((0, 2)), np.zeros((0, 2)))
        assert_array_equal(fbank.raw, raw)
        assert_array_equal(sbank.probs, probs)

    def test_read_your_write(self):
        rows = np.random.default_rng(2).standard_normal((5, 3))
        fbank, sbank = banks_from_rows(rows)
        new_feat = np.array([[3.0, 4.0, 0.0]])
        new_prob = np.array([[0.25, 0.75]])
        update_banks(fbank, sbank, [3], new_feat, new_prob)
        assert_array_equal(fbank.raw[3], new_feat[0])
        assert_allclose(fbank.normalized[3], [0.6, 0.8, 0.0], atol=1e-9)
        assert_array_equal(sbank.probs[3], new_prob[0])
        # other rows untouched
        assert_array_equal(fbank.raw[0], rows[0])

    def test_duplicate_index_last_write_wins(self):
        fbank, sbank = banks_from_rows([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        feats = np.array([[5.0, 0.0], [0.0, 7.0]])
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        update_banks(fbank, sbank, [2, 2], feats, probs)
        assert_array_equal(fbank.raw[2], [0.0, 7.0])
        assert_array_equal(sbank.probs[2], [0.0, 1.0])

    def test_out_of_range_index_rejected(self):
        fbank, sbank = banks_from_rows([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(InvalidInputError):
            update_banks(fbank, sbank, [2], np.ones((1, 2)), np.array([[0.5, 0.5]]))

    def test_invalid_distribution_rejected(self):
        fbank, sbank = banks_from_rows([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(InvalidInputError):
            update_banks(fbank, sbank, [0], np.ones((1, 2)), np.array([[0.9, 0.3]]))


class TestKnn:
    def test_duplicate_direction_is_nearest(self):
        fbank, _ = banks_from_rows([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        res = knn(fbank, 0, 1)
        assert_array_equal(res.indices, [1])
        assert_allclose(res.distances, [0.0], atol=1e-12)

    def test_orthogonal_and_antipodal_distances(self):
        fbank, _ = banks_from_rows([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        res = knn(fbank, 0, 2)
        assert_array_equal(res.indices, [1, 2])
        assert_allclose(res.distances, [1.0, 2.0], atol=1e-12)

    def test_k_too_large_rejected(self):
        fbank, _ = banks_from_rows([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        with pytest.raises(InvalidInputError):
            knn(fbank, 0, 3)

    def test_self_never_included_and_size_k(self):
        rows = np.random.default_rng(3).standard_normal((30, 4))
        fbank, _ = banks_from_rows(rows)
        for q in range(0, 30, 7):
            for k in (1, 4, 9):
                res = knn(fbank, q, k)
                assert res.indices.shape == (k,)
                assert q not in res.indices
                assert np.all(np.diff(res.distances) >= 0)

    def test_matches_exhaustive_oracle(self):
        rows = np.random.default_rng(4).standard_normal((80, 6))
        rows[11] = rows[40]  # plant an exact tie pair
        rows[55] = 2.5 * rows[7]
        fbank, _ = banks_from_rows(rows)
        unit = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        for q in (0, 7, 11, 40, 55, 79):
            dists = [
                (1.0 - float(unit[j] @ unit[q]), j) for j in range(80) if j != q
            ]
            expect = [j for _, j in sorted(dists)[:5]]
            res = knn(fbank, q, 5)
            assert list(res.indices) == expect

    def test_invariant_to_positive_rescaling(self):
        rows = np.random.default_rng(5).standard_normal((20, 3))
        fbank, sbank = banks_from_rows(rows)
        before = knn(fbank, 4, 6)
        update_banks(fbank, sbank, [9], 17.0 * rows[9:10], sbank.probs[9:10])
        after = knn(fbank, 4, 6)
        assert_array_equal(before.indices, after.indices)
        assert_allclose(before.distances, after.distances, atol=1e-12)

    def test_far_update_leaves_answers_unchanged(self):
        # two tight clusters; rewriting one cluster cannot disturb queries
        # answered entirely inside the other
        rng = np.random.default_rng(6)
        a = np.array([10.0, 0.0, 0.0]) + 0.01 * rng.standard_normal((8, 3))
        b = np.array([0.0, 10.0, 0.0]) + 0.01 * rng.standard_normal((8, 3))
        fbank, sbank = banks_from_rows(np.vstack([a, b]))
        before = knn(fbank, 2, 5)
        assert np.all(before.indices < 8)
        newb = np.array([0.0, 0.0, 10.0]) + 0.01 * rng.standard_normal((8, 3))
        update_banks(
            fbank, sbank, list(range(8, 16)), newb, sbank.probs[8:16].copy()
        )
        after = knn(fbank, 2, 5)
        assert_array_equal(before.indices, after.indices)
        assert_allclose(before.distances, after.distances, atol=1e-12)

    def test_deterministic_including_tie_order(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
        fbank, _ = banks_from_rows(rows)
        first = knn(fbank, 0, 3)
        second = knn(fbank, 0, 3)
        assert_array_equal(first.indices, [1, 2, 3])  # tie broken by index
        assert_array_equal(first.indices, second.indices)
        assert_array_equal(first.distances, second.distances)


class TestCapacityEviction:
    def test_oldest_rows_evicted_at_init(self):
        fbank, _ = banks_from_rows(np.eye(4), capacity_fraction=0.5)
        assert fbank.capacity == 2
        assert_array_equal(fbank.valid, [False, False, True, True])

    def test_fifo_eviction_on_update(self):
        fbank, sbank = banks_from_rows(np.eye(4), capacity_fraction=0.5)
        update_banks(fbank, sbank, [0], np.ones((1, 4)), sbank.probs[:1].copy())
        # 2 was the least recently written live row
        assert_array_equal(fbank.valid, [True, False, False, True])

    def test_rewrite_refreshes_queue_position(self):
        fbank, sbank = banks_from_rows(np.eye(4), capacity_fraction=0.5)
        update_banks(fbank, sbank, [2], np.ones((1, 4)), sbank.probs[2:3].copy())
        update_banks(fbank, sbank, [0], np.ones((1, 4)), sbank.probs[:1].copy())
        # rewriting 2 moved it behind 3, so 3 was evicted first
        assert_array_equal(fbank.valid, [True, False, True, False])

    def test_evicted_rows_not_searchable(self):
        fbank, _ = banks_from_rows(np.eye(4), capacity_fraction=0.5)
        res = knn(fbank, 2, 1)
        assert_array_equal(res.indices, [3])
        with pytest.raises(InvalidInputError):
            knn(fbank, 2, 2)

    def test_bad_fraction_rejected(self):
        with pytest.raises(InvalidInputError):
            banks_from_rows(np.eye(3), capacity_fraction=0.0)
