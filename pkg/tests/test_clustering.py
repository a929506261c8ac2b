"""Tests for spherical k-means."""

import unittest

import numpy as np
import pytest

from xmlforest.clustering import (
    KMeansConfig,
    OpCounter,
    assign_nearest,
    assign_rows,
    centroids_from_labels,
    kmeanspp_indices,
    kmeanspp_init,
    product_ops,
    row_product_ops,
    spherical_kmeans,
)
from xmlforest.exceptions import ConfigError
from xmlforest.sparse import SparseMatrix, SparseVec, normalize_rows, row_norms

from .helpers import random_dataset


def _rows(dense_rows):
    return SparseMatrix.from_rows([SparseVec.from_dense(r) for r in dense_rows], len(dense_rows[0]))


TWO_DIRECTIONS = _rows(
    [
        [1.0, 0.1, 0.0, 0.0],
        [2.0, 0.0, 0.0, 0.0],
        [0.9, 0.2, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.1],
        [0.0, 0.0, 3.0, 0.0],
        [0.0, 0.0, 1.0, 0.3],
    ]
)


class TestKMeansConfig(unittest.TestCase):
    """Test cases for KMeansConfig validation."""

    def test_defaults(self):
        cfg = KMeansConfig()
        self.assertEqual((cfg.k, cfg.max_iters), (10, 20))

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            KMeansConfig(k=1)
        with self.assertRaises(ConfigError):
            KMeansConfig(max_iters=0)


class TestAssignment(unittest.TestCase):
    """Test cases for nearest-centroid assignment."""

    def test_assign_nearest(self):
        centroids = [
            SparseVec.from_pairs([(0, 1.0)], 3),
            SparseVec.from_pairs([(1, 1.0)], 3),
        ]
        self.assertEqual(assign_nearest(SparseVec.from_pairs([(1, 5.0)], 3), centroids), 1)

    def test_ties_go_to_lowest_index(self):
        centroids = [
            SparseVec.from_pairs([(0, 1.0)], 3),
            SparseVec.from_pairs([(1, 1.0)], 3),
        ]
        row = SparseVec.from_pairs([(0, 1.0), (1, 1.0)], 3)
        self.assertEqual(assign_nearest(row, centroids), 0)

    def test_zero_row_goes_to_first_non_empty(self):
        centroids = [
            SparseVec.empty(3),
            SparseVec.from_pairs([(1, 1.0)], 3),
            SparseVec.from_pairs([(2, 1.0)], 3),
        ]
        self.assertEqual(assign_nearest(SparseVec.empty(3), centroids), 1)

    def test_empty_centroid_never_chosen(self):
        centroids = _rows([[0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        rows = _rows([[1.0, 0.0, 0.0]])
        np.testing.assert_array_equal(assign_rows(rows, centroids), [1])

    def test_all_empty_centroids(self):
        centroids = SparseMatrix.from_rows([SparseVec.empty(3)] * 2, 3)
        self.assertIsNone(assign_rows(_rows([[1.0, 0.0, 0.0]]), centroids))
        self.assertEqual(assign_nearest(SparseVec.from_pairs([(0, 1.0)], 3), centroids.rows), 0)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            assign_rows(_rows([[1.0, 0.0]]), _rows([[1.0, 0.0, 0.0]]))

    def test_centroids_from_labels(self):
        centroids = centroids_from_labels(TWO_DIRECTIONS, np.array([0, 0, 0, 1, 1, 1]), 3)
        np.testing.assert_allclose(row_norms(centroids), [1.0, 1.0, 0.0])
        self.assertEqual(set(centroids.row(0).indices), {0, 1})


class TestKMeansPlusPlus(unittest.TestCase):
    """Test cases for k-means++ seeding."""

    def test_seeds_span_both_directions(self):
        normalized = normalize_rows(TWO_DIRECTIONS)
        for seed in range(5):
            picks = kmeanspp_indices(normalized, 2, np.random.default_rng(seed))
            groups = {p // 3 for p in picks}
            self.assertEqual(groups, {0, 1})

    def test_identical_rows_fall_back_to_uniform(self):
        rows = _rows([[1.0, 1.0]] * 4)
        picks = kmeanspp_indices(normalize_rows(rows), 3, np.random.default_rng(0))
        self.assertEqual(len(picks), 3)
        self.assertTrue(all(0 <= p < 4 for p in picks))

    def test_init_returns_unit_rows(self):
        seeds = kmeanspp_init(TWO_DIRECTIONS, 2, np.random.default_rng(1))
        for seed in seeds:
            self.assertAlmostEqual(seed.norm(), 1.0)

    def test_other_basis_vector_follows_duplicates(self):
        rows = _rows([[1.0, 0.0]] * 5 + [[0.0, 1.0]])
        for seed in range(10):
            picks = kmeanspp_indices(normalize_rows(rows), 2, np.random.default_rng(seed))
            if picks[0] < 5:
                self.assertEqual(picks[1], 5)
            else:
                self.assertLess(picks[1], 5)

    @pytest.mark.slow
    def test_pick_frequencies_follow_squared_distance(self):
        rows = normalize_rows(_rows([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
        dense = rows.to_dense()
        distance = np.clip(1.0 - dense @ dense.T, 0.0, None)
        trials = 10000
        rng = np.random.default_rng(2024)
        counts = np.zeros((3, 3))
        for _ in range(trials):
            first, second = kmeanspp_indices(rows, 2, rng)
            counts[first, second] += 1

        firsts = counts.sum(axis=1)
        se = np.sqrt(trials * (1 / 3) * (2 / 3))
        self.assertTrue(np.all(np.abs(firsts - trials / 3) < 4 * se))
        for first in range(3):
            weights = distance[first] ** 2
            expected = weights / weights.sum()
            observed = counts[first] / firsts[first]
            se = np.sqrt(expected * (1 - expected) / firsts[first])
            self.assertTrue(
                np.all(np.abs(observed - expected) <= 4 * se + 1e-12), (first, observed, expected)
            )

    def test_reproducible(self):
        normalized = normalize_rows(TWO_DIRECTIONS)
        self.assertEqual(
            kmeanspp_indices(normalized, 2, np.random.default_rng(9)),
            kmeanspp_indices(normalized, 2, np.random.default_rng(9)),
        )


class TestSphericalKMeans(unittest.TestCase):
    """Test cases for the clustering loop."""

    def test_separates_directions(self):
        result = spherical_kmeans(TWO_DIRECTIONS, KMeansConfig(k=2, seed=3))
        self.assertTrue(result.converged)
        labels = result.labels
        self.assertEqual(len(set(labels[:3])), 1)
        self.assertEqual(len(set(labels[3:])), 1)
        self.assertNotEqual(labels[0], labels[3])
        np.testing.assert_array_equal(sorted(result.cluster_sizes()), [3, 3])

    def test_converged_labels_are_nearest(self):
        data = random_dataset(n=60, d_x=10, d_y=12, seed=5)
        result = spherical_kmeans(data.labels, KMeansConfig(k=4, max_iters=50, seed=0))
        if result.converged:
            np.testing.assert_array_equal(
                result.labels, assign_rows(normalize_rows(data.labels), result.centroid_matrix)
            )

    def test_objective_non_decreasing(self):
        data = random_dataset(n=80, d_x=10, d_y=15, seed=6)
        result = spherical_kmeans(data.labels, KMeansConfig(k=5, max_iters=30, seed=2))
        history = result.objective_history
        self.assertEqual(len(history), result.iterations)
        for before, after in zip(history, history[1:]):
            self.assertGreaterEqual(after, before - 1e-9)

    def test_respects_iteration_cap(self):
        data = random_dataset(n=80, d_x=10, d_y=15, seed=6)
        result = spherical_kmeans(data.labels, KMeansConfig(k=5, max_iters=1, seed=2))
        self.assertEqual(result.iterations, 1)

    def test_labels_in_range(self):
        data = random_dataset(n=50, d_x=10, d_y=8, seed=7)
        result = spherical_kmeans(data.labels, KMeansConfig(k=4, seed=1))
        self.assertEqual(len(result.labels), 50)
        self.assertTrue(np.all((result.labels >= 0) & (result.labels < 4)))
        self.assertEqual(result.k, 4)
        self.assertEqual(len(result.centroids), 4)

    def test_no_empty_cluster_when_enough_distinct_rows(self):
        data = random_dataset(n=60, d_x=10, d_y=20, seed=8)
        result = spherical_kmeans(data.labels, KMeansConfig(k=3, seed=0))
        self.assertTrue(np.all(result.cluster_sizes() > 0))

    def test_identical_rows(self):
        rows = _rows([[0.0, 1.0, 1.0]] * 6)
        result = spherical_kmeans(rows, KMeansConfig(k=3, seed=0))
        self.assertTrue(result.converged)
        self.assertEqual(len(set(result.labels)), 1)

    def test_all_zero_rows(self):
        rows = SparseMatrix.from_rows([SparseVec.empty(4)] * 5, 4)
        result = spherical_kmeans(rows, KMeansConfig(k=2, seed=0))
        np.testing.assert_array_equal(result.labels, np.zeros(5))
        self.assertTrue(result.converged)

    def test_mostly_zero_rows(self):
        one = SparseVec(np.array([2]), np.array([1.0]), 4)
        rows = SparseMatrix.from_rows([SparseVec.empty(4)] * 9 + [one], 4)
        for seed in range(10):
            with self.subTest(seed=seed):
                result = spherical_kmeans(rows, KMeansConfig(k=2, seed=seed))
                self.assertTrue(result.converged)
                self.assertEqual(len(set(result.labels.tolist())), 1)
                own = result.centroid_matrix.row(int(result.labels[9]))
                self.assertEqual(own.indices.tolist(), [2])

    def test_reproducible(self):
        data = random_dataset(n=40, d_x=10, d_y=10, seed=9)
        first = spherical_kmeans(data.labels, KMeansConfig(k=3, seed=4))
        second = spherical_kmeans(data.labels, KMeansConfig(k=3, seed=4))
        np.testing.assert_array_equal(first.labels, second.labels)
        self.assertEqual(first.centroid_matrix, second.centroid_matrix)

    def test_requires_rows(self):
        with self.assertRaises(ValueError):
            spherical_kmeans(SparseMatrix.from_rows([], 3), KMeansConfig(k=2))


class TestOpCounting(unittest.TestCase):
    """Counted work of sparse products and clustering runs."""

    def test_row_product_ops(self):
        rows = _rows([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]).to_scipy()
        other = _rows([[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]]).to_scipy()
        # column nonzeros in other: 2, 1, 1
        np.testing.assert_array_equal(row_product_ops(rows, other), [3, 1, 0])
        self.assertEqual(product_ops(rows, other), 4)

    def test_disjoint_supports_cost_nothing(self):
        rows = _rows([[1.0, 0.0], [2.0, 0.0]]).to_scipy()
        other = _rows([[0.0, 1.0]]).to_scipy()
        self.assertEqual(product_ops(rows, other), 0)

    def test_counter_accumulates(self):
        counter = OpCounter()
        assign_rows(TWO_DIRECTIONS, _rows([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]), counter)
        # one matching pair per row with a nonzero in column 0 or 2, plus 6 x 2 entries
        self.assertEqual(counter.ops, 6 + 12)

    def test_kmeans_reports_ops(self):
        cfg = KMeansConfig(k=2, max_iters=1, seed=0)
        result = spherical_kmeans(TWO_DIRECTIONS, cfg)
        self.assertGreater(result.ops, 0)
        longer = spherical_kmeans(
            SparseMatrix.from_rows(TWO_DIRECTIONS.rows * 2, 4), cfg
        )
        self.assertGreater(longer.ops, result.ops)


if __name__ == "__main__":
    unittest.main()
