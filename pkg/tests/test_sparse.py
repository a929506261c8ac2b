"""Tests for sparse vectors, matrices and kernels."""

import unittest

import numpy as np
import scipy.sparse as sp

from xmlforest.exceptions import DimensionMismatchError, SparseFormatError
from xmlforest.sparse import (
    Dataset,
    SparseMatrix,
    SparseVec,
    cosine_similarity,
    dot,
    l2_normalize,
    mean_rows,
    normalize_rows,
    row_norms,
    rows_identical,
)


class TestSparseVec(unittest.TestCase):
    """Test cases for SparseVec construction and invariants."""

    def test_from_pairs(self):
        vec = SparseVec.from_pairs([(1, 2.0), (4, -1.5)], 6)
        self.assertEqual(vec.nnz, 2)
        self.assertEqual(vec.entries, [(1, 2.0), (4, -1.5)])
        self.assertEqual(vec.dim, 6)

    def test_rejects_unsorted_indices(self):
        with self.assertRaises(SparseFormatError):
            SparseVec.from_pairs([(3, 1.0), (1, 1.0)], 5)

    def test_rejects_duplicate_indices(self):
        with self.assertRaises(SparseFormatError):
            SparseVec.from_pairs([(1, 1.0), (1, 2.0)], 5)

    def test_rejects_explicit_zero(self):
        with self.assertRaises(SparseFormatError):
            SparseVec.from_pairs([(1, 0.0)], 5)

    def test_rejects_index_out_of_range(self):
        with self.assertRaises(SparseFormatError):
            SparseVec.from_pairs([(5, 1.0)], 5)

    def test_empty_vector(self):
        vec = SparseVec.empty(3)
        self.assertEqual(vec.nnz, 0)
        self.assertEqual(vec.norm(), 0.0)
        np.testing.assert_array_equal(vec.to_dense(), np.zeros(3))

    def test_arrays_are_read_only(self):
        vec = SparseVec.from_pairs([(0, 1.0)], 2)
        with self.assertRaises(ValueError):
            vec.values[0] = 3.0

    def test_from_dense_drops_zeros(self):
        vec = SparseVec.from_dense([0.0, 2.0, 0.0, -1.0])
        self.assertEqual(vec.entries, [(1, 2.0), (3, -1.0)])
        self.assertEqual(vec.dim, 4)

    def test_equality(self):
        a = SparseVec.from_pairs([(0, 1.0), (2, 3.0)], 4)
        b = SparseVec.from_dense([1.0, 0.0, 3.0, 0.0])
        self.assertEqual(a, b)
        self.assertNotEqual(a, SparseVec.from_pairs([(0, 1.0), (2, 3.0)], 5))


class TestKernels(unittest.TestCase):
    """Test cases for dot, cosine and normalisation."""

    def test_dot_merges_indices(self):
        a = SparseVec.from_pairs([(0, 1.0), (2, 2.0), (5, 3.0)], 6)
        b = SparseVec.from_pairs([(2, 4.0), (3, 1.0), (5, -1.0)], 6)
        self.assertAlmostEqual(dot(a, b), 8.0 - 3.0)

    def test_dot_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            dot(SparseVec.empty(3), SparseVec.empty(4))

    def test_cosine_of_zero_vector_is_zero(self):
        a = SparseVec.from_pairs([(0, 1.0)], 3)
        self.assertEqual(cosine_similarity(a, SparseVec.empty(3)), 0.0)

    def test_cosine_scale_invariant(self):
        a = SparseVec.from_pairs([(0, 1.0), (1, 1.0)], 3)
        b = SparseVec.from_pairs([(0, 5.0), (1, 5.0)], 3)
        self.assertAlmostEqual(cosine_similarity(a, b), 1.0)

    def test_cosine_orthogonal(self):
        a = SparseVec.from_pairs([(0, 1.0)], 3)
        b = SparseVec.from_pairs([(2, 1.0)], 3)
        self.assertEqual(cosine_similarity(a, b), 0.0)

    def test_l2_normalize(self):
        vec = l2_normalize(SparseVec.from_pairs([(0, 3.0), (1, 4.0)], 2))
        self.assertAlmostEqual(vec.norm(), 1.0)
        self.assertEqual(vec.entries, [(0, 0.6), (1, 0.8)])

    def test_l2_normalize_zero_is_identity(self):
        zero = SparseVec.empty(4)
        self.assertEqual(l2_normalize(zero), zero)

    def test_mean_rows(self):
        m = SparseMatrix.from_rows(
            [
                SparseVec.from_pairs([(0, 1.0), (1, 1.0)], 3),
                SparseVec.from_pairs([(1, 1.0), (2, 1.0)], 3),
            ],
            3,
        )
        mean = mean_rows(m, [0, 1])
        self.assertEqual(mean.entries, [(0, 0.5), (1, 1.0), (2, 0.5)])

    def test_mean_rows_cancellation_not_stored(self):
        m = SparseMatrix.from_rows(
            [SparseVec.from_pairs([(0, 1.0)], 2), SparseVec.from_pairs([(0, -1.0)], 2)], 2
        )
        self.assertEqual(mean_rows(m, [0, 1]).nnz, 0)

    def test_mean_rows_requires_rows(self):
        m = SparseMatrix.from_rows([SparseVec.empty(2)], 2)
        with self.assertRaises(ValueError):
            mean_rows(m, [])

    def test_normalize_rows_keeps_empty_rows(self):
        m = SparseMatrix.from_rows(
            [SparseVec.from_pairs([(0, 3.0), (2, 4.0)], 3), SparseVec.empty(3)], 3
        )
        normalized = normalize_rows(m)
        np.testing.assert_allclose(row_norms(normalized), [1.0, 0.0])
        self.assertEqual(normalized.row(1).nnz, 0)


class TestSparseMatrix(unittest.TestCase):
    """Test cases for SparseMatrix."""

    def setUp(self):
        """Set up test fixtures."""
        self.rows = [
            SparseVec.from_pairs([(0, 1.0), (3, 2.0)], 4),
            SparseVec.empty(4),
            SparseVec.from_pairs([(1, -1.0)], 4),
        ]
        self.matrix = SparseMatrix.from_rows(self.rows, 4)

    def test_shape_and_rows(self):
        self.assertEqual(self.matrix.shape, (3, 4))
        self.assertEqual(self.matrix.nnz, 3)
        self.assertEqual(self.matrix.rows, self.rows)
        np.testing.assert_array_equal(self.matrix.row_nnz(), [2, 0, 1])

    def test_from_rows_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            SparseMatrix.from_rows([SparseVec.empty(3)], 4)

    def test_take_reorders(self):
        taken = self.matrix.take([2, 0])
        self.assertEqual(taken.rows, [self.rows[2], self.rows[0]])

    def test_take_empty_rows_only(self):
        taken = self.matrix.take([1, 1])
        self.assertEqual(taken.shape, (2, 4))
        self.assertEqual(taken.nnz, 0)

    def test_take_out_of_range(self):
        with self.assertRaises(IndexError):
            self.matrix.take([3])

    def test_to_scipy_matches_dense(self):
        np.testing.assert_array_equal(
            self.matrix.to_scipy().toarray(),
            np.array([[1.0, 0, 0, 2.0], [0, 0, 0, 0], [0, -1.0, 0, 0]]),
        )

    def test_from_scipy_rejects_duplicates(self):
        dup = sp.csr_matrix(
            (np.array([1.0, 2.0]), np.array([1, 1]), np.array([0, 2])), shape=(1, 3)
        )
        with self.assertRaises(SparseFormatError):
            SparseMatrix.from_scipy(dup)

    def test_from_canonical_scipy_sums_duplicates(self):
        dup = sp.csr_matrix(
            (np.array([1.0, 2.0, 5.0]), np.array([2, 2, 0]), np.array([0, 3])), shape=(1, 3)
        )
        matrix = SparseMatrix.from_canonical_scipy(dup)
        self.assertEqual(matrix.row(0).entries, [(0, 5.0), (2, 3.0)])

    def test_rows_identical(self):
        same = SparseMatrix.from_rows([self.rows[0], self.rows[0]], 4)
        self.assertTrue(rows_identical(same))
        self.assertFalse(rows_identical(self.matrix))
        self.assertTrue(rows_identical(self.matrix.take([1, 1])))

    def test_rows_identical_same_pattern_different_values(self):
        a = SparseVec.from_pairs([(0, 1.0)], 2)
        b = SparseVec.from_pairs([(0, 2.0)], 2)
        self.assertFalse(rows_identical(SparseMatrix.from_rows([a, b], 2)))


class TestDataset(unittest.TestCase):
    """Test cases for Dataset validation and densities."""

    def test_densities(self):
        features = SparseMatrix.from_rows(
            [SparseVec.from_pairs([(0, 1.0), (1, 2.0)], 3), SparseVec.from_pairs([(2, 1.0)], 3)],
            3,
        )
        labels = SparseMatrix.from_rows(
            [SparseVec.from_pairs([(0, 1.0)], 2), SparseVec.from_pairs([(0, 1.0), (1, 1.0)], 2)],
            2,
        )
        data = Dataset(features, labels)
        self.assertEqual((data.n, data.d_x, data.d_y), (2, 3, 2))
        self.assertAlmostEqual(data.feature_density, 1.5)
        self.assertAlmostEqual(data.label_density, 1.5)

    def test_labels_must_be_one(self):
        features = SparseMatrix.from_rows([SparseVec.empty(2)], 2)
        labels = SparseMatrix.from_rows([SparseVec.from_pairs([(0, 0.5)], 2)], 2)
        with self.assertRaises(SparseFormatError):
            Dataset(features, labels)

    def test_row_count_mismatch(self):
        features = SparseMatrix.from_rows([SparseVec.empty(2)] * 2, 2)
        labels = SparseMatrix.from_rows([SparseVec.empty(2)], 2)
        with self.assertRaises(DimensionMismatchError):
            Dataset(features, labels)


if __name__ == "__main__":
    unittest.main()
