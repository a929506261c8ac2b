"""Tests for the hashing-trick projection."""

import unittest

import numpy as np

from xmlforest.projection import (
    ProjectionSpec,
    default_projection_dims,
    derive_tree_seeds,
    fmix64_hash,
    hash_project,
    project_row,
)
from xmlforest.sparse import SparseMatrix, SparseVec

from .helpers import random_dataset


def identity_hash(keys, seed):
    return keys


def positive_sign(keys, seed):
    return np.ones_like(keys)


def negative_sign(keys, seed):
    return np.zeros_like(keys)


class TestFmix64(unittest.TestCase):
    """Known outputs of the default hash."""

    def test_vectors_seed_zero(self):
        keys = np.array([0, 1, 2, 7, 42], dtype=np.uint64)
        self.assertEqual(
            [int(h) for h in fmix64_hash(keys, 0)],
            [
                0,
                12994781566227106604,
                4233148493373801447,
                8360697188923789789,
                9297814886316923340,
            ],
        )

    def test_seed_is_xored_into_key(self):
        self.assertEqual(int(fmix64_hash(np.array([5]), 12345)[0]), 4286238379902239583)
        self.assertEqual(
            int(fmix64_hash(np.array([5 ^ 12345]), 0)[0]), 4286238379902239583
        )

    def test_scalar_key(self):
        self.assertEqual(fmix64_hash(1, 0).shape, (1,))


class TestHashProject(unittest.TestCase):
    """Test cases for hash_project."""

    def test_stub_hashes_sum_collisions(self):
        rows = SparseMatrix.from_rows([SparseVec.from_pairs([(0, 1.0), (3, 2.0), (4, 5.0)], 6)], 6)
        spec = ProjectionSpec(3, 0, 0)
        projected = hash_project(rows, spec, identity_hash, positive_sign)
        # 0 -> 0, 3 -> 0, 4 -> 1
        self.assertEqual(projected.row(0).entries, [(0, 3.0), (1, 5.0)])
        self.assertEqual(projected.n_cols, 3)

    def test_stub_hashes_alternate_signs(self):
        row = SparseVec.from_pairs([(0, 1.0), (1, 2.0), (2, 3.0), (3, 4.0)], 4)
        projected = project_row(row, ProjectionSpec(2, 0, 0), identity_hash, identity_hash)
        # columns 0, 1, 0, 1 with signs -, +, -, +
        self.assertEqual(projected.entries, [(0, -4.0), (1, 6.0)])

    def test_stub_negative_signs(self):
        row = SparseVec.from_pairs([(1, 2.0)], 4)
        projected = project_row(row, ProjectionSpec(4, 0, 0), identity_hash, negative_sign)
        self.assertEqual(projected.entries, [(1, -2.0)])

    def test_cancelling_collision_is_not_stored(self):
        row = SparseVec.from_pairs([(0, 1.0), (2, 1.0)], 4)

        def alternating_sign(keys, seed):
            return keys // np.uint64(2)

        projected = project_row(row, ProjectionSpec(2, 0, 0), identity_hash, alternating_sign)
        self.assertEqual(projected.nnz, 0)

    def test_matches_explicit_sign_matrix(self):
        data = random_dataset(n=1000, d_x=64, d_y=5, seed=2)
        keys = np.arange(64, dtype=np.uint64)
        for out_dim, seed_index, seed_sign in [(7, 1234, 98765), (64, 5, 6), (1, 0, 3)]:
            spec = ProjectionSpec(out_dim, seed_index, seed_sign)
            cols = (fmix64_hash(keys, seed_index) % np.uint64(out_dim)).astype(np.int64)
            signs = 2.0 * (fmix64_hash(keys, seed_sign) % np.uint64(2)).astype(float) - 1.0
            matrix = np.zeros((64, out_dim))
            matrix[np.arange(64), cols] = signs

            projected = hash_project(data.features, spec)
            np.testing.assert_allclose(
                projected.to_dense(), data.features.to_dense() @ matrix, rtol=0, atol=1e-12
            )

    def test_linear(self):
        spec = ProjectionSpec(5, 11, 13)
        a = SparseVec.from_pairs([(0, 1.0), (4, 2.0), (9, -1.0)], 10)
        b = SparseVec.from_pairs([(4, 3.0), (7, 0.5)], 10)
        total = SparseVec.from_dense(a.to_dense() + 2.0 * b.to_dense())
        np.testing.assert_allclose(
            project_row(total, spec).to_dense(),
            project_row(a, spec).to_dense() + 2.0 * project_row(b, spec).to_dense(),
        )

    def test_nnz_never_grows(self):
        data = random_dataset(n=20, d_x=50, d_y=5, seed=4)
        projected = hash_project(data.features, ProjectionSpec(8, 1, 2))
        self.assertTrue(np.all(projected.row_nnz() <= data.features.row_nnz()))
        self.assertEqual(projected.n_rows, 20)

    def test_empty_row_stays_empty(self):
        row = SparseVec.empty(5)
        self.assertEqual(project_row(row, ProjectionSpec(3, 1, 2)).nnz, 0)

    def test_deterministic(self):
        data = random_dataset(n=10, d_x=30, d_y=5, seed=2)
        spec = ProjectionSpec(16, 3, 4)
        self.assertEqual(hash_project(data.features, spec), hash_project(data.features, spec))


class TestProjectionSpec(unittest.TestCase):
    """Test cases for ProjectionSpec validation."""

    def test_out_dim_positive(self):
        with self.assertRaises(ValueError):
            ProjectionSpec(0, 1, 2)

    def test_seed_range(self):
        ProjectionSpec(1, 2**64 - 1, 0)
        with self.assertRaises(ValueError):
            ProjectionSpec(1, 2**64, 0)
        with self.assertRaises(ValueError):
            ProjectionSpec(1, 0, -1)


class TestSeeds(unittest.TestCase):
    """Test cases for per-tree seed derivation."""

    def test_reproducible(self):
        self.assertEqual(derive_tree_seeds(5, 3, 100, 50), derive_tree_seeds(5, 3, 100, 50))

    def test_trees_differ(self):
        first = derive_tree_seeds(5, 0, 100, 50)
        second = derive_tree_seeds(5, 1, 100, 50)
        self.assertNotEqual(first[0].seed_index, second[0].seed_index)
        self.assertNotEqual(first[1].seed_index, second[1].seed_index)

    def test_master_seed_matters(self):
        self.assertNotEqual(derive_tree_seeds(1, 0, 10, 10), derive_tree_seeds(2, 0, 10, 10))

    def test_dims_passed_through(self):
        features, labels = derive_tree_seeds(0, 0, 100, 50)
        self.assertEqual((features.out_dim, labels.out_dim), (100, 50))

    def test_fifty_trees_get_distinct_seeds(self):
        tuples = []
        for tree_index in range(50):
            features, labels = derive_tree_seeds(17, tree_index, 100, 50)
            seeds = (features.seed_index, features.seed_sign, labels.seed_index, labels.seed_sign)
            self.assertEqual(len(set(seeds)), 4)
            tuples.append(seeds)
        self.assertEqual(len(set(tuples)), 50)

    def test_negative_tree_index(self):
        with self.assertRaises(ValueError):
            derive_tree_seeds(0, -1, 10, 10)


class TestDefaultDims(unittest.TestCase):
    """Test cases for default_projection_dims."""

    def test_capped(self):
        self.assertEqual(default_projection_dims(120, 101938, cap=10000), (120, 10000))

    def test_label_source(self):
        self.assertEqual(default_projection_dims(120, 101, dx_source="labels"), (101, 101))

    def test_unknown_source(self):
        with self.assertRaises(ValueError):
            default_projection_dims(10, 10, dx_source="both")


if __name__ == "__main__":
    unittest.main()
