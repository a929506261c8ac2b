"""Dataset builders shared by the test modules."""

from typing import Dict, Iterable, List

import numpy as np

from xmlforest.sparse import Dataset, SparseMatrix, SparseVec
from xmlforest.tree import TrainConfig

GROUP_A_LABELS = [0, 1, 2, 3, 4]
GROUP_B_LABELS = [10, 11, 12, 13, 14]


def make_dataset(
    feature_rows: List[Dict[int, float]],
    label_rows: List[Iterable[int]],
    d_x: int,
    d_y: int,
) -> Dataset:
    features = SparseMatrix.from_rows(
        [SparseVec.from_pairs(sorted(row.items()), d_x) for row in feature_rows], d_x
    )
    labels = SparseMatrix.from_rows(
        [SparseVec.from_pairs([(c, 1.0) for c in sorted(row)], d_y) for row in label_rows],
        d_y,
    )
    return Dataset(features, labels)


def two_group_dataset(per_group: int = 20) -> Dataset:
    """Group A: features and labels {0..4}; group B: {10..14}. d_x = d_y = 20."""
    features = [{c: 1.0 for c in GROUP_A_LABELS}] * per_group
    features += [{c: 1.0 for c in GROUP_B_LABELS}] * per_group
    labels = [GROUP_A_LABELS] * per_group + [GROUP_B_LABELS] * per_group
    return make_dataset(features, labels, 20, 20)


def two_group_config(**overrides) -> TrainConfig:
    params = dict(
        k=2, n_leaf=10, n_s=100, proj_dx=64, proj_dy=64, kmeans_iters=20,
        master_seed=7, n_trees=3,
    )
    params.update(overrides)
    return TrainConfig(**params)


def random_dataset(n: int, d_x: int, d_y: int, seed: int = 0) -> Dataset:
    """Random sparse rows: 3-6 features each, 1-3 labels each."""
    rng = np.random.default_rng(seed)
    features, labels = [], []
    for _ in range(n):
        cols = rng.choice(d_x, size=int(rng.integers(3, 7)), replace=False)
        features.append({int(c): float(rng.uniform(0.1, 1.0)) for c in cols})
        labels.append(
            [int(c) for c in rng.choice(d_y, size=int(rng.integers(1, 4)), replace=False)]
        )
    return make_dataset(features, labels, d_x, d_y)
