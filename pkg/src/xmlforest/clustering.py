"""
Spherical k-means with k-means++ seeding.

Rows are L2-normalised once up front, so cosine similarity is a plain
sparse dot product against the (normalised) centroid rows.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError
from .sparse import SparseMatrix, SparseVec, normalize_rows, row_norms

# Rows this close to their centroid are not worth moving into an empty cluster.
_REPAIR_EPS = 1e-12


@dataclass(frozen=True)
class KMeansConfig:
    """Branching factor, iteration cap and seed for one clustering run."""

    k: int = 10
    max_iters: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class OpCounter:
    """Running total of scalar multiply-adds and dense-result entries touched."""

    ops: int = 0

    def add(self, n: int) -> None:
        self.ops += int(n)


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Result of spherical_kmeans; ``ops`` is the work the run performed."""

    labels: np.ndarray
    centroid_matrix: SparseMatrix
    iterations: int
    objective_history: List[float] = field(default_factory=list)
    converged: bool = False
    ops: int = 0

    @property
    def centroids(self) -> List[SparseVec]:
        return self.centroid_matrix.rows

    @property
    def k(self) -> int:
        return self.centroid_matrix.n_rows

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def row_product_ops(rows: sp.csr_matrix, other: sp.csr_matrix) -> np.ndarray:
    """Multiply-adds each row of ``rows @ other.T`` takes.

    A row costs one multiply-add per pair of its nonzeros with a nonzero of
    ``other`` in the same column.
    """
    n_rows, n_cols = rows.shape
    col_nnz = np.bincount(other.indices, minlength=n_cols)
    row_ids = np.repeat(np.arange(n_rows), np.diff(rows.indptr))
    per_row = np.bincount(row_ids, weights=col_nnz[rows.indices], minlength=n_rows)
    return per_row.astype(np.int64)


def product_ops(rows: sp.csr_matrix, other: sp.csr_matrix) -> int:
    return int(row_product_ops(rows, other).sum())


def _similarities(
    rows: sp.csr_matrix,
    centroids: sp.csr_matrix,
    counter: Optional[OpCounter] = None,
) -> np.ndarray:
    """Dense (n_rows, k) matrix of dot products."""
    if counter is not None:
        counter.add(product_ops(rows, centroids) + rows.shape[0] * centroids.shape[0])
    return np.asarray((rows @ centroids.T).toarray())


def centroids_from_labels(
    rows: SparseMatrix,
    labels: np.ndarray,
    k: int,
    counter: Optional[OpCounter] = None,
) -> SparseMatrix:
    """L2-normalised sum of the rows in each cluster; empty clusters get empty rows."""
    n = rows.n_rows
    membership = sp.csr_matrix(
        (np.ones(n), (np.asarray(labels, dtype=np.int64), np.arange(n))), shape=(k, n)
    )
    sums = SparseMatrix.from_canonical_scipy(membership @ rows.to_scipy())
    if counter is not None:
        # one add per input nonzero, one scale per summed entry
        counter.add(rows.nnz + sums.nnz)
    return normalize_rows(sums)


def assign_rows(
    rows: SparseMatrix,
    centroids: SparseMatrix,
    counter: Optional[OpCounter] = None,
) -> Optional[np.ndarray]:
    """Index of the most cosine-similar centroid for every row.

    Ties go to the lowest index. Empty centroids are never chosen while a
    non-empty one exists; if all are empty the result is None.
    """
    if rows.n_cols != centroids.n_cols:
        raise ValueError(
            f"rows have {rows.n_cols} columns, centroids have {centroids.n_cols}"
        )
    empty = centroids.row_nnz() == 0
    if empty.all():
        return None
    sims = _similarities(rows.to_scipy(), normalize_rows(centroids).to_scipy(), counter)
    sims[:, empty] = -np.inf
    return np.argmax(sims, axis=1)


def assign_nearest(row: SparseVec, centroids: Sequence[SparseVec]) -> int:
    if not centroids:
        raise ValueError("assign_nearest needs at least one centroid")
    matrix = SparseMatrix.from_rows(list(centroids), centroids[0].dim)
    labels = assign_rows(SparseMatrix.from_rows([row], row.dim), matrix)
    return 0 if labels is None else int(labels[0])


def kmeanspp_indices(
    rows: SparseMatrix,
    k: int,
    rng: np.random.Generator,
    counter: Optional[OpCounter] = None,
) -> List[int]:
    """Row indices chosen as k-means++ seeds.

    ``rows`` must already be L2-normalised. D(y) = 1 - max cosine to the
    chosen centers; the next center is drawn with probability D(y)^2 / sum.
    When every weight is zero the pick is uniform.
    """
    n = rows.n_rows
    if n < 1:
        raise ValueError("kmeans++ needs at least one row")
    matrix = rows.to_scipy()
    chosen = [int(rng.integers(n))]
    best = _similarities(matrix, matrix[chosen[0]], counter).ravel()
    while len(chosen) < k:
        distance = np.clip(1.0 - best, 0.0, None)
        distance[distance < _REPAIR_EPS] = 0.0
        weights = distance * distance
        total = weights.sum()
        if total > 0:
            pick = int(rng.choice(n, p=weights / total))
        else:
            pick = int(rng.integers(n))
        chosen.append(pick)
        best = np.maximum(best, _similarities(matrix, matrix[pick], counter).ravel())
    return chosen


def kmeanspp_init(
    rows: SparseMatrix, k: int, rng: np.random.Generator
) -> List[SparseVec]:
    normalized = normalize_rows(rows)
    return [normalized.row(i) for i in kmeanspp_indices(normalized, k, rng)]


def _own_similarity(
    rows: sp.csr_matrix,
    centroids: sp.csr_matrix,
    labels: np.ndarray,
    counter: Optional[OpCounter] = None,
) -> np.ndarray:
    products = rows.multiply(centroids[labels])
    if counter is not None:
        counter.add(products.nnz + rows.shape[0])
    return np.asarray(products.sum(axis=1)).ravel()


def _repair_empty(
    rows: sp.csr_matrix,
    nonzero: np.ndarray,
    centroids: sp.csr_matrix,
    labels: np.ndarray,
    k: int,
    counter: Optional[OpCounter] = None,
) -> bool:
    """Move the worst-fitting rows into empty clusters, in place.

    Donor clusters keep at least one member. Returns True if a row moved.
    """
    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if len(empty) == 0:
        return False
    own = _own_similarity(rows, centroids, labels, counter)
    taken = np.zeros(len(labels), dtype=bool)
    moved = False
    for j in empty:
        candidates = (counts[labels] >= 2) & nonzero & ~taken & (own < 1.0 - _REPAIR_EPS)
        idx = np.flatnonzero(candidates)
        if len(idx) == 0:
            break
        pick = idx[np.argmin(own[idx])]
        counts[labels[pick]] -= 1
        labels[pick] = j
        counts[j] = 1
        taken[pick] = True
        moved = True
    return moved


def _objective(
    rows: sp.csr_matrix,
    centroids: sp.csr_matrix,
    labels: np.ndarray,
    counter: Optional[OpCounter] = None,
) -> float:
    """Mean cosine of each row to its own centroid."""
    return float(np.mean(_own_similarity(rows, centroids, labels, counter)))


def spherical_kmeans(
    rows: SparseMatrix,
    cfg: KMeansConfig,
    rng: Optional[np.random.Generator] = None,
) -> ClusterAssignment:
    """Cluster ``rows`` into cfg.k groups by cosine similarity.

    Each round recomputes centroids from the current labels, records the
    objective, then reassigns. Stops when an assignment round changes
    nothing or after cfg.max_iters rounds.
    """
    if rows.n_rows < 1:
        raise ValueError("spherical_kmeans needs at least one row")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    k = cfg.k
    normalized = normalize_rows(rows)
    matrix = normalized.to_scipy()
    nonzero = row_norms(normalized) > 0
    counter = OpCounter()

    seeds = normalized.take(kmeanspp_indices(normalized, k, rng, counter))
    centroids = seeds
    labels = assign_rows(normalized, centroids, counter)
    if labels is None:
        # All seeds are empty rows; start from one cluster and let repair spread it.
        labels = np.zeros(rows.n_rows, dtype=np.int64)
    _repair_empty(matrix, nonzero, centroids.to_scipy(), labels, k, counter)

    history: List[float] = []
    converged = False
    iterations = 0
    while iterations < cfg.max_iters:
        centroids = centroids_from_labels(normalized, labels, k, counter)
        iterations += 1
        centroid_csr = centroids.to_scipy()
        history.append(_objective(matrix, centroid_csr, labels, counter))

        assigned = assign_rows(normalized, centroids, counter)
        if assigned is None:
            converged = True
            break
        moved = _repair_empty(matrix, nonzero, centroid_csr, assigned, k, counter)
        if not moved and np.array_equal(assigned, labels):
            converged = True
            break
        labels = assigned

    return ClusterAssignment(
        labels=np.asarray(labels, dtype=np.int64),
        centroid_matrix=centroids,
        iterations=iterations,
        objective_history=history,
        converged=converged,
        ops=counter.ops,
    )
