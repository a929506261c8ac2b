"""
Sparse row storage and vector kernels for xmlforest.

SparseVec holds one row as strictly increasing column indices plus
non-zero float64 values. SparseMatrix is the row-major compressed form
(indptr/indices/data) of many such rows and converts to scipy CSR for the
vectorised kernels used by clustering, projection and routing.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatchError, SparseFormatError

INDEX_DTYPE = np.int64
VALUE_DTYPE = np.float64


def _check_row(indices: np.ndarray, values: np.ndarray, dim: int) -> None:
    """Validate one row's entries against the storage invariants."""
    if indices.ndim != 1 or indices.shape != values.shape:
        raise SparseFormatError("indices and values must be 1-d of equal length")
    if len(indices) == 0:
        return
    if indices[0] < 0 or indices[-1] >= dim:
        raise SparseFormatError(f"column index out of range for dim {dim}")
    if np.any(np.diff(indices) <= 0):
        raise SparseFormatError("column indices must be strictly increasing")
    if np.any(values == 0):
        raise SparseFormatError("explicit zero values are not stored")


@dataclass(frozen=True, eq=False)
class SparseVec:
    """A sparse row: (column, value) entries with a logical dimension."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise SparseFormatError(f"dim must be positive, got {self.dim}")
        indices = np.array(self.indices, dtype=INDEX_DTYPE).reshape(-1)
        values = np.array(self.values, dtype=VALUE_DTYPE).reshape(-1)
        _check_row(indices, values, self.dim)
        indices.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    @classmethod
    def empty(cls, dim: int) -> "SparseVec":
        return cls(np.empty(0, INDEX_DTYPE), np.empty(0, VALUE_DTYPE), dim)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[int, float]], dim: int) -> "SparseVec":
        """Build from (column, value) pairs given in increasing column order."""
        pairs = list(pairs)
        indices = [col for col, _ in pairs]
        values = [val for _, val in pairs]
        return cls(np.asarray(indices, INDEX_DTYPE), np.asarray(values), dim)

    @classmethod
    def from_dense(cls, dense: Sequence[float]) -> "SparseVec":
        dense = np.asarray(dense, dtype=VALUE_DTYPE)
        nz = np.flatnonzero(dense)
        return cls(nz, dense[nz], len(dense))

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @property
    def entries(self) -> List[Tuple[int, float]]:
        return [(int(c), float(v)) for c, v in zip(self.indices, self.values)]

    def norm(self) -> float:
        """Euclidean norm."""
        return float(np.sqrt(np.dot(self.values, self.values)))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dim, dtype=VALUE_DTYPE)
        dense[self.indices] = self.values
        return dense

    def __len__(self) -> int:
        return self.nnz

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseVec):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return f"SparseVec(dim={self.dim}, entries={self.entries})"


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse rows. Treat as immutable once built."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n_cols: int

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=INDEX_DTYPE).reshape(-1)
        indices = np.asarray(self.indices, dtype=INDEX_DTYPE).reshape(-1)
        data = np.asarray(self.data, dtype=VALUE_DTYPE).reshape(-1)
        self._validate(indptr, indices, data, self.n_cols)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)

    @staticmethod
    def _validate(indptr, indices, data, n_cols) -> None:
        if n_cols < 1:
            raise SparseFormatError(f"n_cols must be positive, got {n_cols}")
        if len(indptr) == 0 or indptr[0] != 0 or indptr[-1] != len(indices):
            raise SparseFormatError("indptr does not describe the index array")
        if indices.shape != data.shape:
            raise SparseFormatError("indices and data differ in length")
        if np.any(np.diff(indptr) < 0):
            raise SparseFormatError("indptr must be non-decreasing")
        nnz = len(indices)
        if nnz == 0:
            return
        if indices.min() < 0 or indices.max() >= n_cols:
            raise SparseFormatError(f"column index out of range for {n_cols} columns")
        if np.any(data == 0):
            raise SparseFormatError("explicit zero values are not stored")
        # Consecutive positions inside one row must strictly increase.
        same_row = np.ones(max(nnz - 1, 0), dtype=bool)
        starts = indptr[1:-1]
        starts = starts[(starts > 0) & (starts < nnz)]
        same_row[starts - 1] = False
        if np.any(np.diff(indices)[same_row] <= 0):
            raise SparseFormatError("column indices must be strictly increasing")

    @classmethod
    def _trusted(cls, indptr, indices, data, n_cols: int) -> "SparseMatrix":
        """Wrap arrays already known to be canonical, skipping validation."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "indptr", np.asarray(indptr, dtype=INDEX_DTYPE))
        object.__setattr__(obj, "indices", np.asarray(indices, dtype=INDEX_DTYPE))
        object.__setattr__(obj, "data", np.asarray(data, dtype=VALUE_DTYPE))
        object.__setattr__(obj, "n_cols", int(n_cols))
        return obj

    @classmethod
    def from_rows(cls, rows: Sequence[SparseVec], n_cols: int) -> "SparseMatrix":
        for i, row in enumerate(rows):
            if row.dim != n_cols:
                raise DimensionMismatchError(
                    f"row {i} has dim {row.dim}, matrix has {n_cols} columns"
                )
        indptr = np.zeros(len(rows) + 1, dtype=INDEX_DTYPE)
        indptr[1:] = np.cumsum([row.nnz for row in rows])
        if rows:
            indices = np.concatenate([row.indices for row in rows])
            data = np.concatenate([row.values for row in rows])
        else:
            indices = np.empty(0, INDEX_DTYPE)
            data = np.empty(0, VALUE_DTYPE)
        return cls._trusted(indptr, indices, data, n_cols)

    @classmethod
    def from_scipy(cls, matrix) -> "SparseMatrix":
        """Wrap a scipy sparse matrix. Duplicates or unsorted rows are rejected."""
        csr = sp.csr_matrix(matrix)
        return cls(csr.indptr, csr.indices, csr.data, csr.shape[1])

    @classmethod
    def from_canonical_scipy(cls, matrix) -> "SparseMatrix":
        """Canonicalise (sum duplicates, sort, drop zeros) and wrap."""
        csr = sp.csr_matrix(matrix, copy=True)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        return cls._trusted(csr.indptr, csr.indices, csr.data, csr.shape[1])

    @property
    def n_rows(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row(self, i: int) -> SparseVec:
        if not 0 <= i < self.n_rows:
            raise IndexError(f"row {i} out of range for {self.n_rows} rows")
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return SparseVec(self.indices[lo:hi], self.data[lo:hi], self.n_cols)

    @property
    def rows(self) -> List[SparseVec]:
        return [self.row(i) for i in range(self.n_rows)]

    @cached_property
    def _csr(self):
        return sp.csr_matrix(
            (self.data, self.indices, self.indptr), shape=(self.n_rows, self.n_cols)
        )

    def to_scipy(self):
        """The scipy CSR view. Callers must not modify it in place."""
        return self._csr

    def take(self, row_ids: Sequence[int]) -> "SparseMatrix":
        """Select rows (in the given order) into a new matrix."""
        row_ids = np.asarray(row_ids, dtype=INDEX_DTYPE)
        if len(row_ids) and (row_ids.min() < 0 or row_ids.max() >= self.n_rows):
            raise IndexError("row selection out of range")
        lengths = self.indptr[row_ids + 1] - self.indptr[row_ids]
        indptr = np.zeros(len(row_ids) + 1, dtype=INDEX_DTYPE)
        np.cumsum(lengths, out=indptr[1:])
        if indptr[-1] == 0:
            empty = np.empty(0, INDEX_DTYPE)
            return SparseMatrix._trusted(indptr, empty, empty.astype(VALUE_DTYPE), self.n_cols)
        starts = np.repeat(self.indptr[row_ids] - indptr[:-1], lengths)
        gather = starts + np.arange(indptr[-1], dtype=INDEX_DTYPE)
        return SparseMatrix._trusted(
            indptr, self.indices[gather], self.data[gather], self.n_cols
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.n_cols == other.n_cols
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self) -> str:
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


@dataclass(frozen=True)
class Dataset:
    """Paired feature and binary label rows."""

    features: SparseMatrix
    labels: SparseMatrix

    def __post_init__(self):
        if self.features.n_rows != self.labels.n_rows:
            raise DimensionMismatchError(
                f"{self.features.n_rows} feature rows but {self.labels.n_rows} label rows"
            )
        if np.any(self.labels.data != 1.0):
            raise SparseFormatError("label values must be exactly 1.0")

    @property
    def n(self) -> int:
        return self.features.n_rows

    @property
    def d_x(self) -> int:
        return self.features.n_cols

    @property
    def d_y(self) -> int:
        return self.labels.n_cols

    @property
    def feature_density(self) -> float:
        """Average non-zeros per feature row (s_x)."""
        return self.features.nnz / self.n if self.n else 0.0

    @property
    def label_density(self) -> float:
        """Average non-zeros per label row (s_y)."""
        return self.labels.nnz / self.n if self.n else 0.0

    def take(self, row_ids: Sequence[int]) -> "Dataset":
        return Dataset(self.features.take(row_ids), self.labels.take(row_ids))


def dot(a: SparseVec, b: SparseVec) -> float:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dim {a.dim} != dim {b.dim}")
    _, ia, ib = np.intersect1d(
        a.indices, b.indices, assume_unique=True, return_indices=True
    )
    return float(np.dot(a.values[ia], b.values[ib]))


def cosine_similarity(a: SparseVec, b: SparseVec) -> float:
    """Cosine of the angle between a and b; 0.0 when either is all-zero."""
    product = dot(a, b)
    norm_a, norm_b = a.norm(), b.norm()
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return float(min(1.0, max(-1.0, product / (norm_a * norm_b))))


def mean_rows(m: SparseMatrix, row_indices: Sequence[int]) -> SparseVec:
    """Component-wise mean of the selected rows."""
    row_indices = np.asarray(row_indices, dtype=INDEX_DTYPE).reshape(-1)
    if len(row_indices) == 0:
        raise ValueError("mean_rows needs at least one row")
    selected = m.take(row_indices)
    # Dense scratch of length n_cols; O(nnz) to fill.
    total = np.zeros(m.n_cols, dtype=VALUE_DTYPE)
    np.add.at(total, selected.indices, selected.data)
    return SparseVec.from_dense(total / len(row_indices))


def l2_normalize(a: SparseVec) -> SparseVec:
    norm = a.norm()
    if norm == 0.0:
        return a
    return SparseVec(a.indices, a.values / norm, a.dim)


def row_norms(m: SparseMatrix) -> np.ndarray:
    squares = np.zeros(m.n_rows, dtype=VALUE_DTYPE)
    row_ids = np.repeat(np.arange(m.n_rows), m.row_nnz())
    np.add.at(squares, row_ids, m.data * m.data)
    return np.sqrt(squares)


def normalize_rows(m: SparseMatrix) -> SparseMatrix:
    """Row-wise l2_normalize; all-zero rows stay empty."""
    norms = row_norms(m)
    safe = np.where(norms > 0, norms, 1.0)
    data = m.data / np.repeat(safe, m.row_nnz())
    return SparseMatrix._trusted(m.indptr, m.indices, data, m.n_cols)


def rows_identical(m: SparseMatrix) -> bool:
    """True when every row has exactly the same entry list as row 0."""
    if m.n_rows <= 1:
        return True
    lengths = m.row_nnz()
    if np.any(lengths != lengths[0]):
        return False
    width = int(lengths[0])
    if width == 0:
        return True
    indices = m.indices.reshape(m.n_rows, width)
    data = m.data.reshape(m.n_rows, width)
    return bool(np.all(indices == indices[0]) and np.all(data == data[0]))
