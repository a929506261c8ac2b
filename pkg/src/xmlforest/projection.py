"""
Hashing-trick random projection.

Each input column ``key`` lands in output column ``hash1(key, S) % p`` with
sign ``2 * (hash2(key, SS) % 2) - 1``; colliding keys are summed. The
projection matrix is never materialised.

The default hash is the 64-bit avalanche finaliser (MurmurHash3 fmix64)
applied to ``key XOR seed``:

    h = key ^ seed
    h ^= h >> 33; h *= 0xff51afd7ed558ccd
    h ^= h >> 33; h *= 0xc4ceb9fe1a85ec53
    h ^= h >> 33

Test vectors (seed 0): fmix64(1) = 12994781566227106604,
fmix64(2) = 4233148493373801447, fmix64(42) = 9297814886316923340.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .sparse import SparseMatrix, SparseVec

MAX_SEED = (1 << 64) - 1
DEFAULT_PROJECTION_CAP = 10000

_M1 = np.uint64(0xFF51AFD7ED558CCD)
_M2 = np.uint64(0xC4CEB9FE1A85EC53)
_SHIFT = np.uint64(33)

# (keys as uint64 array, seed) -> uint64 array of the same shape
HashFn = Callable[[np.ndarray, int], np.ndarray]


def fmix64_hash(keys: np.ndarray, seed: int) -> np.ndarray:
    """Hash non-negative integer keys with a 64-bit seed."""
    h = np.array(keys, dtype=np.uint64, ndmin=1) ^ np.uint64(seed)
    with np.errstate(over="ignore"):
        h ^= h >> _SHIFT
        h *= _M1
        h ^= h >> _SHIFT
        h *= _M2
        h ^= h >> _SHIFT
    return h


@dataclass(frozen=True)
class ProjectionSpec:
    """Output dimension plus the index and sign seeds of one projection."""

    out_dim: int
    seed_index: int
    seed_sign: int

    def __post_init__(self):
        if self.out_dim < 1:
            raise ValueError(f"out_dim must be >= 1, got {self.out_dim}")
        for seed in (self.seed_index, self.seed_sign):
            if not 0 <= seed <= MAX_SEED:
                raise ValueError(f"seed {seed} is not a 64-bit unsigned value")


def hash_project(
    rows: SparseMatrix,
    spec: ProjectionSpec,
    index_hash: Optional[HashFn] = None,
    sign_hash: Optional[HashFn] = None,
) -> SparseMatrix:
    """Project every row of ``rows`` into ``spec.out_dim`` columns."""
    index_hash = index_hash or fmix64_hash
    sign_hash = sign_hash or fmix64_hash
    p = np.uint64(spec.out_dim)

    keys = rows.indices.astype(np.uint64)
    cols = (index_hash(keys, spec.seed_index) % p).astype(np.int64)
    signs = (sign_hash(keys, spec.seed_sign) % np.uint64(2)).astype(np.float64)
    values = rows.data * (2.0 * signs - 1.0)

    row_ids = np.repeat(np.arange(rows.n_rows), rows.row_nnz())
    projected = sp.coo_matrix(
        (values, (row_ids, cols)), shape=(rows.n_rows, spec.out_dim)
    )
    return SparseMatrix.from_canonical_scipy(projected.tocsr())


def project_row(
    row: SparseVec,
    spec: ProjectionSpec,
    index_hash: Optional[HashFn] = None,
    sign_hash: Optional[HashFn] = None,
) -> SparseVec:
    single = SparseMatrix.from_rows([row], row.dim)
    return hash_project(single, spec, index_hash, sign_hash).row(0)


def derive_tree_seeds(
    master_seed: int, tree_index: int, feature_dim: int, label_dim: int
) -> Tuple[ProjectionSpec, ProjectionSpec]:
    """Feature and label projection specs of one tree.

    The four seeds come from a SeedSequence keyed by (master_seed,
    tree_index), so each tree gets its own projections and any tree can be
    rebuilt alone.
    """
    if tree_index < 0:
        raise ValueError(f"tree_index must be >= 0, got {tree_index}")
    sequence = np.random.SeedSequence(entropy=master_seed, spawn_key=(tree_index,))
    s_x, ss_x, s_y, ss_y = (int(s) for s in sequence.generate_state(4, np.uint64))
    return (
        ProjectionSpec(feature_dim, s_x, ss_x),
        ProjectionSpec(label_dim, s_y, ss_y),
    )


def default_projection_dims(
    d_x: int,
    d_y: int,
    cap: int = DEFAULT_PROJECTION_CAP,
    dx_source: str = "features",
) -> Tuple[int, int]:
    """Projection dims min(d_x, cap) and min(d_y, cap).

    ``dx_source="labels"`` sizes the feature projection by the label
    dimension instead, for runs that follow that reading of the protocol.
    """
    if dx_source not in ("features", "labels"):
        raise ValueError(f"dx_source must be 'features' or 'labels', got {dx_source!r}")
    base = d_x if dx_source == "features" else d_y
    return min(base, cap), min(d_y, cap)
