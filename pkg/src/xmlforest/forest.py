"""
Forest training, prediction and cost instrumentation.

Trees are independent: tree i is fully determined by (dataset, config, i),
so any subset of trees can be trained anywhere (threads, processes or
remote workers) and the assembled forest does not depend on where.
"""

import math
import time
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from .exceptions import DimensionMismatchError
from .projection import ProjectionSpec, hash_project
from .sparse import Dataset, SparseMatrix, SparseVec
from .tree import (
    Leaf,
    TrainConfig,
    TreeNode,
    TreeStats,
    TreeTrainer,
    iter_nodes,
    predict_tree_batch,
)
from .utils import TrainingLogger

FORMAT_VERSION = 1

MEMORY_BOUND_FACTOR = 4.0
TRAINING_TIME_BOUND_FACTOR = 8.0

Ranking = List[Tuple[int, float]]


@dataclass(frozen=True, eq=False)
class TreeEntry:
    """One trained tree together with the projections it was trained under.

    Equality and pickling go through the encoded tree block, so trees of
    any depth compare and cross process boundaries without recursion.
    """

    root: TreeNode
    feature_spec: ProjectionSpec
    label_spec: ProjectionSpec
    tree_index: int

    def to_bytes(self) -> bytes:
        from .storage import encode_tree_block

        return encode_tree_block(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TreeEntry):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __reduce__(self):
        return (_entry_from_bytes, (self.to_bytes(),))


def _entry_from_bytes(data: bytes) -> TreeEntry:
    from .storage import decode_tree_block

    return decode_tree_block(data)


@dataclass(frozen=True)
class ForestModel:
    trees: Tuple[TreeEntry, ...]
    cfg: TrainConfig
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        indices = [entry.tree_index for entry in self.trees]
        if len(set(indices)) != len(indices):
            raise ValueError(f"duplicate tree indices in forest: {indices}")
        if len(self.trees) != self.cfg.n_trees:
            raise ValueError(
                f"forest holds {len(self.trees)} trees, config says {self.cfg.n_trees}"
            )


@dataclass(frozen=True)
class WorkSpanReport:
    """Work (t1), span (tinf) and their ratio for one tree."""

    t1: float
    tinf: float
    parallelism: float
    depth: int
    node_count: int
    leaf_count: int

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class BoundReport:
    """A measured quantity next to its predicted upper bound."""

    name: str
    measured: float
    bound: float
    factor: float
    detail: Optional[Dict[str, float]] = None

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound

    @property
    def ratio(self) -> float:
        """measured / (bound / factor): the constant the measurement implies."""
        base = self.bound / self.factor
        return self.measured / base if base > 0 else 0.0

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data["holds"] = self.holds
        data["ratio"] = self.ratio
        return data


def _train_entry(
    dataset: Dataset,
    cfg: TrainConfig,
    tree_index: int,
    n_jobs: int,
    spawn_depth: int,
    check_invariants: bool,
) -> Tuple[TreeEntry, TreeStats]:
    trainer = TreeTrainer(dataset, cfg, tree_index, n_jobs, spawn_depth, check_invariants)
    root, stats = trainer.train()
    return TreeEntry(root, trainer.feature_spec, trainer.label_spec, tree_index), stats


def train_forest_range(
    dataset: Dataset,
    cfg: TrainConfig,
    tree_indices: Iterable[int],
    threads: int = 1,
    backend: str = "loky",
    spawn_depth: int = 1,
    check_invariants: bool = False,
) -> Tuple[List[TreeEntry], List[TreeStats]]:
    """Train the given trees; results are returned in the order requested.

    Trees run on a pool of min(threads, len(trees)) workers; spare threads
    go to spawning child subtrees inside each tree.
    """
    if not cfg.is_resolved:
        cfg = cfg.resolved_for(dataset.d_x, dataset.d_y)
    indices = [int(i) for i in tree_indices]
    if not indices:
        return [], []
    threads = max(1, threads)
    n_jobs = min(threads, len(indices))
    intra = max(1, threads // len(indices))
    results = Parallel(n_jobs=n_jobs, backend=backend)(
        delayed(_train_entry)(dataset, cfg, i, intra, spawn_depth, check_invariants)
        for i in indices
    )
    entries = [entry for entry, _ in results]
    stats = [s for _, s in results]
    return entries, stats


def train_forest(
    dataset: Dataset,
    cfg: TrainConfig,
    threads: int = 1,
    backend: str = "loky",
    spawn_depth: int = 1,
    check_invariants: bool = False,
    logger: Optional[TrainingLogger] = None,
) -> Tuple[ForestModel, List[TreeStats], List[WorkSpanReport]]:
    """Train all cfg.n_trees trees. The model does not depend on ``threads``."""
    logger = logger or TrainingLogger(verbose=False)
    if not cfg.is_resolved:
        cfg = cfg.resolved_for(dataset.d_x, dataset.d_y)
    logger.log_training_start(dataset.n, dataset.d_x, dataset.d_y, cfg, threads)

    started = time.perf_counter()
    entries, stats = train_forest_range(
        dataset, cfg, range(cfg.n_trees), threads, backend, spawn_depth, check_invariants
    )
    for entry, tree_stats in zip(entries, stats):
        logger.log_tree_done(entry.tree_index, tree_stats)
    logger.log_forest_done(cfg.n_trees, time.perf_counter() - started)

    model = ForestModel(tuple(entries), cfg)
    return model, stats, [work_span_report(s) for s in stats]


def _rank(indices: np.ndarray, values: np.ndarray, top_k: int) -> Ranking:
    order = np.lexsort((indices, -values))[:top_k]
    return [(int(indices[i]), float(values[i])) for i in order]


def rank_scores(scores: SparseVec, top_k: int) -> Ranking:
    """Top-k (label, score) pairs by descending score, ties by ascending label."""
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    return _rank(scores.indices, scores.values, top_k)


def forest_scores(model: ForestModel, features: SparseMatrix):
    """Mean leaf vector over all trees for every row, as scipy CSR."""
    if features.n_cols != model.cfg.n_features:
        raise DimensionMismatchError(
            f"model expects {model.cfg.n_features} features, rows have {features.n_cols}"
        )
    total = None
    for entry in model.trees:
        projected = hash_project(features, entry.feature_spec)
        leaves = predict_tree_batch(entry.root, projected)
        block = SparseMatrix.from_rows(leaves, model.cfg.n_labels).to_scipy()
        total = block if total is None else total + block
    return total / len(model.trees)


def _predict_rows(model: ForestModel, features: SparseMatrix, top_k: int) -> List[Ranking]:
    scores = forest_scores(model, features)
    rankings = []
    for i in range(features.n_rows):
        lo, hi = scores.indptr[i], scores.indptr[i + 1]
        rankings.append(_rank(scores.indices[lo:hi], scores.data[lo:hi], top_k))
    return rankings


def predict_forest_batch(
    model: ForestModel, features: SparseMatrix, top_k: int, threads: int = 1
) -> List[Ranking]:
    """Rank labels for every row; only labels with a non-zero score appear."""
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    n = features.n_rows
    if n == 0:
        return []
    if threads <= 1 or n == 1:
        return _predict_rows(model, features, top_k)
    chunks = [c for c in np.array_split(np.arange(n), min(threads, n)) if len(c)]
    parts = Parallel(n_jobs=len(chunks), backend="threading")(
        delayed(_predict_rows)(model, features.take(c), top_k) for c in chunks
    )
    return [ranking for part in parts for ranking in part]


def predict_forest(model: ForestModel, row: SparseVec, top_k: int) -> Ranking:
    return predict_forest_batch(model, SparseMatrix.from_rows([row], row.dim), top_k)[0]


def work_span_report(stats: TreeStats) -> WorkSpanReport:
    """Total work and heaviest root-to-leaf path of one tree.

    ``depth`` counts levels (nodes on the longest path), so a single leaf
    has depth 1.
    """
    path_work: Dict[Tuple[int, ...], float] = {}
    tinf = 0.0
    for record in stats.records:
        above = path_work.get(record.path[:-1], 0.0) if record.path else 0.0
        path_work[record.path] = above + record.work
        if record.is_leaf:
            tinf = max(tinf, path_work[record.path])
    t1 = stats.total_work
    parallelism = t1 / tinf if tinf > 0 else 1.0
    return WorkSpanReport(
        t1=t1,
        tinf=tinf,
        parallelism=parallelism,
        depth=stats.depth + 1,
        node_count=stats.node_count,
        leaf_count=stats.leaf_count,
    )


def cost_per_instance(dataset: Dataset, cfg: TrainConfig) -> float:
    """C = k * (iters * s_y + s_x)."""
    return cfg.k * (cfg.kmeans_iters * dataset.label_density + dataset.feature_density)


def _log_k(value: float, k: int) -> float:
    return math.log(value) / math.log(k) if value > 0 else 0.0


def memory_bound_report(entry: TreeEntry, dataset: Dataset, cfg: TrainConfig) -> BoundReport:
    """Stored elements of one tree against 4 * (n * s_y + internal * k * d_x')."""
    elements = 0
    internal = 0
    for _, node in iter_nodes(entry.root):
        if isinstance(node, Leaf):
            elements += node.y_hat.nnz
        else:
            internal += 1
            elements += node.classif.centroids.nnz
    base = dataset.labels.nnz + internal * cfg.k * cfg.proj_dx
    return BoundReport(
        name="memory",
        measured=float(elements),
        bound=MEMORY_BOUND_FACTOR * base,
        factor=MEMORY_BOUND_FACTOR,
        detail={"internal_nodes": internal, "label_nnz": dataset.labels.nnz},
    )


def training_time_bound_report(
    stats: TreeStats, dataset: Dataset, cfg: TrainConfig
) -> BoundReport:
    """Measured total work against 8 * log_k(n / n_leaf) * n * C.

    The level count is floored at 1 so that trees too small to split still
    get a finite bound. ``detail`` carries the unbalanced form
    (leaves - 1) / (k - 1) * mean instances per node * C.
    """
    c = cost_per_instance(dataset, cfg)
    levels = max(1.0, _log_k(dataset.n / cfg.n_leaf, cfg.k))
    base = levels * dataset.n * c
    unbalanced = (stats.leaf_count - 1) / (cfg.k - 1) * stats.mean_instances_per_node * c
    return BoundReport(
        name="training_time",
        measured=stats.total_work,
        bound=TRAINING_TIME_BOUND_FACTOR * base,
        factor=TRAINING_TIME_BOUND_FACTOR,
        detail={"cost_per_instance": c, "levels": levels, "unbalanced_form": unbalanced},
    )


def parallelism_bound(stats: TreeStats, dataset: Dataset, cfg: TrainConfig) -> float:
    """(1 / log_k internal) * log_k(n / n_leaf) * n * C, reported next to t1 / tinf."""
    c = cost_per_instance(dataset, cfg)
    levels = max(1.0, _log_k(dataset.n / cfg.n_leaf, cfg.k))
    node_levels = max(1.0, _log_k(stats.internal_count, cfg.k))
    return levels * dataset.n * c / node_levels

