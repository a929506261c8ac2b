"""
Training and prediction for a single k-ary instance tree.

A node either stops and becomes a leaf holding the mean label row of its
instances, or trains a centroid classifier on a sample of its instances
and routes every instance to one of k children. Feature and label rows are
projected once per tree; every node of the tree uses the same projections.
"""

from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from .clustering import (
    ClusterAssignment,
    KMeansConfig,
    OpCounter,
    assign_rows,
    centroids_from_labels,
    row_product_ops,
    spherical_kmeans,
)
from .exceptions import ConfigError, DimensionMismatchError, InvariantViolationError
from .projection import (
    DEFAULT_PROJECTION_CAP,
    MAX_SEED,
    ProjectionSpec,
    default_projection_dims,
    derive_tree_seeds,
    hash_project,
)
from .sparse import Dataset, SparseMatrix, SparseVec, mean_rows, rows_identical

# Allowed ratio between the per-node cost estimate and the counted operations.
COST_BOUND_FACTOR = 8.0

LEAF_REASONS = ("size", "same_features", "same_labels", "no_progress", "empty_child")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of forest training.

    ``proj_dx``/``proj_dy`` of 0 mean "derive from the data"; a resolved
    config (see ``resolved_for``) also records the dataset dimensions it
    was trained on. ``n_trees`` is the forest size.
    """

    k: int = 10
    n_leaf: int = 10
    n_s: int = 20000
    proj_dx: int = 0
    proj_dy: int = 0
    kmeans_iters: int = 20
    master_seed: int = 0
    n_trees: int = 50
    n_features: int = 0
    n_labels: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.n_leaf < 1:
            raise ConfigError(f"n_leaf must be >= 1, got {self.n_leaf}")
        if self.n_s < self.k:
            raise ConfigError(f"n_s must be >= k ({self.k}), got {self.n_s}")
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.kmeans_iters < 1:
            raise ConfigError(f"kmeans_iters must be >= 1, got {self.kmeans_iters}")
        if not 0 <= self.master_seed <= MAX_SEED:
            raise ConfigError(f"seed {self.master_seed} is not a 64-bit unsigned value")
        for name in ("proj_dx", "proj_dy", "n_features", "n_labels"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def kmeans(self) -> KMeansConfig:
        return KMeansConfig(k=self.k, max_iters=self.kmeans_iters, seed=self.master_seed)

    @property
    def is_resolved(self) -> bool:
        return min(self.proj_dx, self.proj_dy, self.n_features, self.n_labels) > 0

    def resolved_for(
        self,
        d_x: int,
        d_y: int,
        cap: int = DEFAULT_PROJECTION_CAP,
        dx_source: str = "features",
    ) -> "TrainConfig":
        """Fill in projection dims and data dims for a dataset of shape (d_x, d_y)."""
        if self.n_features and self.n_features != d_x:
            raise DimensionMismatchError(
                f"config was resolved for {self.n_features} features, data has {d_x}"
            )
        if self.n_labels and self.n_labels != d_y:
            raise DimensionMismatchError(
                f"config was resolved for {self.n_labels} labels, data has {d_y}"
            )
        auto_dx, auto_dy = default_projection_dims(d_x, d_y, cap, dx_source)
        return replace(
            self,
            proj_dx=self.proj_dx or auto_dx,
            proj_dy=self.proj_dy or auto_dy,
            n_features=d_x,
            n_labels=d_y,
        )

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, int]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown training keys: {', '.join(unknown)}")
        return cls(**{key: int(value) for key, value in data.items()})


@dataclass(frozen=True)
class NodeClassifier:
    """k centroid rows in the projected feature space."""

    centroids: SparseMatrix

    @property
    def k(self) -> int:
        return self.centroids.n_rows

    def route(self, projected: SparseMatrix) -> np.ndarray:
        """Child index per row; all zeros if every centroid is empty."""
        assigned = assign_rows(projected, self.centroids)
        if assigned is None:
            return np.zeros(projected.n_rows, dtype=np.int64)
        return assigned


@dataclass(frozen=True)
class Leaf:
    y_hat: SparseVec


@dataclass(frozen=True)
class Internal:
    classif: NodeClassifier
    children: Tuple["TreeNode", ...]


TreeNode = Union[Leaf, Internal]


@dataclass(frozen=True)
class NodeRecord:
    """Instrumentation for one trained node.

    ``estimated_cost`` is the per-node estimate
    k * (iters * nnz(projected labels) + nnz(projected features)) over the
    sample. ``observed_ops`` counts what the node actually did: sparse
    multiply-adds and dense similarity entries in clustering, the centroid
    sums, and routing the sample rows. ``split_ops`` is the routing work
    over all n_v rows, and ``work`` the estimate scaled to all n_v node
    instances (the unit used by work-span reports).
    """

    path: Tuple[int, ...]
    n_v: int
    kind: str
    reason: Optional[str] = None
    work: float = 0.0
    estimated_cost: float = 0.0
    observed_ops: float = 0.0
    split_ops: float = 0.0
    iterations: int = 0
    n_sample: int = 0

    @property
    def depth(self) -> int:
        return len(self.path)

    @property
    def is_leaf(self) -> bool:
        return self.kind == "leaf"


@dataclass
class TreeStats:
    """Per-node records of one tree, in pre-order."""

    k: int
    records: List[NodeRecord] = field(default_factory=list)

    @property
    def node_count(self) -> int:
        return len(self.records)

    @property
    def leaf_count(self) -> int:
        return sum(1 for r in self.records if r.is_leaf)

    @property
    def internal_count(self) -> int:
        return self.node_count - self.leaf_count

    @property
    def depth(self) -> int:
        """Longest root-to-leaf path, in edges."""
        return max((r.depth for r in self.records), default=0)

    @property
    def instance_counts(self) -> List[int]:
        return [r.n_v for r in self.records]

    @property
    def mean_instances_per_node(self) -> float:
        if not self.records:
            return 0.0
        return sum(self.instance_counts) / self.node_count

    @property
    def total_work(self) -> float:
        return float(sum(r.work for r in self.records))

    def leaf_reasons(self) -> Dict[str, int]:
        return dict(Counter(r.reason for r in self.records if r.is_leaf))

    def satisfies_node_count_identity(self) -> bool:
        """internal == (leaves - 1) / (k - 1), true for any strictly k-ary tree."""
        return self.internal_count * (self.k - 1) == self.leaf_count - 1


@dataclass(frozen=True, eq=False)
class NodeSample:
    """What a node classifier was trained on."""

    positions: np.ndarray
    assignment: ClusterAssignment
    feature_nnz: int
    label_nnz: int
    centroid_ops: int = 0

    @property
    def n_sample(self) -> int:
        return len(self.positions)


def stop_reason(features: SparseMatrix, labels: SparseMatrix, cfg: TrainConfig) -> Optional[str]:
    """Why a node with these rows must be a leaf, or None if it can split."""
    if features.n_rows < cfg.n_leaf:
        return "size"
    if rows_identical(features):
        return "same_features"
    if rows_identical(labels):
        return "same_labels"
    return None


def test_stop_condition(features: SparseMatrix, labels: SparseMatrix, cfg: TrainConfig) -> bool:
    return stop_reason(features, labels, cfg) is not None


# Not a test function despite the name.
test_stop_condition.__test__ = False  # type: ignore[attr-defined]


def sample_rows(n_v: int, n_s: int, rng: np.random.Generator) -> np.ndarray:
    """min(n_v, n_s) positions drawn without replacement (partial Fisher-Yates)."""
    if n_v <= n_s:
        return np.arange(n_v)
    perm = np.arange(n_v)
    for i in range(n_s):
        j = int(rng.integers(i, n_v))
        perm[i], perm[j] = perm[j], perm[i]
    return perm[:n_s].copy()


def node_rng(master_seed: int, tree_index: int, path: Sequence[int]) -> np.random.Generator:
    """Generator for the node at ``path``; independent of training order."""
    sequence = np.random.SeedSequence(
        entropy=[master_seed, tree_index], spawn_key=tuple(int(p) for p in path)
    )
    return np.random.default_rng(sequence)


def train_node_classifier(
    features_v: SparseMatrix,
    labels_v: SparseMatrix,
    cfg: TrainConfig,
    rng: np.random.Generator,
    feature_spec: Optional[ProjectionSpec] = None,
    label_spec: Optional[ProjectionSpec] = None,
) -> Tuple[NodeClassifier, NodeSample]:
    """Cluster a sample of projected label rows and build feature centroids.

    Rows are taken as already projected unless ``feature_spec`` and
    ``label_spec`` are given.
    """
    positions = sample_rows(features_v.n_rows, cfg.n_s, rng)
    sample_x = features_v.take(positions)
    sample_y = labels_v.take(positions)
    if feature_spec is not None:
        sample_x = hash_project(sample_x, feature_spec)
    if label_spec is not None:
        sample_y = hash_project(sample_y, label_spec)

    assignment = spherical_kmeans(sample_y, cfg.kmeans, rng)
    counter = OpCounter()
    centroids = centroids_from_labels(sample_x, assignment.labels, cfg.k, counter)
    sample = NodeSample(positions, assignment, sample_x.nnz, sample_y.nnz, counter.ops)
    return NodeClassifier(centroids), sample


def split(classif: NodeClassifier, projected_features: SparseMatrix) -> Optional[List[np.ndarray]]:
    """Route every row to a child; k position arrays, or None if no centroid is usable."""
    assigned = assign_rows(projected_features, classif.centroids)
    if assigned is None:
        return None
    return [np.flatnonzero(assigned == i) for i in range(classif.k)]


def routing_ops(classif: NodeClassifier, projected_features: SparseMatrix) -> np.ndarray:
    """Per-row work of routing: sparse multiply-adds plus one compare per centroid."""
    per_row = row_product_ops(projected_features.to_scipy(), classif.centroids.to_scipy())
    return per_row + classif.k


def _node_costs(
    sample: NodeSample, n_v: int, k: int, sample_routing_ops: int
) -> Dict[str, float]:
    iters = sample.assignment.iterations
    estimated = k * (iters * sample.label_nnz + sample.feature_nnz)
    observed = sample.assignment.ops + sample.centroid_ops + sample_routing_ops
    work = n_v * estimated / sample.n_sample if sample.n_sample else 0.0
    return {"estimated_cost": float(estimated), "observed_ops": float(observed), "work": work}


Built = Tuple[TreeNode, List[NodeRecord]]


@dataclass
class _OpenNode:
    """A split node whose children are still being built."""

    path: Tuple[int, ...]
    ids: np.ndarray
    classif: NodeClassifier
    record: NodeRecord
    child_ids: List[np.ndarray]
    built: Dict[int, Built] = field(default_factory=dict)
    cursor: int = 0

    def next_pending(self) -> Optional[int]:
        while self.cursor < len(self.child_ids):
            i = self.cursor
            self.cursor += 1
            if len(self.child_ids[i]) and i not in self.built:
                return i
        return None


class TreeTrainer:
    """Builds one tree of the forest from a dataset and a tree index.

    Nodes are built depth-first from an explicit stack, so tree depth is
    not limited by the interpreter's recursion limit.
    """

    def __init__(
        self,
        dataset: Dataset,
        cfg: TrainConfig,
        tree_index: int,
        n_jobs: int = 1,
        spawn_depth: int = 1,
        check_invariants: bool = False,
    ):
        self.dataset = dataset
        self.cfg = cfg if cfg.is_resolved else cfg.resolved_for(dataset.d_x, dataset.d_y)
        if (self.cfg.n_features, self.cfg.n_labels) != (dataset.d_x, dataset.d_y):
            raise DimensionMismatchError(
                f"config expects {self.cfg.n_features}x{self.cfg.n_labels} dims, "
                f"data has {dataset.d_x}x{dataset.d_y}"
            )
        self.tree_index = tree_index
        self.n_jobs = max(1, n_jobs)
        self.spawn_depth = spawn_depth
        self.check_invariants = check_invariants
        self.feature_spec, self.label_spec = derive_tree_seeds(
            self.cfg.master_seed, tree_index, self.cfg.proj_dx, self.cfg.proj_dy
        )
        self.features = hash_project(dataset.features, self.feature_spec)
        self.labels = hash_project(dataset.labels, self.label_spec)

    def train(self, instance_ids: Optional[Sequence[int]] = None) -> Tuple[TreeNode, TreeStats]:
        if instance_ids is None:
            ids = np.arange(self.dataset.n)
        else:
            ids = np.asarray(instance_ids, dtype=np.int64)
        if len(ids) == 0:
            raise ValueError("train needs at least one instance")
        root, records = self._build(ids, ())
        stats = TreeStats(k=self.cfg.k, records=records)
        if self.check_invariants and not stats.satisfies_node_count_identity():
            raise InvariantViolationError(
                f"tree {self.tree_index}: {stats.internal_count} internal nodes, "
                f"{stats.leaf_count} leaves"
            )
        return root, stats

    def _leaf(
        self,
        ids: np.ndarray,
        path: Tuple[int, ...],
        reason: str,
        extra_work: float = 0.0,
    ) -> Built:
        y_hat = mean_rows(self.dataset.labels, ids)
        work = float(self.dataset.labels.take(ids).nnz) + extra_work
        record = NodeRecord(path=path, n_v=len(ids), kind="leaf", reason=reason, work=work)
        return Leaf(y_hat), [record]

    def _build(self, ids: np.ndarray, path: Tuple[int, ...]) -> Built:
        """Subtree rooted at ``path`` over instances ``ids``, with pre-order records."""
        opened = self._open(ids, path)
        if not isinstance(opened, _OpenNode):
            return opened
        stack = [opened]
        self._spawn_children(opened)
        while True:
            top = stack[-1]
            i = top.next_pending()
            if i is not None:
                child = self._open(top.child_ids[i], top.path + (i,))
                if isinstance(child, _OpenNode):
                    stack.append(child)
                    self._spawn_children(child)
                else:
                    top.built[i] = child
                continue
            stack.pop()
            done = self._close(top)
            if not stack:
                return done
            stack[-1].built[top.path[-1]] = done

    def _spawn_children(self, node: _OpenNode) -> None:
        """Build the children of a shallow node on threads."""
        if len(node.path) >= self.spawn_depth or self.n_jobs == 1:
            return
        tasks = [(i, c) for i, c in enumerate(node.child_ids) if len(c)]
        built = Parallel(n_jobs=min(self.n_jobs, len(tasks)), backend="threading")(
            delayed(self._build)(c, node.path + (i,)) for i, c in tasks
        )
        node.built.update({i: result for (i, _), result in zip(tasks, built)})

    def _open(self, ids: np.ndarray, path: Tuple[int, ...]) -> Union[Built, _OpenNode]:
        """Stop the node as a leaf, or train and split it."""
        cfg = self.cfg
        reason = stop_reason(
            self.dataset.features.take(ids), self.dataset.labels.take(ids), cfg
        )
        if reason is not None:
            return self._leaf(ids, path, reason)

        rng = node_rng(cfg.master_seed, self.tree_index, path)
        features_v = self.features.take(ids)
        classif, sample = train_node_classifier(features_v, self.labels.take(ids), cfg, rng)
        parts = split(classif, features_v)
        if parts is None:
            routed = np.zeros(len(ids), dtype=np.int64)
        else:
            routed = routing_ops(classif, features_v)
        costs = _node_costs(sample, len(ids), cfg.k, int(routed[sample.positions].sum()))
        if self.check_invariants:
            self._check_cost_bound(path, costs)

        if parts is None or sum(1 for p in parts if len(p)) < 2:
            return self._leaf(ids, path, "no_progress", extra_work=costs["work"])

        child_ids = [ids[p] for p in parts]
        if self.check_invariants:
            self._check_partition(path, ids, child_ids)
        record = NodeRecord(
            path=path,
            n_v=len(ids),
            kind="internal",
            split_ops=float(routed.sum()),
            iterations=sample.assignment.iterations,
            n_sample=sample.n_sample,
            **costs,
        )
        return _OpenNode(path, ids, classif, record, child_ids)

    def _close(self, node: _OpenNode) -> Built:
        """Assemble a split node once every non-empty child is built."""
        parent_mean: Optional[SparseVec] = None
        children: List[TreeNode] = []
        records = [node.record]
        for i, c in enumerate(node.child_ids):
            if len(c):
                child, child_records = node.built[i]
            else:
                if parent_mean is None:
                    parent_mean = mean_rows(self.dataset.labels, node.ids)
                child = Leaf(parent_mean)
                child_records = [
                    NodeRecord(path=node.path + (i,), n_v=0, kind="leaf", reason="empty_child")
                ]
            children.append(child)
            records.extend(child_records)
        return Internal(node.classif, tuple(children)), records

    def _check_partition(
        self, path: Tuple[int, ...], ids: np.ndarray, child_ids: List[np.ndarray]
    ) -> None:
        merged = np.sort(np.concatenate(child_ids))
        if not np.array_equal(merged, np.sort(ids)):
            raise InvariantViolationError(
                f"tree {self.tree_index} node {path}: children do not partition the parent"
            )

    def _check_cost_bound(self, path: Tuple[int, ...], costs: Dict[str, float]) -> None:
        estimated, observed = costs["estimated_cost"], costs["observed_ops"]
        if estimated > COST_BOUND_FACTOR * observed or observed > COST_BOUND_FACTOR * estimated:
            raise InvariantViolationError(
                f"tree {self.tree_index} node {path}: estimated cost {estimated:.0f} "
                f"vs observed {observed:.0f} exceeds factor {COST_BOUND_FACTOR:g}"
            )


def train_tree(
    dataset: Dataset,
    cfg: TrainConfig,
    tree_index: int,
    instance_ids: Optional[Sequence[int]] = None,
    n_jobs: int = 1,
    spawn_depth: int = 1,
    check_invariants: bool = False,
) -> Tuple[TreeNode, TreeStats]:
    trainer = TreeTrainer(dataset, cfg, tree_index, n_jobs, spawn_depth, check_invariants)
    return trainer.train(instance_ids)


def predict_tree_batch(root: TreeNode, projected: SparseMatrix) -> List[SparseVec]:
    """Leaf vector reached by each (already projected) feature row."""
    reached: List[Optional[SparseVec]] = [None] * projected.n_rows
    stack: List[Tuple[TreeNode, np.ndarray]] = [(root, np.arange(projected.n_rows))]
    while stack:
        node, positions = stack.pop()
        if isinstance(node, Leaf):
            for p in positions:
                reached[p] = node.y_hat
            continue
        assigned = node.classif.route(projected.take(positions))
        for i, child in enumerate(node.children):
            selected = positions[assigned == i]
            if len(selected):
                stack.append((child, selected))
    return reached  # type: ignore[return-value]


def predict_tree(root: TreeNode, row: SparseVec, feature_spec: ProjectionSpec) -> SparseVec:
    projected = hash_project(SparseMatrix.from_rows([row], row.dim), feature_spec)
    return predict_tree_batch(root, projected)[0]


def iter_nodes(root: TreeNode) -> Iterator[Tuple[Tuple[int, ...], TreeNode]]:
    """(path, node) pairs in pre-order."""
    stack: List[Tuple[Tuple[int, ...], TreeNode]] = [((), root)]
    while stack:
        path, node = stack.pop()
        yield path, node
        if isinstance(node, Internal):
            for i in reversed(range(len(node.children))):
                stack.append((path + (i,), node.children[i]))
