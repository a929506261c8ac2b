"""
Master/worker forest training.

Every worker reads the full dataset, trains a contiguous range of tree
indices and sends one frame to the master (rank 0):

    frame = "DXMW"  u32 worker_rank  u64 payload_len  payload

where the payload is a worker tree payload (see ``storage``). The master
checks that each worker reported exactly once with the expected trees and
joins them, in tree-index order, into the forest a single process would
have trained.
"""

import struct
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from joblib import Parallel, delayed

from .exceptions import (
    BadMagicError,
    CommAccountingError,
    ConfigError,
    DuplicateReportError,
    MasterUnreachableError,
    MissingWorkerError,
    ModelFormatError,
    TransportError,
    TransportTimeoutError,
    TruncatedModelError,
)
from .forest import ForestModel, TreeEntry, train_forest_range
from .sparse import Dataset
from .storage import (
    container_overhead,
    decode_worker_payload,
    encode_tree_block,
    encode_worker_payload,
    model_to_bytes,
)
from .transport import Address, HttpTransport, LoopbackHub, Transport
from .tree import TrainConfig
from .utils import TrainingLogger

MASTER_RANK = 0
FRAME_MAGIC = b"DXMW"
_FRAME = struct.Struct("<4sIQ")
FRAME_HEADER_SIZE = _FRAME.size

# Config fields a master may leave at 0 and take from the workers.
_RESOLVED_FIELDS = ("proj_dx", "proj_dy", "n_features", "n_labels")


def encode_frame(rank: int, payload: bytes) -> bytes:
    return _FRAME.pack(FRAME_MAGIC, rank, len(payload)) + payload


def decode_frame(data: bytes) -> Tuple[int, bytes]:
    """(worker rank, payload). The declared length must match exactly."""
    if len(data) < FRAME_HEADER_SIZE:
        raise TruncatedModelError(f"frame of {len(data)} bytes has no complete header")
    magic, rank, length = _FRAME.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise BadMagicError(f"expected frame magic {FRAME_MAGIC!r}, found {magic!r}")
    body = data[FRAME_HEADER_SIZE:]
    if len(body) < length:
        raise TruncatedModelError(f"frame declares {length} payload bytes, got {len(body)}")
    if len(body) > length:
        raise ModelFormatError(f"frame has {len(body) - length} bytes past its payload")
    return rank, bytes(body)


def contiguous_ranges(n_trees: int, workers: int) -> List[range]:
    """Split tree indices 0..n_trees-1 into ``workers`` contiguous ranges.

    The first n_trees % workers ranges get one extra tree.
    """
    if workers < 1:
        raise ConfigError(f"need at least one worker, got {workers}")
    if workers > n_trees:
        raise ConfigError(f"{workers} workers but only {n_trees} trees to train")
    base, extra = divmod(n_trees, workers)
    ranges = []
    start = 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        ranges.append(range(start, start + size))
        start += size
    return ranges


def parse_roster(text: str) -> Dict[int, Address]:
    """Parse "rank host:port" lines; '#' starts a comment."""
    roster: Dict[int, Address] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"expected 'rank host:port', got {line!r}", line=lineno)
        host, sep, port = parts[1].rpartition(":")
        try:
            rank = int(parts[0])
            port_number = int(port)
        except ValueError:
            raise ConfigError(f"bad rank or port in {line!r}", line=lineno) from None
        if not sep or not host or rank < 0 or not 0 <= port_number <= 65535:
            raise ConfigError(f"bad roster entry {line!r}", line=lineno)
        if rank in roster:
            raise ConfigError(f"rank {rank} listed twice", line=lineno)
        roster[rank] = (host, port_number)
    return roster


def read_roster(path: Union[str, Path]) -> Dict[int, Address]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read roster {path}: {e.strerror}") from e
    return parse_roster(text)


@dataclass
class ClusterConfig:
    """Who this process is and who the others are."""

    workers: int
    role: str = "master"
    rank: int = MASTER_RANK
    roster: Dict[int, Address] = field(default_factory=dict)
    retries: int = 3
    retry_backoff: float = 0.5
    receive_timeout: float = 30.0

    def __post_init__(self):
        if self.role not in ("master", "worker"):
            raise ConfigError(f"role must be 'master' or 'worker', got {self.role!r}")
        if self.workers < 1:
            raise ConfigError(f"need at least one worker, got {self.workers}")
        if self.role == "master" and self.rank != MASTER_RANK:
            raise ConfigError(f"the master has rank {MASTER_RANK}, got {self.rank}")
        if self.role == "worker" and not 1 <= self.rank <= self.workers:
            raise ConfigError(f"worker rank must be in 1..{self.workers}, got {self.rank}")
        if self.retries < 0:
            raise ConfigError(f"retries must be >= 0, got {self.retries}")

    def assignments(self, n_trees: int) -> Dict[int, range]:
        return {w + 1: r for w, r in enumerate(contiguous_ranges(n_trees, self.workers))}

    def tree_range(self, n_trees: int) -> range:
        return self.assignments(n_trees)[self.rank]


@dataclass
class CommStats:
    """Messages and bytes moved by one rank, per peer.

    ``bytes_*`` count frame payloads; frame headers are counted apart in
    ``frame_bytes``. ``repeated_reports`` counts identical resent frames the
    master dropped.
    """

    rank: int
    messages_sent: Dict[int, int] = field(default_factory=dict)
    bytes_sent: Dict[int, int] = field(default_factory=dict)
    messages_received: Dict[int, int] = field(default_factory=dict)
    bytes_received: Dict[int, int] = field(default_factory=dict)
    frame_bytes: int = 0
    tree_block_bytes: Dict[int, int] = field(default_factory=dict)
    phase_seconds: Dict[str, float] = field(default_factory=dict)
    attempts: int = 0
    repeated_reports: int = 0

    def record_send(self, peer: int, n_bytes: int) -> None:
        self.messages_sent[peer] = self.messages_sent.get(peer, 0) + 1
        self.bytes_sent[peer] = self.bytes_sent.get(peer, 0) + n_bytes
        self.frame_bytes += FRAME_HEADER_SIZE

    def record_receive(self, peer: int, n_bytes: int) -> None:
        self.messages_received[peer] = self.messages_received.get(peer, 0) + 1
        self.bytes_received[peer] = self.bytes_received.get(peer, 0) + n_bytes
        self.frame_bytes += FRAME_HEADER_SIZE

    @property
    def total_messages_sent(self) -> int:
        return sum(self.messages_sent.values())

    @property
    def total_bytes_sent(self) -> int:
        return sum(self.bytes_sent.values())

    @property
    def total_messages_received(self) -> int:
        return sum(self.messages_received.values())

    @property
    def total_bytes_received(self) -> int:
        return sum(self.bytes_received.values())

    @property
    def wall_time(self) -> float:
        return sum(self.phase_seconds.values())

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            self.phase_seconds[name] = (
                self.phase_seconds.get(name, 0.0) + time.perf_counter() - started
            )

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def _resolved_cfg(cfg: TrainConfig, dataset: Dataset) -> TrainConfig:
    return cfg if cfg.is_resolved else cfg.resolved_for(dataset.d_x, dataset.d_y)


def run_worker(
    dataset: Dataset,
    cfg: TrainConfig,
    cluster: ClusterConfig,
    transport: Transport,
    threads: int = 1,
    backend: str = "loky",
    logger: Optional[TrainingLogger] = None,
    sleep=time.sleep,
) -> CommStats:
    """Train this worker's trees and send them to the master in one frame."""
    if cluster.role != "worker":
        raise ConfigError(f"run_worker needs role 'worker', got {cluster.role!r}")
    logger = logger or TrainingLogger(verbose=False)
    cfg = _resolved_cfg(cfg, dataset)
    indices = cluster.tree_range(cfg.n_trees)
    stats = CommStats(rank=cluster.rank)

    with stats.phase("train"):
        entries, _ = train_forest_range(dataset, cfg, indices, threads, backend)
    payload = encode_worker_payload(cfg, entries)
    frame = encode_frame(cluster.rank, payload)

    with stats.phase("send"):
        for attempt in range(1, cluster.retries + 2):
            stats.attempts = attempt
            try:
                transport.send(MASTER_RANK, frame)
                break
            except TransportError as e:
                e.attempt = attempt
                logger.log_send_retry(cluster.rank, attempt, e)
                if attempt > cluster.retries:
                    logger.log_failure(
                        f"worker {cluster.rank}: giving up after {attempt} attempts"
                    )
                    raise MasterUnreachableError(
                        f"worker {cluster.rank}: master unreachable after {attempt} attempts"
                    ) from e
                sleep(cluster.retry_backoff * 2 ** (attempt - 1))

    stats.record_send(MASTER_RANK, len(payload))
    stats.tree_block_bytes[MASTER_RANK] = len(payload) - container_overhead(cfg)
    logger.log_worker_sent(cluster.rank, len(entries), len(frame))
    return stats


def _check_compatible(master: TrainConfig, worker: TrainConfig, rank: int) -> None:
    for f in fields(TrainConfig):
        mine, theirs = getattr(master, f.name), getattr(worker, f.name)
        if mine == theirs or (f.name in _RESOLVED_FIELDS and mine == 0):
            continue
        raise ModelFormatError(
            f"worker {rank} trained with {f.name}={theirs}, master expects {mine}"
        )


def run_master(
    cfg: TrainConfig,
    cluster: ClusterConfig,
    transport: Transport,
    logger: Optional[TrainingLogger] = None,
) -> Tuple[ForestModel, CommStats]:
    """Collect one payload per worker and assemble the forest."""
    if cluster.role != "master":
        raise ConfigError(f"run_master needs role 'master', got {cluster.role!r}")
    logger = logger or TrainingLogger(verbose=False)
    expected = cluster.assignments(cfg.n_trees)
    stats = CommStats(rank=MASTER_RANK)
    received: Dict[int, List[TreeEntry]] = {}
    payloads: Dict[int, bytes] = {}
    worker_cfg: Optional[TrainConfig] = None

    with stats.phase("receive"):
        while len(received) < len(expected):
            try:
                _, message = transport.receive(timeout=cluster.receive_timeout)
            except TransportTimeoutError:
                logger.log_failure(
                    f"master: timed out with {len(received)}/{len(expected)} reports"
                )
                raise MissingWorkerError(set(expected) - set(received)) from None
            rank, payload = decode_frame(message)
            if rank not in expected:
                raise ModelFormatError(f"report from unknown worker rank {rank}")
            if rank in received:
                if payload == payloads[rank]:
                    # a worker retry whose first send did arrive
                    stats.repeated_reports += 1
                    logger.log_repeated_report(rank)
                    continue
                raise DuplicateReportError(f"worker {rank} sent two different reports")
            stats.record_receive(rank, len(payload))

            payload_cfg, entries = decode_worker_payload(payload)
            _check_compatible(cfg, payload_cfg, rank)
            if worker_cfg is not None and payload_cfg != worker_cfg:
                raise ModelFormatError(f"worker {rank} config differs from earlier workers")
            worker_cfg = payload_cfg
            got = [e.tree_index for e in entries]
            if got != list(expected[rank]):
                raise ModelFormatError(
                    f"worker {rank} sent trees {got}, expected {list(expected[rank])}"
                )
            received[rank] = entries
            payloads[rank] = payload
            stats.tree_block_bytes[rank] = len(payload) - container_overhead(payload_cfg)
            logger.log_master_received(rank, len(message), len(received), len(expected))

    with stats.phase("assemble"):
        trees = [entry for rank in sorted(received) for entry in received[rank]]
        model = ForestModel(tuple(trees), worker_cfg or cfg)
    logger.log_master_done(len(trees), stats.phase_seconds["assemble"])
    return model, stats


@dataclass(frozen=True)
class CommReport:
    """Measured gather traffic next to its predicted counts."""

    workers: int
    messages: int
    predicted_messages: int
    payload_bytes: int
    predicted_payload_bytes: int
    frame_overhead_bytes: int
    payload_container_bytes: int
    tree_block_bytes: int
    model_bytes: Optional[int] = None
    model_container_bytes: Optional[int] = None
    receive_seconds: float = 0.0
    assemble_seconds: float = 0.0

    @property
    def gather_seconds_exclusive(self) -> float:
        """Gather time without the master's deserialize-and-assemble step."""
        return self.receive_seconds

    @property
    def gather_seconds_inclusive(self) -> float:
        return self.receive_seconds + self.assemble_seconds

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data["gather_seconds_exclusive"] = self.gather_seconds_exclusive
        data["gather_seconds_inclusive"] = self.gather_seconds_inclusive
        return data


def predicted_payload_sizes(model: ForestModel, workers: int) -> List[int]:
    """Payload bytes each of ``workers`` workers must send to produce ``model``.

    Worker w's payload is a container around the tree blocks of its
    contiguous range, so the sizes follow from the assembled model alone.
    """
    blocks = {entry.tree_index: len(encode_tree_block(entry)) for entry in model.trees}
    overhead = container_overhead(model.cfg)
    return [
        overhead + sum(blocks[i] for i in tree_range)
        for tree_range in contiguous_ranges(model.cfg.n_trees, workers)
    ]


def comm_report(
    stats: CommStats,
    workers: int,
    payload_sizes: Sequence[int],
    model: Optional[ForestModel] = None,
) -> CommReport:
    """Check the master's counts: exactly ``workers`` messages carrying
    exactly sum(payload_sizes) bytes. With ``model`` the assembled model
    size is audited against the gathered tree blocks plus its container.
    """
    messages = stats.total_messages_received
    payload_bytes = stats.total_bytes_received
    predicted_bytes = int(sum(payload_sizes))
    if messages != workers:
        raise CommAccountingError(f"{messages} messages received, expected {workers}")
    if payload_bytes != predicted_bytes:
        raise CommAccountingError(
            f"{payload_bytes} payload bytes received, workers sent {predicted_bytes}"
        )
    tree_blocks = sum(stats.tree_block_bytes.values())
    model_bytes = model_container = None
    if model is not None:
        model_bytes = len(model_to_bytes(model))
        model_container = container_overhead(model.cfg)
        if model_bytes != tree_blocks + model_container:
            raise CommAccountingError(
                f"model is {model_bytes} bytes, gathered tree blocks "
                f"{tree_blocks} + container {model_container}"
            )
    return CommReport(
        workers=workers,
        messages=messages,
        predicted_messages=workers,
        payload_bytes=payload_bytes,
        predicted_payload_bytes=predicted_bytes,
        frame_overhead_bytes=stats.frame_bytes,
        payload_container_bytes=payload_bytes - tree_blocks,
        tree_block_bytes=tree_blocks,
        model_bytes=model_bytes,
        model_container_bytes=model_container,
        receive_seconds=stats.phase_seconds.get("receive", 0.0),
        assemble_seconds=stats.phase_seconds.get("assemble", 0.0),
    )


@dataclass
class ClusterRun:
    """Outcome of simulate_cluster."""

    model: ForestModel
    master_stats: CommStats
    worker_stats: List[CommStats]
    report: CommReport
    wall_seconds: float


def simulate_cluster(
    dataset: Dataset,
    cfg: TrainConfig,
    workers: int,
    transport: str = "loopback",
    worker_threads: int = 1,
    retries: int = 3,
    receive_timeout: float = 30.0,
    logger: Optional[TrainingLogger] = None,
) -> ClusterRun:
    """Run a master and ``workers`` workers in this process, one thread each.

    ``transport`` is "loopback" (in-memory queues) or "http" (real TCP on
    127.0.0.1). Each worker trains with ``worker_threads`` threads.
    """
    cfg = _resolved_cfg(cfg, dataset)
    if transport == "loopback":
        hub = LoopbackHub()
        master_t: Transport = hub.endpoint(MASTER_RANK)
        worker_ts: List[Transport] = [hub.endpoint(r) for r in range(1, workers + 1)]
    elif transport == "http":
        master_t = HttpTransport(MASTER_RANK, {}, listen=("127.0.0.1", 0))
        roster = {MASTER_RANK: master_t.address}
        worker_ts = [HttpTransport(r, roster) for r in range(1, workers + 1)]
    else:
        raise ConfigError(f"unknown transport {transport!r}")

    master_cluster = ClusterConfig(workers=workers, receive_timeout=receive_timeout)
    worker_clusters = [
        ClusterConfig(workers=workers, role="worker", rank=r, retries=retries)
        for r in range(1, workers + 1)
    ]
    started = time.perf_counter()
    try:
        results = Parallel(
            n_jobs=workers + 1, backend="threading", batch_size=1, pre_dispatch="all"
        )(
            [delayed(run_master)(cfg, master_cluster, master_t, logger)]
            + [
                delayed(run_worker)(
                    dataset, cfg, c, t, worker_threads, "threading", logger
                )
                for c, t in zip(worker_clusters, worker_ts)
            ]
        )
    finally:
        for t in [master_t] + worker_ts:
            t.close()
    wall = time.perf_counter() - started

    model, master_stats = results[0]
    worker_stats = list(results[1:])
    sizes = [s.total_bytes_sent for s in worker_stats]
    report = comm_report(master_stats, workers, sizes, model)
    return ClusterRun(model, master_stats, worker_stats, report, wall)
