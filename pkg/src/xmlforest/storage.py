"""
Binary model format and model file storage.

All integers are little-endian.

    model    = "DXMF" u32 version  u32 cfg_len  cfg_json  u32 n_trees  tree_block*
    payload  = "DXMT" u32 version  u32 cfg_len  cfg_json  u32 n_trees  tree_block*
    tree_block = u32 tree_index
                 u32 dx_out  u64 S_x  u64 SS_x
                 u32 dy_out  u64 S_y  u64 SS_y
                 u64 body_len  body
    body     = node in pre-order:
               u8 0  u32 dim  vec                        (leaf)
               u8 1  u32 k    u32 dim  vec*k  child*k    (internal)
    vec      = u32 nnz  u32 idx[nnz]  f64 val[nnz]

A worker payload carries the trees one worker trained; the master joins
payload tree blocks byte-for-byte into the model container.
"""

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import (
    BadMagicError,
    ConfigError,
    ModelFormatError,
    SparseFormatError,
    TruncatedModelError,
    VersionMismatchError,
)
from .forest import FORMAT_VERSION, ForestModel, TreeEntry
from .projection import ProjectionSpec
from .sparse import SparseMatrix, SparseVec
from .tree import Internal, Leaf, NodeClassifier, TrainConfig, TreeNode

MODEL_MAGIC = b"DXMF"
PAYLOAD_MAGIC = b"DXMT"

_TAG_LEAF = 0
_TAG_INTERNAL = 1

_SPEC = struct.Struct("<IQQ")
_HEADER = struct.Struct("<4sI")


class _Reader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, data: Union[bytes, memoryview]):
        self.view = memoryview(data)
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.view) - self.pos

    def take(self, n: int) -> memoryview:
        if n > self.remaining:
            raise TruncatedModelError(
                f"needed {n} bytes at offset {self.pos}, only {self.remaining} left"
            )
        chunk = self.view[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: Union[str, struct.Struct]) -> tuple:
        packer = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        return packer.unpack(self.take(packer.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(width * count), dtype=dtype, count=count)


def _pack_vec(parts: List[bytes], indices: np.ndarray, values: np.ndarray) -> None:
    parts.append(struct.pack("<I", len(indices)))
    parts.append(np.asarray(indices, dtype="<u4").tobytes())
    parts.append(np.asarray(values, dtype="<f8").tobytes())


def _read_vec(reader: _Reader, dim: int) -> SparseVec:
    (nnz,) = reader.unpack("<I")
    indices = reader.array("<u4", nnz).astype(np.int64)
    values = reader.array("<f8", nnz).astype(np.float64)
    return SparseVec(indices, values, dim)


def _pack_node(parts: List[bytes], root: TreeNode) -> None:
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, Leaf):
            parts.append(struct.pack("<BI", _TAG_LEAF, node.y_hat.dim))
            _pack_vec(parts, node.y_hat.indices, node.y_hat.values)
            continue
        centroids = node.classif.centroids
        parts.append(struct.pack("<BII", _TAG_INTERNAL, centroids.n_rows, centroids.n_cols))
        for i in range(centroids.n_rows):
            lo, hi = centroids.indptr[i], centroids.indptr[i + 1]
            _pack_vec(parts, centroids.indices[lo:hi], centroids.data[lo:hi])
        stack.extend(reversed(node.children))


def _read_node(reader: _Reader) -> TreeNode:
    """Decode one pre-order node body; each open internal node waits for k children."""
    # (classifier, children decoded so far, k) per internal node still open
    open_nodes: List[Tuple[NodeClassifier, List[TreeNode], int]] = []
    while True:
        (tag,) = reader.unpack("<B")
        node: TreeNode
        if tag == _TAG_LEAF:
            (dim,) = reader.unpack("<I")
            node = Leaf(_read_vec(reader, dim))
        elif tag == _TAG_INTERNAL:
            k, dim = reader.unpack("<II")
            if k < 2:
                raise ModelFormatError(f"internal node with {k} children")
            rows = [_read_vec(reader, dim) for _ in range(k)]
            open_nodes.append((NodeClassifier(SparseMatrix.from_rows(rows, dim)), [], k))
            continue
        else:
            raise ModelFormatError(f"unknown node tag {tag} at offset {reader.pos - 1}")

        while open_nodes:
            classif, children, k = open_nodes[-1]
            children.append(node)
            if len(children) < k:
                break
            open_nodes.pop()
            node = Internal(classif, tuple(children))
        else:
            return node


def encode_tree_block(entry: TreeEntry) -> bytes:
    body: List[bytes] = []
    _pack_node(body, entry.root)
    body_bytes = b"".join(body)
    fs, ls = entry.feature_spec, entry.label_spec
    return b"".join(
        [
            struct.pack("<I", entry.tree_index),
            _SPEC.pack(fs.out_dim, fs.seed_index, fs.seed_sign),
            _SPEC.pack(ls.out_dim, ls.seed_index, ls.seed_sign),
            struct.pack("<Q", len(body_bytes)),
            body_bytes,
        ]
    )


def _read_tree_block(reader: _Reader) -> TreeEntry:
    (tree_index,) = reader.unpack("<I")
    try:
        feature_spec = ProjectionSpec(*reader.unpack(_SPEC))
        label_spec = ProjectionSpec(*reader.unpack(_SPEC))
    except ValueError as e:
        raise ModelFormatError(f"tree {tree_index}: bad projection: {e}") from e
    (body_len,) = reader.unpack("<Q")
    body = _Reader(reader.take(body_len))
    try:
        root = _read_node(body)
    except SparseFormatError as e:
        raise ModelFormatError(f"tree {tree_index}: corrupt vector: {e}") from e
    if body.remaining:
        raise ModelFormatError(f"tree {tree_index}: {body.remaining} trailing body bytes")
    return TreeEntry(root, feature_spec, label_spec, tree_index)


def decode_tree_block(data: bytes) -> TreeEntry:
    """Inverse of encode_tree_block for one standalone block."""
    reader = _Reader(data)
    entry = _read_tree_block(reader)
    if reader.remaining:
        raise ModelFormatError(f"{reader.remaining} trailing bytes after tree block")
    return entry


def _config_bytes(cfg: TrainConfig) -> bytes:
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def container_overhead(cfg: TrainConfig) -> int:
    """Bytes a model or payload container adds around its tree blocks."""
    return _HEADER.size + 4 + len(_config_bytes(cfg)) + 4


def _encode_container(magic: bytes, cfg: TrainConfig, blocks: Sequence[bytes]) -> bytes:
    cfg_bytes = _config_bytes(cfg)
    return b"".join(
        [
            _HEADER.pack(magic, FORMAT_VERSION),
            struct.pack("<I", len(cfg_bytes)),
            cfg_bytes,
            struct.pack("<I", len(blocks)),
            *blocks,
        ]
    )


def _decode_container(magic: bytes, data: bytes) -> Tuple[TrainConfig, List[TreeEntry]]:
    reader = _Reader(data)
    found, version = reader.unpack(_HEADER)
    if found != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {bytes(found)!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(version, FORMAT_VERSION)
    (cfg_len,) = reader.unpack("<I")
    raw = bytes(reader.take(cfg_len))
    try:
        cfg = TrainConfig.from_dict(json.loads(raw.decode("utf-8")))
    except (ValueError, TypeError, ConfigError) as e:
        raise ModelFormatError(f"corrupt config block: {e}") from e
    (n_trees,) = reader.unpack("<I")
    entries = [_read_tree_block(reader) for _ in range(n_trees)]
    if reader.remaining:
        raise ModelFormatError(f"{reader.remaining} trailing bytes after {n_trees} trees")
    return cfg, entries


def model_to_bytes(model: ForestModel) -> bytes:
    return _encode_container(
        MODEL_MAGIC, model.cfg, [encode_tree_block(e) for e in model.trees]
    )


def model_from_bytes(data: bytes) -> ForestModel:
    cfg, entries = _decode_container(MODEL_MAGIC, data)
    try:
        return ForestModel(tuple(entries), cfg)
    except ValueError as e:
        raise ModelFormatError(str(e)) from e


def serialize_model(model: ForestModel, stream: BinaryIO) -> int:
    """Write the model; returns the number of bytes written."""
    data = model_to_bytes(model)
    stream.write(data)
    return len(data)


def deserialize_model(stream: BinaryIO) -> ForestModel:
    return model_from_bytes(stream.read())


def encode_worker_payload(cfg: TrainConfig, entries: Sequence[TreeEntry]) -> bytes:
    return _encode_container(PAYLOAD_MAGIC, cfg, [encode_tree_block(e) for e in entries])


def decode_worker_payload(data: bytes) -> Tuple[TrainConfig, List[TreeEntry]]:
    return _decode_container(PAYLOAD_MAGIC, data)


@dataclass(frozen=True)
class ModelSize:
    """Where the bytes of a serialized model go."""

    container_bytes: int
    tree_block_bytes: Tuple[int, ...]

    @property
    def total(self) -> int:
        return self.container_bytes + sum(self.tree_block_bytes)


def model_size(model: ForestModel) -> ModelSize:
    blocks = tuple(len(encode_tree_block(e)) for e in model.trees)
    return ModelSize(container_overhead(model.cfg), blocks)


class ModelStore:
    """Saves and loads model files."""

    def __init__(self, model_dir: Optional[Union[str, Path]] = None):
        self.model_dir = Path(model_dir) if model_dir else None
        if self.model_dir:
            self.model_dir.mkdir(parents=True, exist_ok=True)

    def resolve(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        if self.model_dir and not path.is_absolute():
            return self.model_dir / path
        return path

    def save(self, model: ForestModel, path: Union[str, Path]) -> int:
        """Write atomically (temp file then rename); returns the file size."""
        target = self.resolve(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        try:
            with open(tmp, "wb") as f:
                size = serialize_model(model, f)
            os.replace(tmp, target)
        except BaseException:
            tmp.unlink(missing_ok=True)
            raise
        return size

    def load(self, path: Union[str, Path]) -> ForestModel:
        """Raises FileNotFoundError for a missing file, ModelFormatError for a bad one."""
        with open(self.resolve(path), "rb") as f:
            return deserialize_model(f)
