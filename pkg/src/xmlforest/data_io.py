"""
Reader and writer for the extreme-classification repository text format.

    n d_x d_y
    l1,l2,...,lk f1:v1 f2:v2 ...

Indices are 0-based. The label list may be empty, in which case the line
starts with a space or its first token already contains ':'.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, List, Tuple, Union

import numpy as np

from .exceptions import DataFormatError, SparseFormatError
from .sparse import INDEX_DTYPE, VALUE_DTYPE, Dataset, SparseMatrix


@dataclass(frozen=True)
class XmlcHeader:
    """First line of a dataset file."""

    n: int
    d_x: int
    d_y: int

    def __post_init__(self):
        if self.n <= 0 or self.d_x <= 0 or self.d_y <= 0:
            raise DataFormatError(
                f"header values must be positive, got {self.n} {self.d_x} {self.d_y}",
                line=1,
            )

    @classmethod
    def parse(cls, line: str) -> "XmlcHeader":
        fields = line.split()
        if len(fields) != 3:
            raise DataFormatError(
                f"malformed header {line.strip()!r}: expected 'n d_x d_y'", line=1
            )
        try:
            n, d_x, d_y = (int(f) for f in fields)
        except ValueError:
            raise DataFormatError(
                f"malformed header {line.strip()!r}: non-integer field", line=1
            ) from None
        return cls(n, d_x, d_y)

    def format(self) -> str:
        return f"{self.n} {self.d_x} {self.d_y}"


class _CsrBuilder:
    """Accumulates rows for one SparseMatrix."""

    def __init__(self):
        self.indptr: List[int] = [0]
        self.indices: List[int] = []
        self.data: List[float] = []

    def append(self, entries: List[Tuple[int, float]]) -> None:
        for col, val in entries:
            self.indices.append(col)
            self.data.append(val)
        self.indptr.append(len(self.indices))

    def build(self, n_cols: int) -> SparseMatrix:
        return SparseMatrix(
            np.asarray(self.indptr, dtype=INDEX_DTYPE),
            np.asarray(self.indices, dtype=INDEX_DTYPE),
            np.asarray(self.data, dtype=VALUE_DTYPE),
            n_cols,
        )


def _parse_index(token: str, dim: int, what: str, lineno: int) -> int:
    try:
        index = int(token)
    except ValueError:
        raise DataFormatError(f"non-integer {what} index {token!r}", line=lineno) from None
    if index < 0 or index >= dim:
        raise DataFormatError(
            f"{what} index {index} outside declared dimension {dim}", line=lineno
        )
    return index


def _parse_value(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataFormatError(f"non-numeric value {token!r}", line=lineno) from None
    if not math.isfinite(value):
        raise DataFormatError(f"non-finite value {token!r}", line=lineno)
    return value


def _parse_line(
    line: str, header: XmlcHeader, lineno: int
) -> Tuple[List[Tuple[int, float]], List[Tuple[int, float]]]:
    tokens = line.split()
    label_token = ""
    if tokens and not line[:1].isspace() and ":" not in tokens[0]:
        label_token = tokens.pop(0)

    labels: List[Tuple[int, float]] = []
    if label_token:
        seen = sorted(
            _parse_index(t, header.d_y, "label", lineno)
            for t in label_token.split(",")
            if t
        )
        for a, b in zip(seen, seen[1:]):
            if a == b:
                raise DataFormatError(f"duplicate label {a}", line=lineno)
        labels = [(index, 1.0) for index in seen]

    features: List[Tuple[int, float]] = []
    for token in tokens:
        key, sep, raw = token.partition(":")
        if not sep:
            raise DataFormatError(f"feature token {token!r} is not 'f:v'", line=lineno)
        index = _parse_index(key, header.d_x, "feature", lineno)
        value = _parse_value(raw, lineno)
        if value != 0.0:
            features.append((index, value))
    features.sort()
    for (a, _), (b, _) in zip(features, features[1:]):
        if a == b:
            raise DataFormatError(f"duplicate feature {a}", line=lineno)
    return labels, features


def parse_xmlc(stream: Iterable[str]) -> Dataset:
    """Parse a dataset from a text stream (any iterable of lines)."""
    lines = iter(stream)
    try:
        header = XmlcHeader.parse(next(lines))
    except StopIteration:
        raise DataFormatError("empty input, missing header", line=1) from None

    feature_rows = _CsrBuilder()
    label_rows = _CsrBuilder()
    count = 0
    lineno = 1
    for lineno, line in enumerate(lines, start=2):
        line = line.rstrip("\r\n")
        if count == header.n:
            if line.strip():
                raise DataFormatError(
                    f"more data lines than the declared {header.n}", line=lineno
                )
            continue
        labels, features = _parse_line(line, header, lineno)
        label_rows.append(labels)
        feature_rows.append(features)
        count += 1

    if count < header.n:
        raise DataFormatError(
            f"expected {header.n} data lines, found {count}", line=lineno + 1
        )
    try:
        return Dataset(feature_rows.build(header.d_x), label_rows.build(header.d_y))
    except SparseFormatError as e:
        raise DataFormatError(str(e)) from e


def _format_value(value: float) -> str:
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def write_xmlc(dataset: Dataset, stream: IO[str]) -> None:
    """Write a dataset so that parse_xmlc reads it back unchanged."""
    header = XmlcHeader(dataset.n, dataset.d_x, dataset.d_y)
    stream.write(header.format() + "\n")
    features, labels = dataset.features, dataset.labels
    for i in range(dataset.n):
        lo, hi = labels.indptr[i], labels.indptr[i + 1]
        label_part = ",".join(str(int(c)) for c in labels.indices[lo:hi])
        lo, hi = features.indptr[i], features.indptr[i + 1]
        feature_part = " ".join(
            f"{int(c)}:{_format_value(v)}"
            for c, v in zip(features.indices[lo:hi], features.data[lo:hi])
        )
        stream.write(f"{label_part} {feature_part}\n")


def read_dataset(path: Union[str, Path]) -> Dataset:
    """Read a dataset file, naming the path in any error."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_xmlc(f)
    except OSError as e:
        raise DataFormatError(f"{path}: cannot read data file ({e.strerror})") from e
    except DataFormatError as e:
        raise DataFormatError(f"{path}: {e}") from e


def write_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        write_xmlc(dataset, f)
