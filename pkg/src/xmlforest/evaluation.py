"""Precision@k evaluation of a trained forest."""

import math
import time
from dataclasses import dataclass, field
from typing import IO, Collection, Dict, List, Optional, Sequence

from .exceptions import DimensionMismatchError
from .forest import ForestModel, Ranking, predict_forest_batch
from .sparse import Dataset

DEFAULT_KS = (1, 3, 5)


def precision_at_k(ranking: Sequence[int], true_labels: Collection[int], k: int) -> float:
    """|top-k of ranking ∩ true_labels| / k. The denominator is always k."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    return len(set(ranking[:k]) & set(true_labels)) / k


def pad_ranking(ranking: Sequence[int], length: int, n_labels: int) -> List[int]:
    """Extend a ranking to ``length`` with the lowest-index labels it lacks."""
    padded = list(ranking[:length])
    if len(padded) >= length:
        return padded
    present = set(padded)
    for label in range(n_labels):
        if len(padded) >= length:
            break
        if label not in present:
            padded.append(label)
    return padded


@dataclass
class EvalReport:
    """Mean P@k over a test set plus the timings around it."""

    p_at: Dict[int, float]
    n_test: int
    train_seconds: float = 0.0
    predict_seconds_total: float = 0.0
    predict_ms_per_sample: float = 0.0
    model_bytes: Optional[int] = None
    per_sample: Dict[int, List[float]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> Dict[str, object]:
        return {
            "p_at": {str(k): v for k, v in sorted(self.p_at.items())},
            "n_test": self.n_test,
            "train_seconds": self.train_seconds,
            "predict_seconds_total": self.predict_seconds_total,
            "predict_ms_per_sample": self.predict_ms_per_sample,
            "model_bytes": self.model_bytes,
        }


def evaluate(
    model: ForestModel,
    test: Dataset,
    ks: Sequence[int] = DEFAULT_KS,
    threads: int = 1,
    train_seconds: float = 0.0,
    model_bytes: Optional[int] = None,
) -> EvalReport:
    if test.d_x != model.cfg.n_features:
        raise DimensionMismatchError(
            f"model was trained on {model.cfg.n_features} features, test data has {test.d_x}"
        )
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] <= 0:
        raise ValueError(f"ks must be positive, got {ks}")
    top = ks[-1]

    started = time.perf_counter()
    rankings = predict_forest_batch(model, test.features, top, threads)
    elapsed = time.perf_counter() - started

    per_sample: Dict[int, List[float]] = {k: [] for k in ks}
    labels = test.labels
    for i, ranking in enumerate(rankings):
        predicted = pad_ranking([label for label, _ in ranking], top, model.cfg.n_labels)
        truth = set(int(c) for c in labels.indices[labels.indptr[i] : labels.indptr[i + 1]])
        for k in ks:
            per_sample[k].append(precision_at_k(predicted, truth, k))

    n = test.n
    return EvalReport(
        p_at={k: math.fsum(v) / n if n else 0.0 for k, v in per_sample.items()},
        n_test=n,
        train_seconds=train_seconds,
        predict_seconds_total=elapsed,
        predict_ms_per_sample=1000.0 * elapsed / n if n else 0.0,
        model_bytes=model_bytes,
        per_sample=per_sample,
    )


def format_ranking(ranking: Ranking) -> str:
    return ",".join(f"{label}:{score:.6g}" for label, score in ranking)


def write_predictions(rankings: Sequence[Ranking], stream: IO[str]) -> None:
    """One "label:score,..." line per row."""
    for ranking in rankings:
        stream.write(format_ranking(ranking) + "\n")
