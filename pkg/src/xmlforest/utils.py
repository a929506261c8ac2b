"""
Progress logging and report formatting for xmlforest.

Progress lines go to standard error through the "xmlforest" logger so
standard output stays free for reports and predictions.
"""

import logging
import sys
from typing import Any, Dict, Iterable, Optional, Sequence

LOGGER_NAME = "xmlforest"

logger = logging.getLogger(LOGGER_NAME)


def configure_logging(verbose: bool = True, stream=None) -> logging.Logger:
    """Attach a ``[HH:MM:SS] message`` handler to the package logger once."""
    if not any(getattr(h, "_xmlforest", False) for h in logger.handlers):
        handler = logging.StreamHandler(stream or sys.stderr)
        handler.setFormatter(logging.Formatter("[%(asctime)s] %(message)s", "%H:%M:%S"))
        handler._xmlforest = True  # type: ignore[attr-defined]
        logger.addHandler(handler)
        logger.propagate = False
    logger.setLevel(logging.INFO if verbose else logging.WARNING)
    return logger


class TrainingLogger:
    """Handles progress output for training, gathering and evaluation."""

    def __init__(self, verbose: bool = True, log: Optional[logging.Logger] = None):
        self.verbose = verbose
        self.log = log or logger

    def _info(self, message: str) -> None:
        if self.verbose:
            self.log.info(message)

    def log_training_start(self, n: int, d_x: int, d_y: int, cfg, threads: int) -> None:
        """Log dataset shape and the training parameters."""
        self._info(
            f"Training {cfg.n_trees} tree(s) on {n} instances "
            f"({d_x} features, {d_y} labels) with {threads} thread(s)"
        )
        self._info(
            f"k={cfg.k} n_leaf={cfg.n_leaf} n_s={cfg.n_s} "
            f"proj={cfg.proj_dx}x{cfg.proj_dy} seed={cfg.master_seed}"
        )

    def log_tree_done(self, tree_index: int, stats) -> None:
        self._info(
            f"Tree {tree_index}: {stats.node_count} nodes, "
            f"{stats.leaf_count} leaves, depth {stats.depth}"
        )

    def log_forest_done(self, n_trees: int, seconds: float) -> None:
        self._info(f"[OK] Trained {n_trees} tree(s) in {seconds:.2f}s")

    def log_model_saved(self, path, n_bytes: int) -> None:
        self._info(f"[OK] Model saved to {path} ({format_bytes(n_bytes)})")

    def log_worker_sent(self, rank: int, n_trees: int, n_bytes: int) -> None:
        self._info(f"Worker {rank}: sent {n_trees} tree(s), {format_bytes(n_bytes)}")

    def log_send_retry(self, rank: int, attempt: int, error: Exception) -> None:
        """Retries are warnings; always shown."""
        self.log.warning(f"[WARN] Worker {rank}: send attempt {attempt} failed: {error}")

    def log_master_received(self, rank: int, n_bytes: int, received: int, expected: int) -> None:
        self._info(
            f"Master: report from worker {rank} ({format_bytes(n_bytes)}), "
            f"{received}/{expected}"
        )

    def log_repeated_report(self, rank: int) -> None:
        """A resent frame the master already holds; always shown."""
        self.log.warning(f"[WARN] Master: worker {rank} resent an identical report, ignored")

    def log_master_done(self, n_trees: int, seconds: float) -> None:
        self._info(f"[OK] Assembled {n_trees} tree(s) in {seconds:.3f}s")

    def log_failure(self, message: str) -> None:
        self.log.error(f"[FAIL] {message}")

    def log_eval_done(self, n_test: int, seconds: float) -> None:
        self._info(f"[OK] Evaluated {n_test} instances in {seconds:.2f}s")


def format_bytes(n_bytes: float) -> str:
    """Human-readable size."""
    for unit in ("B", "KB", "MB", "GB"):
        if abs(n_bytes) < 1024 or unit == "GB":
            return f"{n_bytes:.0f} {unit}" if unit == "B" else f"{n_bytes:.1f} {unit}"
        n_bytes /= 1024
    return f"{n_bytes:.1f} GB"


def format_table(rows: Iterable[Sequence[Any]], headers: Sequence[str]) -> str:
    """Plain left-aligned text table."""
    cells = [[str(h) for h in headers]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def format_key_values(values: Dict[str, Any]) -> str:
    width = max((len(k) for k in values), default=0)
    return "\n".join(f"{k.ljust(width)}  {_cell(v)}" for k, v in values.items())


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)
