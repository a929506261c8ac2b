#!/usr/bin/env python3
"""
Command-line interface for xmlforest.

    xmlforest train   --data train.txt --out model.xmlf
    xmlforest predict --model model.xmlf --data test.txt --topk 5
    xmlforest eval    --model model.xmlf --data test.txt --at 1,3,5
    xmlforest bench   --data train.txt --test test.txt [--workers P]
    xmlforest worker  --data train.txt --roster roster.txt --rank R --workers P
    xmlforest master  --roster roster.txt --workers P --out model.xmlf

Settings come from defaults, then ``--config`` (key=value file), then
XMLFOREST_* environment variables, then flags.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(including missing files), 3 any other runtime error.
"""

import argparse
import json
import sys
import time
from typing import Any, Dict, List, Optional, Sequence

import psutil

from . import __version__
from .config import Config, load_config_from_env
from .data_io import read_dataset
from .distributed import (
    MASTER_RANK,
    ClusterConfig,
    comm_report,
    predicted_payload_sizes,
    read_roster,
    run_master,
    run_worker,
    simulate_cluster,
)
from .evaluation import DEFAULT_KS, evaluate, write_predictions
from .exceptions import ConfigError, DataFormatError, XmlForestError
from .forest import predict_forest_batch, train_forest
from .storage import ModelStore, model_to_bytes
from .transport import HttpTransport
from .tree import TrainConfig
from .utils import (
    TrainingLogger,
    configure_logging,
    format_bytes,
    format_key_values,
    format_table,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

# flag dest -> config key
_TRAINING_FLAGS = {
    "trees": "trees",
    "k": "k",
    "nleaf": "nleaf",
    "ns": "ns",
    "proj_dx": "proj_dx",
    "proj_dy": "proj_dy",
    "proj_cap": "proj_cap",
    "proj_dx_source": "proj_dx_source",
    "kmeans_iters": "kmeans_iters",
    "seed": "seed",
}
_RUNTIME_FLAGS = {
    "threads": "threads",
    "spawn_depth": "spawn_depth",
    "backend": "backend",
    "retries": "retries",
    "receive_timeout": "receive_timeout",
    "connect_timeout": "connect_timeout",
    "topk": "topk",
    "verbose": "verbose",
}


class UsageError(Exception):
    """Bad command line."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--threads", type=int, help="worker threads/processes")
    common.add_argument("--jsonl", action="store_true", help="also print a JSON line")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", dest="verbose", action="store_const", const=True)
    verbosity.add_argument("--quiet", dest="verbose", action="store_const", const=False)
    return common


def _training_options() -> argparse.ArgumentParser:
    training = _ArgumentParser(add_help=False)
    training.add_argument("--trees", type=int, help="forest size (default 50)")
    training.add_argument("--k", type=int, help="branching factor (default 10)")
    training.add_argument("--nleaf", type=int, help="leaf size threshold (default 10)")
    training.add_argument("--ns", type=int, help="node sample cap (default 20000)")
    training.add_argument("--proj-dx", type=int, help="feature projection dim, 0 = auto")
    training.add_argument("--proj-dy", type=int, help="label projection dim, 0 = auto")
    training.add_argument("--proj-cap", type=int, help="cap for automatic projection dims")
    training.add_argument("--proj-dx-source", choices=["features", "labels"])
    training.add_argument("--kmeans-iters", type=int, help="k-means iteration cap")
    training.add_argument("--seed", type=int, help="master seed")
    training.add_argument("--spawn-depth", type=int, help="tree levels that spawn child tasks")
    training.add_argument("--backend", choices=["loky", "threading"])
    training.add_argument(
        "--check-invariants", action="store_true", help="verify structure during training"
    )
    return training


def _cluster_options() -> argparse.ArgumentParser:
    cluster = _ArgumentParser(add_help=False)
    cluster.add_argument("--roster", required=True, help="file of 'rank host:port' lines")
    cluster.add_argument("--workers", type=int, required=True, help="number of workers P")
    cluster.add_argument("--retries", type=int)
    cluster.add_argument("--receive-timeout", type=float)
    cluster.add_argument("--connect-timeout", type=float)
    return cluster


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="xmlforest", description="Extreme multilabel forest")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_ArgumentParser)
    sub.required = True
    common, training, cluster = _common_options(), _training_options(), _cluster_options()

    p = sub.add_parser("train", parents=[common, training], help="train a forest")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="rank labels for a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--topk", type=int)
    p.add_argument("--out", help="write predictions here instead of stdout")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="precision@k of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--at", default=",".join(str(k) for k in DEFAULT_KS))
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", parents=[common, training], help="train, evaluate, report")
    p.add_argument("--data", required=True, help="training set")
    p.add_argument("--test", required=True, help="test set")
    p.add_argument("--at", default=",".join(str(k) for k in DEFAULT_KS))
    p.add_argument("--workers", type=int, default=0, help="simulate P workers (0 = off)")
    p.add_argument("--transport", choices=["loopback", "http"], default="loopback")
    p.add_argument("--out", help="also save the model")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("worker", parents=[common, training, cluster], help="train a tree range")
    p.add_argument("--data", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.set_defaults(handler=cmd_worker)

    p = sub.add_parser("master", parents=[common, training, cluster], help="gather a forest")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_master)
    return parser


def load_settings(args: argparse.Namespace) -> Config:
    """defaults < --config file < environment < flags."""
    config = Config(getattr(args, "config", None))
    config.update(load_config_from_env())
    for flags in (_TRAINING_FLAGS, _RUNTIME_FLAGS):
        for dest, key in flags.items():
            value = getattr(args, dest, None)
            if value is not None:
                config.set(key, value)
    return config


def _parse_ks(text: str) -> List[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"--at expects comma-separated integers, got {text!r}") from None
    if not ks or min(ks) <= 0:
        raise UsageError(f"--at values must be positive, got {text!r}")
    return ks


def _emit(values: Dict[str, Any], jsonl: bool) -> None:
    print(format_key_values(values))
    if jsonl:
        print(json.dumps(values, sort_keys=True))


def _resolved_train_config(config: Config, dataset) -> TrainConfig:
    return config.to_train_config().resolved_for(
        dataset.d_x, dataset.d_y, config.projection_cap, config.dx_source
    )


def _setup(args: argparse.Namespace):
    config = load_settings(args)
    configure_logging(config.verbose)
    return config, TrainingLogger(config.verbose)


def cmd_train(args: argparse.Namespace) -> int:
    config, logger = _setup(args)
    dataset = read_dataset(args.data)
    cfg = _resolved_train_config(config, dataset)
    started = time.perf_counter()
    model, stats, reports = train_forest(
        dataset,
        cfg,
        threads=config.threads,
        backend=config.backend,
        spawn_depth=config.get("spawn_depth"),
        check_invariants=args.check_invariants,
        logger=logger,
    )
    seconds = time.perf_counter() - started
    size = ModelStore().save(model, args.out)
    logger.log_model_saved(args.out, size)
    _emit(
        {
            "command": "train",
            "trees": cfg.n_trees,
            "nodes": sum(s.node_count for s in stats),
            "leaves": sum(s.leaf_count for s in stats),
            "train_seconds": round(seconds, 3),
            "model_bytes": size,
            "mean_parallelism": round(sum(r.parallelism for r in reports) / len(reports), 3),
        },
        args.jsonl,
    )
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    config, _ = _setup(args)
    model = ModelStore().load(args.model)
    dataset = read_dataset(args.data)
    rankings = predict_forest_batch(model, dataset.features, config.top_k, config.threads)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            write_predictions(rankings, f)
    else:
        write_predictions(rankings, sys.stdout)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ks = _parse_ks(args.at)
    config, logger = _setup(args)
    model = ModelStore().load(args.model)
    dataset = read_dataset(args.data)
    report = evaluate(model, dataset, ks, threads=config.threads)
    logger.log_eval_done(report.n_test, report.predict_seconds_total)
    precisions = sorted(report.p_at.items())
    print(format_table([(f"P@{k}", f"{100 * v:.2f}") for k, v in precisions], ["metric", "%"]))
    if args.jsonl:
        values: Dict[str, Any] = {"command": "eval", "n_test": report.n_test}
        values.update({f"P@{k}": round(100 * v, 2) for k, v in precisions})
        print(json.dumps(values, sort_keys=True))
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    ks = _parse_ks(args.at)
    config, logger = _setup(args)
    dataset = read_dataset(args.data)
    test = read_dataset(args.test)
    cfg = _resolved_train_config(config, dataset)

    started = time.perf_counter()
    values: Dict[str, Any] = {"command": "bench", "workers": args.workers}
    if args.workers > 0:
        threads_per_worker = max(1, config.threads // args.workers)
        run = simulate_cluster(
            dataset,
            cfg,
            args.workers,
            transport=args.transport,
            worker_threads=threads_per_worker,
            retries=config.get("retries"),
            receive_timeout=config.get("receive_timeout"),
            logger=logger,
        )
        model = run.model
        values.update({f"comm_{k}": v for k, v in run.report.to_dict().items()})
    else:
        model, _, reports = train_forest(
            dataset,
            cfg,
            threads=config.threads,
            backend=config.backend,
            spawn_depth=config.get("spawn_depth"),
            check_invariants=args.check_invariants,
            logger=logger,
        )
        values["mean_parallelism"] = round(sum(r.parallelism for r in reports) / len(reports), 3)
    train_seconds = time.perf_counter() - started

    model_bytes = len(model_to_bytes(model))
    if args.out:
        ModelStore().save(model, args.out)
    report = evaluate(model, test, ks, config.threads, train_seconds, model_bytes)
    values.update(
        {
            "train_seconds": round(train_seconds, 3),
            "test_ms_per_sample": round(report.predict_ms_per_sample, 4),
            "test_seconds_total": round(report.predict_seconds_total, 3),
            "model_bytes": model_bytes,
            "model_size": format_bytes(model_bytes),
            "rss_mb": round(psutil.Process().memory_info().rss / 2**20, 1),
        }
    )
    values.update({f"P@{k}": round(100 * v, 2) for k, v in sorted(report.p_at.items())})
    _emit(values, args.jsonl)
    return EXIT_OK


def _cluster(args: argparse.Namespace, config: Config, role: str, rank: int) -> ClusterConfig:
    return ClusterConfig(
        workers=args.workers,
        role=role,
        rank=rank,
        roster=read_roster(args.roster),
        retries=config.get("retries"),
        receive_timeout=config.get("receive_timeout"),
    )


def cmd_worker(args: argparse.Namespace) -> int:
    config, logger = _setup(args)
    cluster = _cluster(args, config, "worker", args.rank)
    if MASTER_RANK not in cluster.roster:
        raise ConfigError(f"roster {args.roster} has no rank {MASTER_RANK} entry")
    dataset = read_dataset(args.data)
    cfg = _resolved_train_config(config, dataset)
    transport = HttpTransport(
        args.rank,
        cluster.roster,
        connect_timeout=config.get("connect_timeout"),
        read_timeout=config.get("receive_timeout"),
    )
    with transport:
        stats = run_worker(
            dataset, cfg, cluster, transport, config.threads, config.backend, logger
        )
    _emit(
        {
            "command": "worker",
            "rank": args.rank,
            "trees": len(cluster.tree_range(cfg.n_trees)),
            "messages_sent": stats.total_messages_sent,
            "bytes_sent": stats.total_bytes_sent,
            "attempts": stats.attempts,
            "train_seconds": round(stats.phase_seconds.get("train", 0.0), 3),
        },
        args.jsonl,
    )
    return EXIT_OK


def cmd_master(args: argparse.Namespace) -> int:
    config, logger = _setup(args)
    cluster = _cluster(args, config, "master", MASTER_RANK)
    if MASTER_RANK not in cluster.roster:
        raise ConfigError(f"roster {args.roster} has no rank {MASTER_RANK} entry")
    transport = HttpTransport(
        MASTER_RANK,
        cluster.roster,
        listen=cluster.roster[MASTER_RANK],
        connect_timeout=config.get("connect_timeout"),
    )
    with transport:
        model, stats = run_master(config.to_train_config(), cluster, transport, logger)
    predicted = predicted_payload_sizes(model, cluster.workers)
    report = comm_report(stats, cluster.workers, predicted, model)
    size = ModelStore().save(model, args.out)
    logger.log_model_saved(args.out, size)
    values: Dict[str, Any] = {"command": "master"}
    values.update(report.to_dict())
    _emit(values, args.jsonl)
    return EXIT_OK


def _fail(message: str, code: int) -> int:
    print(f"Error: {message}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except SystemExit as e:
        # --help / --version
        return e.code if isinstance(e.code, int) else EXIT_OK
    except (UsageError, ConfigError) as e:
        return _fail(str(e), EXIT_USAGE)
    except DataFormatError as e:
        return _fail(str(e), EXIT_DATA)
    except OSError as e:
        return _fail(f"{e.filename or ''}: {e.strerror or e}", EXIT_DATA)
    except XmlForestError as e:
        return _fail(str(e), EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
