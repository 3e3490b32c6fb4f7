"""Command-line entry point: prepare, train, eval-offline, eval-online, bench."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import AlsConfig, BprConfig, als_sweep, als_train, bpr_train
from .eals import TrainConfig, sweep, train
from .evaluation import DEFAULT_CUTOFF, evaluate_offline, evaluate_online
from .ingest import InteractionDataset, ParseError, build_dataset, kcore_filter, load_interactions, split_chronological, split_leave_one_out
from .model import FactorModel, init_model
from .online import DEFAULT_W_NEW, OnlineConfig
from .synthetic import synthetic_interactions
from .weighting import DEFAULT_ALPHA, DEFAULT_C0, popularity_weights

log = logging.getLogger("ealsrec")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env_int(name: str, default: int) -> int:
    try:
        return int(os.environ.get(name, default))
    except ValueError:
        raise UsageError(f"{name} must be an integer") from None


def fingerprint(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: str | Path, command: str, config: dict, dataset: str | Path | None, seed: int) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "dataset_sha256": fingerprint(dataset) if dataset else None,
        "seed": seed,
        "version": __version__,
    }
    path = Path(f"{out}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _read_manifest(model_path: str | Path) -> dict:
    path = Path(f"{model_path}.manifest.json")
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8")).get("config", {})
    return {}


def _split(data: InteractionDataset, how: str, test_fraction: float):
    if how == "loo":
        return split_leave_one_out(data)
    if how == "chrono":
        return split_chronological(data, test_fraction)
    return None


def cmd_prepare(args) -> int:
    raw = load_interactions(args.input, args.format)
    filtered = kcore_filter(raw, args.kcore)
    data = build_dataset(filtered)
    data.save(args.output)
    write_manifest(args.output, "prepare", {"kcore": args.kcore, "format": args.format}, args.input, 0)
    log.info("wrote %s (M=%d N=%d nnz=%d)", args.output, data.n_users, data.n_items, data.nnz)
    if data.nnz == 0:
        log.warning("k-core filter at %d removed every interaction", args.kcore)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_train(args) -> int:
    data = InteractionDataset.load(args.dataset)
    split = _split(data, args.split, args.test_fraction)
    train_data = split.train if split else data
    config = {
        "learner": args.learner, "factors": args.factors, "reg": args.reg, "c0": args.c0,
        "alpha": args.alpha, "iters": args.iters, "tol": args.tol, "seed": args.seed,
        "threads": args.threads, "split": args.split, "test_fraction": args.test_fraction,
    }
    if args.learner == "eals":
        weights = popularity_weights(train_data, args.c0, args.alpha)
        model, trace = train(train_data, weights, TrainConfig(
            K=args.factors, lam=args.reg, max_iters=args.iters, rel_tol=args.tol,
            seed=args.seed, threads=args.threads))
        if args.weights_out:
            weights.save(args.weights_out)
    elif args.learner == "als":
        w0 = args.w0 if args.w0 is not None else args.c0 / train_data.n_items
        config["w0"] = w0
        model, trace = als_train(train_data, AlsConfig(
            K=args.factors, lam=args.reg, w0=w0, max_iters=args.iters, rel_tol=args.tol,
            seed=args.seed, threads=args.threads))
    else:
        config.update(lr=args.lr, epochs=args.epochs)
        model, trace = bpr_train(train_data, BprConfig(
            K=args.factors, lam=args.reg, learning_rate=args.lr, epochs=args.epochs, seed=args.seed))
    model.save(args.model_out)
    trace.save(args.trace or f"{args.model_out}.trace.jsonl")
    write_manifest(args.model_out, "train", config, args.dataset, args.seed)
    log.info("trained %s: %d records, final objective %.6g", args.learner, len(trace.records),
             trace.records[-1]["objective"] if trace.records else float("nan"))
    return EXIT_OK


def _load_pair(args):
    model = FactorModel.load(args.model)
    data = InteractionDataset.load(args.dataset)
    return model, data


def _check_dims(model: FactorModel, train_data: InteractionDataset) -> None:
    if (model.n_users, model.n_items) != (train_data.n_users, train_data.n_items):
        raise ValidationError(
            f"model is {model.n_users}x{model.n_items} but the training split is "
            f"{train_data.n_users}x{train_data.n_items}")


def cmd_eval_offline(args) -> int:
    model, data = _load_pair(args)
    split = _split(data, args.split, args.test_fraction)
    _check_dims(model, split.train)
    report = evaluate_offline(model, split, args.cutoff, args.exclude_train)
    out = args.out or f"{args.model}.offline.jsonl"
    report.save(out)
    write_manifest(out, "eval-offline", {"cutoff": args.cutoff, "split": args.split,
                                         "exclude_train": args.exclude_train}, args.dataset, 0)
    print(json.dumps(report.aggregate()))
    return EXIT_OK


def cmd_eval_online(args) -> int:
    model, data = _load_pair(args)
    split = split_chronological(data, args.test_fraction)
    _check_dims(model, split.train)
    saved = _read_manifest(args.model)
    c0 = args.c0 if args.c0 is not None else saved.get("c0", DEFAULT_C0)
    alpha = args.alpha if args.alpha is not None else saved.get("alpha", DEFAULT_ALPHA)
    reg = args.reg if args.reg is not None else saved.get("reg", 0.01)
    weights = popularity_weights(split.train, c0, alpha)
    model.refresh_prediction_cache(split.train)
    cfg = OnlineConfig(w_new=args.w_new, online_iters=args.online_iters, seed=args.seed, lam=reg)
    report = evaluate_online(model, split.train, weights, split.test, cfg, args.cutoff)
    out = args.out or f"{args.model}.online.jsonl"
    report.save(out)
    Path(args.breakdown or f"{out}.breakdown.csv").write_text(report.breakdown_csv(), encoding="utf-8")
    write_manifest(out, "eval-online", {"cutoff": args.cutoff, "w_new": args.w_new,
                                        "online_iters": args.online_iters, "c0": c0, "alpha": alpha,
                                        "reg": reg, "test_fraction": args.test_fraction}, args.dataset, args.seed)
    print(json.dumps(report.aggregate()))
    return EXIT_OK


def bench(factors: list[int], n_users: int, n_items: int, nnz: int, seed: int = 0,
          c0: float = DEFAULT_C0, alpha: float = DEFAULT_ALPHA, lam: float = 0.01) -> list[dict]:
    """Seconds for one eALS sweep and one ALS sweep per factor count."""
    data = build_dataset(synthetic_interactions(n_users, n_items, nnz, seed))
    weights = popularity_weights(data, c0, alpha)
    w0 = c0 / data.n_items
    # compile kernels outside the timed region
    tiny = build_dataset([("a", "x", 0), ("b", "y", 1)])
    tw = popularity_weights(tiny, 1.0, alpha)
    sweep(init_model(2, 2, 2, 0, weights=tw, train=tiny), tiny, tw, lam)
    als_sweep(init_model(2, 2, 2, 0), tiny, 0.5, lam)
    rows = []
    for K in factors:
        model = init_model(data.n_users, data.n_items, K, seed, weights=weights, train=data)
        t0 = time.perf_counter()
        sweep(model, data, weights, lam)
        rows.append({"learner": "eals", "K": K, "seconds": time.perf_counter() - t0})
        model = init_model(data.n_users, data.n_items, K, seed)
        t0 = time.perf_counter()
        als_sweep(model, data, w0, lam)
        rows.append({"learner": "als", "K": K, "seconds": time.perf_counter() - t0})
    return rows


def cmd_bench(args) -> int:
    try:
        factors = [int(x) for x in args.factors_list.split(",") if x]
    except ValueError:
        raise UsageError("--factors-list must be comma-separated integers") from None
    m, n, nnz = args.synthetic
    rows = bench(factors, m, n, nnz, args.seed)
    text = "learner,K,seconds\n" + "".join(f"{r['learner']},{r['K']},{r['seconds']:.6f}\n" for r in rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        write_manifest(args.out, "bench", {"factors": factors, "synthetic": [m, n, nnz]}, None, args.seed)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    threads = _env_int("EALS_THREADS", 1)
    seed = _env_int("EALS_SEED", 0)
    p = _Parser(prog="ealsrec", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", help="load, k-core filter and index an interaction log")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--kcore", type=int, default=10)
    s.add_argument("--format", choices=["tsv", "csv"], default="tsv")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="fit a model on a dataset snapshot")
    s.add_argument("dataset")
    s.add_argument("model_out")
    s.add_argument("--learner", choices=["eals", "als", "bpr"], default="eals")
    s.add_argument("--factors", type=int, default=128)
    s.add_argument("--reg", type=float, default=0.01)
    s.add_argument("--c0", type=float, default=DEFAULT_C0)
    s.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    s.add_argument("--w0", type=float, default=None, help="ALS missing weight (default c0/N)")
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--threads", type=int, default=threads)
    s.add_argument("--split", choices=["none", "loo", "chrono"], default="loo")
    s.add_argument("--test-fraction", type=float, default=0.1)
    s.add_argument("--trace", default=None)
    s.add_argument("--weights-out", default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval-offline", help="score held-out interactions against a fixed model")
    s.add_argument("model")
    s.add_argument("dataset")
    s.add_argument("--cutoff", type=int, default=DEFAULT_CUTOFF)
    s.add_argument("--split", choices=["loo", "chrono"], default="loo")
    s.add_argument("--test-fraction", type=float, default=0.1)
    s.add_argument("--exclude-train", action="store_true")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_eval_offline)

    s = sub.add_parser("eval-online", help="recommend-then-update over the chronological test stream")
    s.add_argument("model")
    s.add_argument("dataset")
    s.add_argument("--w-new", type=float, default=DEFAULT_W_NEW)
    s.add_argument("--online-iters", type=int, default=1)
    s.add_argument("--cutoff", type=int, default=DEFAULT_CUTOFF)
    s.add_argument("--test-fraction", type=float, default=0.1)
    s.add_argument("--c0", type=float, default=None)
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--reg", type=float, default=None)
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--out", default=None)
    s.add_argument("--breakdown", default=None, help="CSV of metrics by history length")
    s.set_defaults(func=cmd_eval_online)

    s = sub.add_parser("bench", help="time one eALS and one ALS sweep per factor count")
    s.add_argument("--factors-list", default="32,64,128")
    s.add_argument("--synthetic", nargs=3, type=int, metavar=("M", "N", "NNZ"), default=[5000, 5000, 100000])
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        parser = build_parser()
    except UsageError as exc:
        print(f"ealsrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ealsrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ealsrec: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ParseError, ValueError, ArithmeticError) as exc:
        print(f"ealsrec: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
