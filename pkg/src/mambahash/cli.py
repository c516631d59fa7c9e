"""Command-line entry point: ``mambahash <subcommand> ...``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .data import load_dataset, make_synthetic, to_float
from .errors import MambaHashError
from .network import MambaHash
from .retrieval import (
    binarize_pack,
    mean_average_precision,
    precision_at_k,
    read_codes,
    search_topk,
    write_codes,
)
from .selfcheck import run_selfcheck
from .trainer import train

log = logging.getLogger("mambahash")


class RunManifest:
    """Ordered ``key=value`` records describing one command invocation."""

    def __init__(self, command: str, seed: int | None = None):
        self.command = command
        self.seed = seed
        self.config: dict[str, object] = {}
        self.paths: dict[str, str] = {}
        self.metrics: dict[str, object] = {}
        self._start = time.perf_counter()

    def render(self) -> str:
        lines = [f"command={self.command}"]
        if self.seed is not None:
            lines.append(f"seed={self.seed}")
        lines += [f"config.{k}={_fmt(v)}" for k, v in self.config.items()]
        lines += [f"path.{k}={v}" for k, v in self.paths.items()]
        lines.append(f"duration_s={time.perf_counter() - self._start:.3f}")
        lines += [f"{k}={_fmt(v)}" for k, v in self.metrics.items()]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.render())


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@contextlib.contextmanager
def _thread_limit(deterministic: bool):
    cap = os.environ.get("MBHH_THREADS")
    limit = 1 if deterministic else (int(cap) if cap else None)
    if limit is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=limit):
        yield


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth_data(args) -> int:
    ds = make_synthetic(
        args.out,
        n_classes=args.classes,
        train_per_class=args.train_per_class,
        query_per_class=args.query_per_class,
        database_per_class=args.db_per_class,
        side=args.side,
        seed=args.seed,
    )
    print(f"wrote {len(ds.records)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_config(
        args.config,
        preset=args.preset,
        model__hash_bits=args.bits,
        train__epochs=args.epochs,
        train__learning_rate=args.lr,
        train__batch_size=args.batch_size,
        train__seed=args.seed,
    )
    manifest = RunManifest("train", train_cfg.seed)
    manifest.config.update({f"model.{k}": v for k, v in model_cfg.to_dict().items()})
    manifest.config.update({f"train.{k}": v for k, v in train_cfg.to_dict().items()})
    manifest.paths.update(data=str(args.data), out=str(args.out))
    ds = load_dataset(args.data)
    images, labels = ds.load("train")
    model = MambaHash(model_cfg, seed=train_cfg.seed)

    def report(epoch, records):
        mean = float(np.mean([r.total for r in records]))
        manifest.metrics[f"epoch.{epoch}.loss"] = mean
        manifest.metrics[f"epoch.{epoch}.quant"] = float(np.mean([r.quant_term for r in records]))
        if not args.quiet:
            print(f"epoch {epoch} loss={mean:.6f}", flush=True)

    history = train(model, images, labels, train_cfg, on_epoch=report)
    save_checkpoint(model, args.out)
    for e, records in enumerate(history):
        for b, r in enumerate(records):
            manifest.metrics[f"history.{e}.{b}.total"] = r.total
    codes = binarize_pack(model.encode(to_float(images)), labels)
    manifest.metrics["train_map"] = mean_average_precision(codes, codes)
    manifest.metrics["params"] = model.num_parameters()
    manifest.write(args.metrics_out or f"{args.out}.manifest")
    print(f"train_map={manifest.metrics['train_map']:.6f}")
    return 0


def cmd_encode(args) -> int:
    if not Path(args.ckpt).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.ckpt}")
    model = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    images, labels = ds.load(args.split)
    codes = binarize_pack(model.encode(to_float(images)), labels)
    write_codes(args.out, codes)
    manifest = RunManifest("encode")
    manifest.paths.update(ckpt=str(args.ckpt), data=str(args.data), out=str(args.out))
    manifest.metrics.update(count=len(codes), bits=codes.bits)
    if args.metrics_out:
        manifest.write(args.metrics_out)
    print(f"encoded {len(codes)} {args.split} images -> {args.out}")
    return 0


def cmd_index_check(args) -> int:
    codes = read_codes(args.codes)
    print(f"ok bits={codes.bits} count={len(codes)} labelled={bool(codes.labels)}")
    return 0


def cmd_query(args) -> int:
    queries, db = read_codes(args.query), read_codes(args.db)
    if not 0 <= args.index < len(queries):
        print(f"error: query index {args.index} out of range (0..{len(queries) - 1})", file=sys.stderr)
        return 1
    res = search_topk(queries[args.index], db, args.topk)
    for rank, (i, d) in enumerate(zip(res.indices, res.distances), start=1):
        print(f"{rank}\t{i}\t{d}")
    if res.truncated:
        print(f"note: topk {args.topk} exceeds database size {len(db)}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    queries, db = read_codes(args.query), read_codes(args.db)
    manifest = RunManifest("eval")
    manifest.paths.update(query=str(args.query), db=str(args.db))
    topk = args.topk or None
    manifest.metrics["map"] = mean_average_precision(queries, db, topk)
    print(f"map={manifest.metrics['map']:.6f}")
    if args.precision_k:
        manifest.metrics[f"precision@{args.precision_k}"] = precision_at_k(queries, db, args.precision_k)
        print(f"precision@{args.precision_k}={manifest.metrics[f'precision@{args.precision_k}']:.6f}")
    if args.metrics_out:
        manifest.write(args.metrics_out)
    return 0


def cmd_selfcheck(args) -> int:
    results = run_selfcheck(args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mambahash", description="Visual state-space deep hashing.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, seed_default=0):
        if seed:
            sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--deterministic", action="store_true", help="force single-threaded numerics")
        sp.add_argument("--metrics-out", type=Path, default=None)

    sp = sub.add_parser("synth-data", help="write the labelled synthetic dataset")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--classes", type=int, default=2)
    sp.add_argument("--train-per-class", type=int, default=32)
    sp.add_argument("--query-per-class", type=int, default=8)
    sp.add_argument("--db-per-class", type=int, default=32)
    sp.add_argument("--side", type=int, default=32)
    common(sp)
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("train", help="train a model and write a checkpoint")
    sp.add_argument("--config", type=Path, default=None)
    sp.add_argument("--preset", choices=("tiny", "full"), default="tiny")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--bits", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--quiet", action="store_true")
    common(sp, seed_default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("encode", help="encode a dataset split into a .mbhc code file")
    sp.add_argument("--ckpt", type=Path, required=True)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--split", choices=("train", "query", "database"), default="database")
    sp.add_argument("--out", type=Path, required=True)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("index-check", help="validate a .mbhc code file")
    sp.add_argument("codes", type=Path)
    sp.set_defaults(func=cmd_index_check)

    sp = sub.add_parser("query", help="list the top-k database codes for one query")
    sp.add_argument("--query", type=Path, required=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--db", type=Path, required=True)
    sp.add_argument("--topk", type=int, default=10)
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("eval", help="MAP@k (and precision@k) of query codes against a database")
    sp.add_argument("--query", type=Path, required=True)
    sp.add_argument("--db", type=Path, required=True)
    sp.add_argument("--topk", type=int, default=0, help="0 ranks the whole database")
    sp.add_argument("--precision-k", type=int, default=0)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("selfcheck", help="run the built-in property checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_selfcheck)
    return p


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(getattr(args, "deterministic", False)):
            return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename}" if exc.filename else f"error: {exc}",
              file=sys.stderr)
        return 1
    except (MambaHashError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
