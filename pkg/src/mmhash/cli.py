"""Command-line interface: ``mmhash <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .codes import read_codes, write_codes
from .config import VARIANTS, TrainConfig, parse_config, validate
from .evaluation import ablation_report, encode_items, mean_average_precision
from .exceptions import ConfigError, DataError, MMHashError, NumericError
from .trainer import load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_min(minimum):
    def conv(text):
        value = int(text)
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {value}")
        return value
    return conv


def _variant(text):
    v = text.replace("-", "_")
    if v not in VARIANTS:
        raise argparse.ArgumentTypeError(f"choose from {', '.join(VARIANTS)}")
    return v


_DEFAULTS = TrainConfig()

# (flag, config field, type, help)
_OVERRIDES = [
    ("--bits", "code_bits", int, "code length k"),
    ("--batch-size", "batch_size", int, "mini-batch size b"),
    ("--lambda", "lam", float, "window fraction; lambda*b must be whole"),
    ("--delta", "delta", float, "softplus weight in the metric loss"),
    ("--mu", "mu", float, "quantization loss weight"),
    ("--lr", "learning_rate", float, "Adam learning rate"),
    ("--epochs", "epochs", int, "training epochs"),
    ("--seed", "seed", int, "RNG seed"),
    ("--vision-dim", "vision_dim", int, "vision width (default: taken from data)"),
    ("--text-dim", "text_dim", int, "text width (default: taken from data)"),
    ("--variant", "variant", _variant, "full, concat-only, vision-only or text-only"),
]


def _add_data_flags(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", type=Path, help="directory holding vision.emb, text.emb, labels.lbl, manifest.txt")
    g.add_argument("--vision", type=Path, help="vision embeddings (.emb)")
    g.add_argument("--text", type=Path, help="text embeddings (.emb)")
    g.add_argument("--labels", type=Path, help="labels (.lbl)")
    g.add_argument("--manifest", type=Path, help="split manifest")


def _add_config_flags(p):
    g = p.add_argument_group("hyperparameters (flag > config file > default)")
    g.add_argument("--config", type=Path, help="key = value config file")
    for flag, name, typ, text in _OVERRIDES:
        default = getattr(_DEFAULTS, name)
        g.add_argument(flag, dest=name, type=typ, default=None, help=f"{text} (default: {default})")


def _data_paths(args, need=("vision", "text", "labels", "manifest")):
    names = {"vision": "vision.emb", "text": "text.emb", "labels": "labels.lbl", "manifest": "manifest.txt"}
    out = {}
    for key in need:
        path = getattr(args, key, None)
        if path is None and getattr(args, "data", None) is not None:
            path = args.data / names[key]
        if path is None:
            raise UsageError(f"--{key} (or --data) is required")
        out[key] = path
    return out


def _load_dataset(args):
    p = _data_paths(args)
    return dataio.EmbeddingDataset.load(p["vision"], p["text"], p["labels"], p["manifest"])


def _resolve_config(args, dataset) -> TrainConfig:
    # dims default to the data's widths; file or flags may still set them
    base = TrainConfig(vision_dim=dataset.vision.shape[1], text_dim=dataset.text.shape[1])
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read config: {exc}") from exc
        base = parse_config(text, base)
    flags = {name: getattr(args, name) for _, name, _, _ in _OVERRIDES if getattr(args, name) is not None}
    cfg = dataclasses.replace(base, **flags)
    validate(cfg)
    if (cfg.vision_dim, cfg.text_dim) != (dataset.vision.shape[1], dataset.text.shape[1]):
        raise DataError(
            f"configured dims ({cfg.vision_dim}, {cfg.text_dim}) do not match data "
            f"({dataset.vision.shape[1]}, {dataset.text.shape[1]})"
        )
    return cfg


def cmd_gen_synth(args):
    ds = dataio.generate_synthetic(args.clusters, args.per_cluster, args.dim, args.noise, args.seed)
    ds.save(args.out_dir)
    print(f"wrote {len(ds)} items to {args.out_dir}", file=sys.stderr)


def cmd_train(args):
    dataset = _load_dataset(args)
    cfg = _resolve_config(args, dataset)
    _, log = train(dataset, cfg, checkpoint=args.out, eval_every=args.eval_every)
    log_path = args.log or args.out.with_name("train_log.csv")
    log.write_csv(log_path)
    last = log.records[-1]
    print(f"epochs={len(log)} loss_total={last.loss_total:.6f} checkpoint={args.out}", file=sys.stderr)


def _select_ids(args, count):
    if args.ids_file is not None:
        ids = np.array(args.ids_file.read_text().split(), dtype=np.int64)
    elif args.split == "all":
        ids = np.arange(count)
    else:
        manifest = dataio.load_manifest(_data_paths(args, ("manifest",))["manifest"], count)
        ids = getattr(manifest, f"{args.split}_ids")
    if ids.size and (ids.min() < 0 or ids.max() >= count):
        raise DataError(f"ids outside [0, {count})")
    return ids


def cmd_encode(args):
    ckpt = load_checkpoint(args.checkpoint)
    paths = _data_paths(args, ("vision", "text"))
    vision = dataio.read_embeddings(paths["vision"])
    text = dataio.read_embeddings(paths["text"])
    if len(vision) != len(text):
        raise DataError(f"{len(vision)} vision rows vs {len(text)} text rows")
    if vision.shape[1] + text.shape[1] != ckpt.params.concat_dim:
        raise DataError(
            f"embedding widths {vision.shape[1]}+{text.shape[1]} != checkpoint width {ckpt.params.concat_dim}"
        )
    ids = _select_ids(args, len(vision))
    index = encode_items(ckpt.params, vision, text, ids, ckpt.variant)
    write_codes(index, args.out)
    print(f"encoded {len(index)} items at {index.k} bits -> {args.out}", file=sys.stderr)


def cmd_search(args):
    db = read_codes(args.codes)
    source = read_codes(args.query_codes) if args.query_codes is not None else db
    if args.query_id is None:
        if args.query_codes is None or len(source) != 1:
            raise UsageError("--query-id is required unless --query-codes holds exactly one code")
        query = source[0]
    else:
        try:
            query = source[source.position_of(args.query_id)]
        except KeyError:
            raise DataError(f"query id {args.query_id} not found") from None
    if query.k != db.k:
        raise DataError(f"query has {query.k} bits, database has {db.k}")
    order, dist = db.ranking(query)
    n = len(order) if args.top_n is None else min(args.top_n, len(order))
    out = ["rank,id,distance"]
    out += [f"{r + 1},{db.item_ids[order[r]]},{dist[r]}" for r in range(n)]
    print("\n".join(out))


def _labels_for(index, labels, what):
    ids = index.item_ids.astype(np.int64)
    if ids.size and ids.max() >= len(labels):
        raise DataError(f"{what} id {ids.max()} has no label row")
    return labels[ids]


def cmd_eval(args):
    queries = read_codes(args.query_codes)
    db = read_codes(args.db_codes)
    if queries.k != db.k:
        raise DataError(f"query codes have {queries.k} bits, database {db.k}")
    q_path = args.query_labels or args.labels
    d_path = args.db_labels or args.labels
    if q_path is None or d_path is None:
        raise UsageError("--labels (or both --query-labels and --db-labels) is required")
    q_lab = _labels_for(queries, dataio.read_labels(q_path), "query")
    d_lab = _labels_for(db, dataio.read_labels(d_path), "database")
    result = mean_average_precision(queries, q_lab, db, d_lab)
    if args.out is not None:
        result.write_csv(args.out)
    print(result.summary())


def cmd_ablate(args):
    dataset = _load_dataset(args)
    cfg = _resolve_config(args, dataset)
    try:
        bits = [int(b) for b in args.bits_list.split(",") if b.strip()]
    except ValueError:
        raise UsageError(f"bad --bits-list {args.bits_list!r}") from None
    if not bits:
        raise UsageError("--bits-list is empty")
    for k in bits:
        validate(dataclasses.replace(cfg, code_bits=k))
    report = ablation_report(dataset, cfg, bits)
    report.write_csv(args.out)
    sys.stdout.write(report.to_csv())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmhash", description="Multi-modal hashing: train, encode, search, evaluate.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen-synth", help="write a synthetic clustered dataset", formatter_class=fmt)
    p.add_argument("--clusters", type=_positive_min(2), default=4)
    p.add_argument("--per-cluster", type=_positive_min(4), default=100)
    p.add_argument("--dim", type=_positive_min(1), default=32)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--log", type=Path, help="training log CSV (default: train_log.csv beside --out)")
    p.add_argument("--eval-every", type=int, default=0, help="log test mAP every N epochs, 0 = off (default: 0)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="binary codes for a set of items")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_data_flags(p)
    p.add_argument("--split", choices=("train", "retrieval", "query", "all"), default="all",
                   help="manifest split to encode (default: all)")
    p.add_argument("--ids-file", type=Path, help="whitespace-separated ids, overrides --split")
    p.add_argument("--out", type=Path, required=True, help="code file")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("search", help="Hamming-rank a code file against one query")
    p.add_argument("--codes", type=Path, required=True, help="database code file")
    p.add_argument("--query-codes", type=Path, help="code file holding the query (default: --codes)")
    p.add_argument("--query-id", type=int, help="id of the query code")
    p.add_argument("--top-n", type=_positive_min(1), default=None, help="rows to print (default: all)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="mAP of query codes against database codes")
    p.add_argument("--query-codes", type=Path, required=True)
    p.add_argument("--db-codes", type=Path, required=True)
    p.add_argument("--labels", type=Path, help="label file indexed by item id")
    p.add_argument("--query-labels", type=Path)
    p.add_argument("--db-labels", type=Path)
    p.add_argument("--out", type=Path, help="per-query CSV (query_id,ap)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train every variant at several code lengths")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--bits-list", default="16,32,64,128", help="comma-separated code lengths (default: 16,32,64,128)")
    p.add_argument("--out", type=Path, required=True, help="grid CSV")
    p.set_defaults(func=cmd_ablate)
    return parser


def _thread_limit():
    raw = os.environ.get("MMHASH_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MMHASH_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("MMHASH_THREADS must be >= 1")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        limit = _thread_limit()
        if limit is None:
            args.func(args)
        else:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=limit):
                args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"mmhash {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"mmhash {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, MMHashError, ArithmeticError) as exc:
        print(f"mmhash {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
