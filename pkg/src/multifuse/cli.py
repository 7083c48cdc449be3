"""Command-line entry point: ``multifuse {build,query,eval,synth,bench}``.

Machine-readable output goes to stdout as JSON lines, diagnostics to
stderr. Exit codes: 0 success, 1 usage, 2 input/validation, 3 internal.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .catalog import Catalog, CatalogConfig, ingest_items, labels_from_items
from .engine import Query, SearchEngine
from .errors import ConfigError, IncompatibleQueryError, MultifuseError, SpecError
from .evaluation import (
    SyntheticSpec,
    generate_synthetic_catalog,
    item_queries,
    measure_latency,
    percentiles_ns,
    read_truth,
    run_mode_comparison,
    write_synthetic,
)
from .fusion import FusionMode
from .hnsw import HnswParams
from .text import POSTNORM, PRENORM, SubwordEmbedderConfig

log = logging.getLogger("multifuse")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3

# defaults for options that may also come from --config
DEFAULTS = {
    "mode": FusionMode.TEXTVEC.value,
    "weight": 0.5,
    "composer": PRENORM,
    "image_dim": None,
    "labels": None,
    "table": None,
    "stopwords": None,
    "text_dim": 110,
    "embed_seed": 0,
    "include_description": False,
    "strict": False,
    "M": 16,
    "ef_construction": 200,
    "ef_search": 100,
    "seed": 0,
    "threads": 1,
}


_COMPOSER_ALIASES = {PRENORM: PRENORM, POSTNORM: POSTNORM, "eq1": PRENORM, "eq2": POSTNORM}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def _add_catalog_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("catalog recipe (flags > --config file > defaults)")
    g.add_argument("--config", help="JSON file with default values for these options")
    g.add_argument("--mode", choices=[m.value for m in FusionMode], default=None)
    g.add_argument("--weight", type=float, default=None, help="auxiliary block weight w")
    g.add_argument("--composer", choices=sorted(_COMPOSER_ALIASES), default=None,
                   help="prenorm (alias eq1): mean of unit word vectors; "
                        "postnorm (alias eq2): unit-normalized mean of raw word vectors")
    g.add_argument("--image-dim", type=int, default=None, help="defaults to the first record's length")
    g.add_argument("--labels", help="label space file, one label per line (default: labels in the catalog)")
    g.add_argument("--table", help="word2vec text embedding table")
    g.add_argument("--stopwords", help="stopword file (default: bundled English list)")
    g.add_argument("--text-dim", type=int, default=None)
    g.add_argument("--embed-seed", type=int, default=None)
    g.add_argument("--include-description", action="store_const", const=True, default=None)
    g.add_argument("--strict", action="store_const", const=True, default=None,
                   help="abort on the first invalid record instead of skipping it")
    g.add_argument("--M", type=int, default=None)
    g.add_argument("--ef-construction", type=int, default=None)
    g.add_argument("--ef-search", type=int, default=None)
    g.add_argument("--seed", type=int, default=None, help="HNSW level RNG seed")
    g.add_argument("--threads", type=int, default=None, help="worker cap for per-record fusion")


def _resolve(args) -> dict:
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            file_opts = json.loads(Path(args.config).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        unknown = set(file_opts) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown keys in config file: {sorted(unknown)}")
        opts.update(file_opts)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def _first_image_dim(path) -> int:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    return len(json.loads(line)["image_vector"])
                except (ValueError, KeyError, TypeError):
                    continue
    raise ConfigError(f"cannot infer image dim from {path}; pass --image-dim")


def _catalog_config(opts: dict, items=None) -> CatalogConfig:
    if opts["weight"] < 0:
        raise UsageError("--weight must be >= 0")
    if opts["composer"] not in _COMPOSER_ALIASES:
        raise UsageError(f"unknown composer {opts['composer']!r}; choose from {sorted(_COMPOSER_ALIASES)}")
    labels = None
    if opts["labels"]:
        labels = tuple(l.strip() for l in Path(opts["labels"]).read_text("utf-8").splitlines() if l.strip())
    elif items is not None:
        labels = labels_from_items(items) or None
    embedder = None
    if not opts["table"] or opts["mode"] == FusionMode.TEXTVEC.value:
        embedder = SubwordEmbedderConfig(dim=opts["text_dim"], seed=opts["embed_seed"])
    return CatalogConfig(
        image_dim=opts["image_dim"],
        mode=FusionMode(opts["mode"]),
        weight=opts["weight"],
        composer=_COMPOSER_ALIASES[opts["composer"]],
        embedder=embedder,
        table_path=opts["table"],
        stopwords_path=opts["stopwords"],
        labels=labels,
        hnsw=HnswParams(M=opts["M"], ef_construction=opts["ef_construction"],
                        ef_search=opts["ef_search"], rng_seed=opts["seed"]),
        include_description=bool(opts["include_description"]),
    )


def _load_items(catalog_path, opts):
    if opts["image_dim"] is None:
        opts["image_dim"] = _first_image_dim(catalog_path)
    result = ingest_items(catalog_path, opts["image_dim"], strict=bool(opts["strict"]))
    for lineno, msg in result.problems:
        print(f"warning: line {lineno}: {msg}", file=sys.stderr)
    return result


def cmd_build(args) -> int:
    opts = _resolve(args)
    result = _load_items(args.catalog, opts)
    cfg = _catalog_config(opts, result.records)
    engine = SearchEngine(Catalog.build(result.records, cfg, workers=opts["threads"]))
    engine.save(args.out)
    stats = engine.catalog.stats
    out = {
        "event": "build",
        "bundle": str(args.out),
        "mode": cfg.mode.value,
        "dim": engine.index.dim,
        "nodes": stats.nodes,
        "skipped": len(result.problems),
        "levels": {str(k): v for k, v in stats.level_histogram.items()},
    }
    if not args.no_timing:
        out["seconds"] = round(stats.seconds, 6)
    _emit(out)
    return EXIT_OK


def _read_query(source: str) -> dict:
    text = sys.stdin.read() if source == "-" else Path(source).read_text("utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise IncompatibleQueryError(f"malformed query JSON: {exc}") from None


def cmd_query(args) -> int:
    engine = SearchEngine.load(args.bundle)
    defaults = {"k": args.k}
    if args.ef is not None:
        defaults["ef"] = args.ef
    if args.weight is not None:
        defaults["weight"] = args.weight
    query = Query.from_json(_read_query(args.query), **defaults)
    if args.sequential:
        resp = engine.sequential_search(query, args.sequential)
    else:
        resp = engine.one_shot_search(query)
    for rank, hit in enumerate(resp.hits, start=1):
        _emit({"rank": rank, "id": hit.id, "similarity": hit.similarity})
    summary = {"event": "query", "mode": resp.mode, "aux_degenerate": resp.aux_degenerate, "hits": len(resp.hits)}
    if not args.no_timing:
        summary["timing_ns"] = resp.timing
    _emit(summary)
    return EXIT_OK


def cmd_eval(args) -> int:
    modes = [m for m in (args.modes or "").split(",") if m]
    if not modes:
        raise UsageError("--modes needs at least one fusion mode")
    valid = {m.value for m in FusionMode}
    bad = [m for m in modes if m not in valid]
    if bad:
        raise UsageError(f"unknown modes {bad}; choose from {sorted(valid)}")
    opts = _resolve(args)
    result = _load_items(args.catalog, opts)
    truth = read_truth(args.truth)
    missing = [it.id for it in result.records if it.id not in truth]
    if missing:
        raise ConfigError(f"truth file has no class for {len(missing)} items, e.g. {missing[0]!r}")
    cfg = _catalog_config({**opts, "mode": modes[0]}, result.records)
    report = run_mode_comparison(
        result.records, truth, cfg, modes, k=args.k, n_queries=args.queries, query_seed=args.query_seed,
        shortlist_size=args.shortlist or None, timing=not args.no_timing,
        latency_queries=args.latency_queries, index_dir=args.index_dir, per_query_csv=args.out_csv,
    )
    if args.out_json:
        Path(args.out_json).write_text(report.to_json(), "utf-8")
    if args.out_text:
        Path(args.out_text).write_text(report.to_text(), "utf-8")
    sys.stderr.write(report.to_text())
    for row in report.rows:
        _emit({"event": "eval", **{k: v for k, v in vars(row).items() if v is not None}})
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_items=args.items, n_classes=args.classes, image_dim=args.image_dim, text_dim=args.text_dim,
        image_noise=args.image_noise, text_noise=args.text_noise, confuser_fraction=args.confusers,
        label_noise=args.label_noise, seed=args.seed,
    )
    cat = generate_synthetic_catalog(spec)
    write_synthetic(cat, args.out, args.truth)
    _emit({"event": "synth", "items": len(cat.items), "classes": spec.n_classes,
           "confuser_pairs": len(cat.confuser_pairs), "catalog": str(args.out), "truth": str(args.truth)})
    return EXIT_OK


def cmd_bench(args) -> int:
    engine = SearchEngine.load(args.bundle)
    cfg = engine.config
    result = ingest_items(args.catalog, cfg.image_dim)
    truth = {it.id: it.class_label or "" for it in result.records}
    lqs = item_queries(result.records, truth, args.queries, args.query_seed, cfg.include_description)
    queries = [replace(lq.query, k=args.k) for lq in lqs]
    rows = {"one_shot": measure_latency(engine.one_shot_search, queries)}
    if args.shortlist and engine.mode is not FusionMode.IMAGE_ONLY:
        engine.prepare_baseline()
        rows["sequential"] = measure_latency(lambda q: engine.sequential_search(q, args.shortlist), queries)
    for name, samples in rows.items():
        _emit({"event": "bench", "method": name, "queries": len(samples), **percentiles_ns(samples)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multifuse", description="One-shot multimodal fused-vector search.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="ingest a catalog, fuse, index and save a bundle")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True, help="bundle directory")
    p.add_argument("--no-timing", action="store_true")
    _add_catalog_options(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="search a bundle with one JSON query")
    p.add_argument("--bundle", required=True)
    p.add_argument("--query", default="-", help="query JSON file, '-' for stdin")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ef", type=int)
    p.add_argument("--weight", type=float)
    p.add_argument("--sequential", type=int, metavar="SHORTLIST",
                   help="use the sequential shortlist+rerank baseline instead")
    p.add_argument("--no-timing", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="compare fusion modes on a labeled catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--truth", required=True, help="JSONL of {id, class}")
    p.add_argument("--modes", default="image-only,onehot-fused,textvec-fused")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--query-seed", type=int, default=0)
    p.add_argument("--shortlist", type=int, default=500, help="0 disables the sequential baseline row")
    p.add_argument("--latency-queries", type=int, default=1000)
    p.add_argument("--out-json")
    p.add_argument("--out-text")
    p.add_argument("--out-csv")
    p.add_argument("--index-dir", help="also write each mode's index file here")
    p.add_argument("--no-timing", action="store_true")
    _add_catalog_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic labeled catalog")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--items", type=int, default=1000)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--image-dim", type=int, default=64)
    p.add_argument("--text-dim", type=int, default=110)
    p.add_argument("--image-noise", type=float, default=1.5)
    p.add_argument("--text-noise", type=float, default=0.3)
    p.add_argument("--confusers", type=float, default=0.0, help="confuser fraction p")
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="latency of one-shot vs sequential search")
    p.add_argument("--bundle", required=True)
    p.add_argument("--catalog", required=True, help="catalog JSONL the queries are drawn from")
    p.add_argument("--queries", type=int, default=1000)
    p.add_argument("--query-seed", type=int, default=0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--shortlist", type=int, default=500)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError, SpecError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MultifuseError, OSError, ValueError, KeyError) as exc:
        print(f"input error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
