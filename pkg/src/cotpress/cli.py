"""Command-line entry points: ingest, compress, condition, adapt, run, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import backend as backend_mod
from .adaptive import AdaptiveError, RateLadder, SelectionState, run_waterfall
from .cache import CompletionCache
from .compressor import CompressionError, SHORT_FREE, budgeted, compress_corpus, parse_level
from .conditioner import (
    ConditionError,
    build_adaptive,
    build_mixed,
    build_two_class,
    save_dataset,
)
from .corpus import CorpusError, ingest, load_corpus, save_corpus
from .metrics import MetricsError
from .harness import (
    ExperimentConfig,
    HarnessError,
    build_backend,
    load_manifest,
    load_variants,
    report,
    run_experiment,
    save_variants,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version shim
    import tomli as tomllib


def _load_backend_spec(path: str):
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        return json.loads(text)
    return tomllib.loads(text)


def cmd_ingest(args) -> int:
    corpus = ingest(args.infile, args.family, args.split)
    save_corpus(corpus, args.out)
    print(f"ingested {len(corpus)} {args.family} samples ({args.split}) -> {args.out}")
    return 0


def cmd_compress(args) -> int:
    corpus = load_corpus(args.corpus, args.split)
    if args.budget_rate is not None:
        level = budgeted(args.budget_rate)
    elif args.level:
        level = parse_level(args.level)
    else:
        level = SHORT_FREE
    cache = CompletionCache(args.cache_dir) if args.cache_dir else None

    if args.backend == "reference":
        from .compressor import (
            FREE_KEEP_FRACTION,
            ORIGINAL,
            budget_for,
            compress,
            reference_compress,
            word_count,
        )

        variants = []
        for sample in corpus:
            if level.no_cot or level == ORIGINAL:
                variants.append(compress(sample, level, None, cache=cache))
            elif level.kind == "short-budgeted":
                variants.append(reference_compress(sample, budget_for(sample, level.rate), level))
            elif level == SHORT_FREE:
                budget = max(1, round(word_count(sample.rationale_long) * FREE_KEEP_FRACTION))
                variants.append(reference_compress(sample, budget, SHORT_FREE))
            else:
                print("the reference compressor cannot expand rationales", file=sys.stderr)
                return 1
    else:
        backend = build_backend(_load_backend_spec(args.backend), [corpus])
        variant_map = compress_corpus(corpus, level, backend, cache=cache, jobs=args.jobs)
        variants = [variant_map[sample.id] for sample in corpus]
    save_variants(variants, Path(args.out))
    print(f"wrote {len(variants)} variants at level {level.label()} -> {args.out}")
    return 0


def cmd_condition(args) -> int:
    corpus = load_corpus(args.corpus, args.split)
    variants = load_variants(Path(args.variants)) if args.variants else []
    by_key = {(v.sample_id, v.level): v for v in variants}
    if args.mode == "two-class":
        shorts = {v.sample_id: v for v in variants}
        dataset = build_two_class(corpus, shorts, args.seed)
    elif args.mode == "mixed":
        levels = [int(k) for k in args.levels.split(",")] if args.levels else [1, 2, 3, 4, 5, 6]
        dataset = build_mixed(corpus, by_key, levels, args.seed)
    elif args.mode == "adaptive":
        if not args.selection:
            print("adaptive mode requires --selection (state file from `adapt`)", file=sys.stderr)
            return 1
        state = SelectionState.from_json(
            json.loads(Path(args.selection).read_text(encoding="utf-8"))
        )
        dataset = build_adaptive(corpus, state.assignment(), args.seed)
    else:  # pragma: no cover - argparse restricts choices
        return 1
    save_dataset(dataset, args.out, extra={"mode": args.mode, "family": corpus.family})
    print(f"wrote {len(dataset.records)} conditioned records -> {args.out}")
    return 0


def cmd_adapt(args) -> int:
    corpus = load_corpus(args.corpus, args.split)
    variants = load_variants(Path(args.variants))
    by_key = {(v.sample_id, v.level): v for v in variants}
    ladder = RateLadder.from_rates([int(r) for r in args.ladder.split(",")])
    seeds = tuple(int(s) for s in args.seeds.split(","))
    backend = build_backend(_load_backend_spec(args.backend), [corpus])
    cache = CompletionCache(args.cache_dir) if args.cache_dir else None
    state = run_waterfall(
        corpus,
        ladder,
        by_key,
        backend,
        seeds=seeds,
        folds=args.folds,
        workdir=args.workdir,
        cache=cache,
        resume=args.resume,
    )
    print(json.dumps({"histogram": state.histogram()}, indent=2))
    print(f"selection state -> {Path(args.workdir) / 'selection_state.json'}")
    return 0


def cmd_run(args) -> int:
    config = ExperimentConfig.from_toml(args.config)
    manifest = run_experiment(config)
    print(f"run complete: {manifest['method']} on {manifest['family']}")
    print(f"accuracy={manifest['eval']['accuracy']:.4f} "
          f"compression_rate={manifest['eval']['compression_rate']:.4f}")
    print(f"manifest -> {Path(config.run_dir) / 'manifest.json'}")
    return 0


def cmd_report(args) -> int:
    manifests = [load_manifest(path) for path in args.runs]
    table, payload = report(manifests)
    print(table)
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        print(f"json mirror -> {args.json_out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotpress",
        description="Compress chain-of-thought corpora and run conditioned-training pipelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a source dataset file into canonical JSONL")
    p.add_argument("--family", required=True)
    p.add_argument("--split", required=True, choices=["train", "test"])
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("compress", help="produce rationale variants for a corpus")
    p.add_argument("--corpus", required=True, help="canonical corpus JSONL")
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--level", default=None, help="original|short-free|short-NN|expanded")
    p.add_argument("--budget-rate", type=int, default=None, help="shorthand for short-NN")
    p.add_argument("--backend", default="reference",
                   help="'reference' or a backend spec file (.toml/.json)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("condition", help="build a class-conditioned training file")
    p.add_argument("--mode", required=True, choices=["two-class", "mixed", "adaptive"])
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--variants", default=None, help="variants JSONL from `compress`")
    p.add_argument("--levels", default=None, help="mixed condition levels, e.g. 1,2,3,4,5,6")
    p.add_argument("--selection", default=None, help="selection state JSON from `adapt`")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_condition)

    p = sub.add_parser("adapt", help="run the per-sample compression-rate selection loop")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--variants", required=True)
    p.add_argument("--ladder", default="100,90,80,70,60,50")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--backend", required=True, help="backend spec file (.toml/.json)")
    p.add_argument("--workdir", required=True)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("run", help="run a full experiment from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="tabulate accuracy and compression across runs")
    p.add_argument("--runs", nargs="+", required=True, help="manifest.json paths")
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        AdaptiveError,
        CompressionError,
        ConditionError,
        CorpusError,
        HarnessError,
        MetricsError,
        backend_mod.BackendError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
