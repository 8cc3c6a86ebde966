"""Config-driven experiment pipelines and reporting.

A run executes the stage graph for its method (ingest -> variants ->
conditioned dataset -> train -> generate -> evaluate) and leaves behind a
manifest with config snapshot, backend identities, artifact digests, cache
counters, and the final metrics. Stage outputs are content-addressed files;
re-running against a warmed completion cache rebuilds them byte-identically
without touching any backend transport.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version shim
    import tomli as tomllib

from . import backend as backend_mod
from .adaptive import RateLadder, run_waterfall
from .backend import (
    Backend,
    DecodingParams,
    HTTPBackend,
    MockBackend,
    RetryPolicy,
    SubprocessBackend,
    TrainJob,
)
from .cache import CompletionCache
from .compressor import (
    CompressionLevel,
    EXPANDED,
    FREE_KEEP_FRACTION,
    ORIGINAL,
    RATE_LADDER,
    RationaleVariant,
    SHORT_FREE,
    budget_for,
    budgeted,
    compress,
    parse_level,
    reference_compress,
)
from .conditioner import (
    LEVEL_RATES,
    LONG,
    SHORT,
    build_adaptive,
    build_mixed,
    build_single,
    build_two_class,
    render_inference_input,
    short_level,
)
from .corpus import Corpus, load_corpus, word_count
from .metrics import (
    LengthMeasure,
    WORDS,
    accuracy,
    format_percent,
    measure,
    with_compression,
)
from .mock import mock_oracle, spread_difficulty

MANIFEST_SCHEMA = "1"
METHODS = ("short_cot", "long_cot", "c3ot", "c3ot_mixed", "c3ot_expansion", "c3ot_adapt")

log = logging.getLogger("cotpress.harness")


class HarnessError(Exception):
    pass


class ConfigError(HarnessError):
    pass


@dataclass
class ExperimentConfig:
    method: str
    run_dir: str
    family: str
    train_path: str
    test_path: str
    seed: int = 7
    length_unit: str = WORDS
    compressor: dict = field(default_factory=lambda: {"kind": "reference", "rate": 50})
    trainer: dict = field(default_factory=dict)
    ladder: list[int] | None = None
    inference_level: int = 1
    adapt_seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    adapt_folds: int = 5
    baseline_manifest: str | None = None
    cache_dir: str | None = None
    hyperparams: dict = field(default_factory=dict)
    resume: bool = False

    @classmethod
    def from_toml(cls, path: str | Path) -> "ExperimentConfig":
        raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        experiment = raw.get("experiment", {})
        data = raw.get("data", {})
        adaptive = raw.get("adaptive", {})
        mixed = raw.get("mixed", {})
        evaluation = raw.get("eval", {})
        try:
            config = cls(
                method=experiment["method"],
                run_dir=experiment["run_dir"],
                family=data["family"],
                train_path=data["train_path"],
                test_path=data["test_path"],
                seed=experiment.get("seed", 7),
                length_unit=experiment.get("length_unit", WORDS),
                compressor=raw.get("compressor", {"kind": "reference", "rate": 50}),
                trainer=raw.get("trainer", {}),
                ladder=adaptive.get("ladder") or mixed.get("ladder"),
                inference_level=mixed.get("inference_level", 1),
                adapt_seeds=list(adaptive.get("seeds", [1, 2, 3])),
                adapt_folds=adaptive.get("folds", 5),
                baseline_manifest=evaluation.get("baseline_manifest"),
                cache_dir=evaluation.get("cache_dir"),
                hyperparams=raw.get("trainer", {}).get("hyperparams", {}),
                resume=experiment.get("resume", False),
            )
        except KeyError as exc:
            raise ConfigError(f"config missing required key: {exc}") from None
        return config

    @classmethod
    def from_dict(cls, snapshot: dict) -> "ExperimentConfig":
        """Rebuild a config from a manifest's config snapshot."""
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in snapshot.items() if k in known})

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method in ("c3ot_mixed", "c3ot_adapt"):
            if not self.ladder:
                raise ConfigError(f"method {self.method} requires a compression-rate ladder")
            bad = [r for r in self.ladder if r not in RATE_LADDER]
            if bad:
                raise ConfigError(f"ladder rates must come from {RATE_LADDER}: {bad}")
        if self.method == "c3ot_mixed" and self.inference_level not in LEVEL_RATES:
            raise ConfigError(f"inference_level must be 1..6, got {self.inference_level}")
        if self.method == "c3ot_expansion" and self.compressor.get("kind") == "reference":
            raise ConfigError("expansion needs an LLM compressor backend, not the reference one")
        if not self.trainer.get("kind"):
            raise ConfigError("trainer backend kind is required")
        if self.length_unit not in (WORDS, "characters"):
            raise ConfigError(f"unsupported length unit {self.length_unit!r}")
        if len(self.adapt_seeds) != 3:
            raise ConfigError("adaptive probing uses exactly 3 seeds")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "run_dir": self.run_dir,
            "family": self.family,
            "train_path": self.train_path,
            "test_path": self.test_path,
            "seed": self.seed,
            "length_unit": self.length_unit,
            "compressor": self.compressor,
            "trainer": self.trainer,
            "ladder": self.ladder,
            "inference_level": self.inference_level,
            "adapt_seeds": self.adapt_seeds,
            "adapt_folds": self.adapt_folds,
            "baseline_manifest": self.baseline_manifest,
            "cache_dir": self.cache_dir,
            "hyperparams": self.hyperparams,
        }


# ---------------------------------------------------------------------------
# Backend construction from config tables.
# ---------------------------------------------------------------------------

def build_backend(spec: dict, corpora: list[Corpus] | None = None) -> Backend | None:
    kind = spec.get("kind")
    if kind in (None, "reference"):
        return None
    if kind == "mock-oracle":
        oracle = spec.get("oracle", {})
        difficulty = oracle.get("difficulty", "spread")
        if difficulty == "spread":
            table: dict[str, float] = {}
            for corpus in corpora or []:
                table.update(spread_difficulty(corpus))
        elif isinstance(difficulty, str):
            table = json.loads(Path(difficulty).read_text(encoding="utf-8"))
        else:
            table = dict(difficulty)
        thresholds = {
            parse_level(label): value
            for label, value in oracle.get("thresholds", {}).items()
        }
        return mock_oracle(
            table,
            thresholds,
            noise_seed=oracle.get("noise_seed", 0),
            noise_rate=oracle.get("noise_rate", 0.0),
        )
    if kind == "mock":
        fixtures = {}
        if spec.get("fixtures_path"):
            fixtures = json.loads(Path(spec["fixtures_path"]).read_text(encoding="utf-8"))
        return MockBackend(fixtures=fixtures, label=spec.get("label", "fixture"))
    if kind == "http":
        api_key = spec.get("api_key")
        if spec.get("api_key_env"):
            api_key = os.environ.get(spec["api_key_env"], api_key)
        return HTTPBackend(
            endpoint=spec["endpoint"],
            model=spec.get("model", ""),
            api_key=api_key,
            capabilities=frozenset(spec.get("capabilities", ["complete", "train"])),
            params=_decoding_params(spec),
        )
    if kind == "command":
        return SubprocessBackend(
            complete_command=spec.get("complete_command"),
            train_command=spec.get("train_command"),
            serve_template=spec.get("serve_template"),
            model=spec.get("model", ""),
            params=_decoding_params(spec),
        )
    raise ConfigError(f"unknown backend kind {kind!r}")


def _decoding_params(spec: dict) -> DecodingParams:
    return DecodingParams(
        temperature=spec.get("temperature", 0.0),
        max_tokens=spec.get("max_tokens", 512),
        stop=tuple(spec.get("stop", ("\n\n",))),
    )


# ---------------------------------------------------------------------------
# Variant production.
# ---------------------------------------------------------------------------

def compressor_level(config: ExperimentConfig) -> CompressionLevel:
    """The short-side level for single-level methods."""
    if config.compressor.get("level"):
        return parse_level(config.compressor["level"])
    if config.compressor.get("kind", "reference") == "reference":
        return budgeted(config.compressor.get("rate", 50))
    return SHORT_FREE


def produce_variant(
    sample,
    level: CompressionLevel,
    config: ExperimentConfig,
    backend: Backend | None,
    cache: CompletionCache | None,
) -> RationaleVariant:
    kind = config.compressor.get("kind", "reference")
    if level == ORIGINAL or level.no_cot or kind != "reference":
        return compress(sample, level, backend, cache=cache)
    if level == EXPANDED:
        raise ConfigError("expansion needs an LLM compressor backend")
    if level.kind == "short-budgeted":
        return reference_compress(sample, budget_for(sample, level.rate), level)
    keep = config.compressor.get("free_keep_fraction", FREE_KEEP_FRACTION)
    budget = max(1, round(word_count(sample.rationale_long) * keep))
    return reference_compress(sample, budget, SHORT_FREE)


def save_variants(variants: list[RationaleVariant], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for variant in variants:
            handle.write(
                json.dumps(
                    {
                        "sample_id": variant.sample_id,
                        "level": variant.level.label(),
                        "text": variant.text,
                        "producer": variant.producer,
                        "prompt_digest": variant.prompt_digest,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_variants(path: Path) -> list[RationaleVariant]:
    variants = []
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            variants.append(
                RationaleVariant(
                    sample_id=obj["sample_id"],
                    level=parse_level(obj["level"]),
                    text=obj["text"],
                    producer=obj["producer"],
                    prompt_digest=obj["prompt_digest"],
                )
            )
    return variants


# ---------------------------------------------------------------------------
# Stage plumbing.
# ---------------------------------------------------------------------------

def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _inputs_digest(*parts: str) -> str:
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()


def run_experiment(config: ExperimentConfig) -> dict:
    """Execute the stage graph for the configured method; returns the manifest.

    Any stage failure is recorded in the manifest (with the stage name) before
    the exception propagates; partial artifacts stay on disk.
    """
    config.validate()
    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cache = CompletionCache(config.cache_dir) if config.cache_dir else None
    log.info("run start method=%s family=%s run_dir=%s", config.method, config.family, run_dir)

    manifest: dict = {
        "schema_version": MANIFEST_SCHEMA,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "method": config.method,
        "family": config.family,
        "length_unit": config.length_unit,
        "config": config.to_dict(),
        "backends": {},
        "stages": [],
        "cache": None,
        "eval": None,
    }
    stage_name = "setup"
    try:
        stage_name = "corpus"
        train_corpus = load_corpus(config.train_path, "train")
        test_corpus = load_corpus(config.test_path, "test")
        _record(manifest, "corpus", config.train_path, file_digest(config.train_path), False)
        _record(manifest, "corpus", config.test_path, file_digest(config.test_path), False)

        compressor_backend = build_backend(config.compressor, [train_corpus, test_corpus])
        trainer_backend = build_backend(config.trainer, [train_corpus, test_corpus])
        if trainer_backend is None:
            raise ConfigError("trainer backend cannot be 'reference'")
        manifest["backends"] = {
            "compressor": compressor_backend.identity if compressor_backend else "reference",
            "trainer": trainer_backend.identity,
        }

        stage_name = "variants"
        levels = _levels_for(config)
        variants = _variants_stage(
            config, manifest, run_dir, train_corpus, levels, compressor_backend, cache
        )

        stage_name = "dataset"
        dataset_path, selection = _dataset_stage(
            config, manifest, run_dir, train_corpus, variants, trainer_backend, cache
        )
        if selection is not None:
            manifest["adaptive"] = {
                "histogram": selection.histogram(),
                "rounds": selection.round_log,
            }

        stage_name = "train"
        job = TrainJob(dataset_path, hyperparams=dict(config.hyperparams))
        model = backend_mod.train(trainer_backend, job)
        manifest["model_ref"] = job.output_model_ref
        manifest["backends"]["model"] = model.identity

        stage_name = "generate"
        generations = _generate_stage(config, manifest, run_dir, test_corpus, model, cache)

        stage_name = "eval"
        result = accuracy(test_corpus, generations, unit=config.length_unit)
        result = _attach_baseline(config, result)
        eval_payload = result.to_json()
        eval_payload["mean_gen_length"] = result.mean_gen_length().value
        manifest["eval"] = eval_payload
        eval_path = run_dir / "eval.json"
        eval_path.write_text(
            json.dumps(eval_payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        _record(manifest, "eval", eval_path, file_digest(eval_path), False)
        manifest["transport"] = {
            "compressor": _transport_stats(compressor_backend),
            "trainer": _transport_stats(trainer_backend),
        }
    except Exception as exc:
        log.error("run failed stage=%s error=%s", stage_name, exc)
        manifest["error"] = {"stage": stage_name, "message": str(exc)}
        _write_manifest(run_dir, manifest, cache)
        raise

    log.info(
        "run done method=%s accuracy=%.4f compression_rate=%.4f",
        config.method, manifest["eval"]["accuracy"], manifest["eval"]["compression_rate"],
    )
    _write_manifest(run_dir, manifest, cache)
    return manifest


def _write_manifest(run_dir: Path, manifest: dict, cache: CompletionCache | None) -> None:
    manifest["cache"] = cache.stats() if cache else None
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _transport_stats(backend: Backend | None) -> dict | None:
    """Raw-transport call counters for backends that track them (mocks)."""
    if backend is None:
        return None
    if hasattr(backend, "stats"):
        return dict(backend.stats)
    if hasattr(backend, "calls"):
        return {"completions": backend.calls, "trainings": getattr(backend, "train_calls", 0)}
    return None


def _record(manifest: dict, name: str, artifact, digest: str, reused: bool) -> None:
    log.info(
        "stage=%s artifact=%s digest=%s reused=%s", name, artifact, digest[:12], reused
    )
    manifest["stages"].append(
        {"name": name, "artifact": str(artifact), "digest": digest, "reused": reused}
    )


def _levels_for(config: ExperimentConfig) -> list[CompressionLevel]:
    if config.method == "long_cot":
        return []
    if config.method in ("short_cot", "c3ot"):
        return [compressor_level(config)]
    if config.method == "c3ot_mixed":
        return [budgeted(rate) for rate in sorted(config.ladder)]
    if config.method == "c3ot_expansion":
        return [EXPANDED, compressor_level(config)]
    if config.method == "c3ot_adapt":
        return [budgeted(rate) for rate in sorted(config.ladder, reverse=True)]
    raise ConfigError(f"unknown method {config.method!r}")


def _variants_stage(
    config: ExperimentConfig,
    manifest: dict,
    run_dir: Path,
    train_corpus: Corpus,
    levels: list[CompressionLevel],
    compressor_backend: Backend | None,
    cache: CompletionCache | None,
) -> dict[tuple[str, CompressionLevel], RationaleVariant]:
    if not levels:
        return {}
    digest = _inputs_digest(
        file_digest(config.train_path),
        json.dumps(config.compressor, sort_keys=True),
        ",".join(level.label() for level in levels),
    )
    path = run_dir / f"variants-{digest[:12]}.jsonl"
    if path.exists():
        variant_list = load_variants(path)
        reused = True
    else:
        variant_list = [
            produce_variant(sample, level, config, compressor_backend, cache)
            for level in levels
            for sample in train_corpus
        ]
        save_variants(variant_list, path)
        reused = False
    _record(manifest, "variants", path, file_digest(path), reused)
    return {(v.sample_id, v.level): v for v in variant_list}


def _dataset_stage(
    config: ExperimentConfig,
    manifest: dict,
    run_dir: Path,
    train_corpus: Corpus,
    variants: dict[tuple[str, CompressionLevel], RationaleVariant],
    trainer_backend: Backend,
    cache: CompletionCache | None,
):
    from .conditioner import save_dataset

    selection = None
    method = config.method
    if method == "long_cot":
        dataset = build_single(train_corpus, LONG, None, config.seed)
    elif method == "short_cot":
        level = compressor_level(config)
        texts = {sid: v.text for (sid, lv), v in variants.items() if lv == level}
        dataset = build_single(train_corpus, SHORT, texts, config.seed, level=level)
    elif method == "c3ot":
        level = compressor_level(config)
        shorts = {sid: v for (sid, lv), v in variants.items() if lv == level}
        dataset = build_two_class(train_corpus, shorts, config.seed)
    elif method == "c3ot_expansion":
        level = compressor_level(config)
        shorts = {sid: v for (sid, lv), v in variants.items() if lv == level}
        longs = {sid: v for (sid, lv), v in variants.items() if lv == EXPANDED}
        dataset = build_two_class(train_corpus, shorts, config.seed, longs=longs)
    elif method == "c3ot_mixed":
        level_ids = sorted(
            (k for k, rate in LEVEL_RATES.items() if rate in set(config.ladder))
        )
        dataset = build_mixed(train_corpus, variants, level_ids, config.seed)
    elif method == "c3ot_adapt":
        ladder = RateLadder.from_rates(config.ladder)
        selection = run_waterfall(
            train_corpus,
            ladder,
            variants,
            trainer_backend,
            seeds=tuple(config.adapt_seeds),
            folds=config.adapt_folds,
            workdir=run_dir / "adapt",
            cache=cache,
            resume=config.resume,
        )
        dataset = build_adaptive(train_corpus, selection.assignment(), config.seed)
    else:
        raise ConfigError(f"unknown method {method!r}")

    digest = _inputs_digest(
        method,
        str(config.seed),
        *(f"{r.sample_id}|{r.condition.class_id}|{r.target}" for r in dataset.records),
    )
    path = run_dir / f"train-{digest[:12]}.jsonl"
    reused = path.exists()
    if not reused:
        save_dataset(dataset, path, extra={"method": method, "family": config.family})
    _record(manifest, "dataset", path, file_digest(path), reused)
    return path, selection


def inference_condition(config: ExperimentConfig):
    if config.method == "long_cot":
        return LONG
    if config.method == "c3ot_mixed":
        return short_level(config.inference_level)
    return SHORT


def _generate_stage(
    config: ExperimentConfig,
    manifest: dict,
    run_dir: Path,
    test_corpus: Corpus,
    model: Backend,
    cache: CompletionCache | None,
) -> dict[str, str]:
    condition = inference_condition(config)
    digest = _inputs_digest(file_digest(config.test_path), model.identity, condition.class_id)
    path = run_dir / f"generations-{digest[:12]}.jsonl"
    generations: dict[str, str] = {}
    if path.exists():
        with path.open(encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    obj = json.loads(line)
                    generations[obj["id"]] = obj["output"]
        reused = True
    else:
        with path.open("w", encoding="utf-8") as handle:
            for sample in test_corpus:
                prompt = render_inference_input(sample.instruction, condition)
                output = backend_mod.complete(model, prompt, cache=cache)
                generations[sample.id] = output
                handle.write(
                    json.dumps(
                        {"id": sample.id, "input": prompt, "output": output},
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        reused = False
    _record(manifest, "generate", path, file_digest(path), reused)
    return generations


def _attach_baseline(config: ExperimentConfig, result):
    if config.method == "long_cot":
        return with_compression(result, result.mean_gen_length())
    if config.baseline_manifest:
        baseline = load_manifest(config.baseline_manifest)
        if baseline["length_unit"] != config.length_unit:
            raise HarnessError(
                f"baseline length unit {baseline['length_unit']!r} does not match "
                f"{config.length_unit!r}"
            )
        mean = LengthMeasure(config.length_unit, baseline["eval"]["mean_gen_length"])
        return with_compression(result, mean)
    # No baseline run available: fall back to gold long-rationale lengths.
    test_corpus = load_corpus(config.test_path, "test")
    total = sum(measure(s.rationale_long, config.length_unit).value for s in test_corpus)
    proxy = LengthMeasure(config.length_unit, total / len(test_corpus))
    return with_compression(result, proxy, proxy_baseline=True)


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Reporting.
# ---------------------------------------------------------------------------

def report(manifests: list[dict]) -> tuple[str, dict]:
    """Method x (Acc, Compression Rate) table, plus a JSON mirror."""
    if not manifests:
        raise HarnessError("no manifests to report")
    families = {m["family"] for m in manifests}
    if len(families) > 1:
        raise HarnessError(f"manifests span multiple families: {sorted(families)}")
    units = {m["length_unit"] for m in manifests}
    if len(units) > 1:
        raise HarnessError(f"manifests span multiple length units: {sorted(units)}")
    rows = []
    for m in manifests:
        if not m.get("eval"):
            raise HarnessError(f"manifest for method {m.get('method')!r} has no eval result")
        rows.append(
            {
                "method": m["method"],
                "accuracy_pct": format_percent(m["eval"]["accuracy"]),
                "compression_rate_pct": format_percent(m["eval"]["compression_rate"]),
                "n": m["eval"]["n"],
                "proxy_baseline": m["eval"].get("proxy_baseline", False),
            }
        )
    method_width = max(len("Method"), max(len(r["method"]) for r in rows))
    acc_width = max(len("Acc"), max(len(r["accuracy_pct"]) for r in rows))
    rate_width = max(len("Compression Rate"), max(len(r["compression_rate_pct"]) for r in rows))
    lines = [
        f"{'Method'.ljust(method_width)}  {'Acc'.rjust(acc_width)}  "
        f"{'Compression Rate'.rjust(rate_width)}"
    ]
    for row in rows:
        lines.append(
            f"{row['method'].ljust(method_width)}  {row['accuracy_pct'].rjust(acc_width)}  "
            f"{row['compression_rate_pct'].rjust(rate_width)}"
        )
    payload = {
        "family": next(iter(families)),
        "length_unit": next(iter(units)),
        "rows": rows,
    }
    return "\n".join(lines), payload
