"""Per-sample compression-rate selection.

Levels are swept from most to least compressed. At each level every pending
sample is probed: the pending set is k-fold split, a model is trained on the
short-conditioned records of the other folds and predicts the held-out fold,
and the whole procedure repeats under three fold seeds. A sample passes the
level when it is predicted correctly in at least one of the three attempts;
passers are frozen at that level, the rest carry to the next one, and
whatever survives every probed level falls back to the original rationale.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from . import backend as backend_mod
from .backend import Backend, TrainJob
from .cache import CompletionCache
from .compressor import (
    CompressionLevel,
    ORIGINAL,
    RationaleVariant,
    compression_value,
    parse_level,
    prompt_digest,
)
from .conditioner import SHORT, build_single, render_inference_input, save_dataset
from .corpus import Corpus, extract_answer


class AdaptiveError(Exception):
    pass


class ProbeError(AdaptiveError):
    """A level probe failed mid-flight; partial logs are on disk."""

    def __init__(self, message: str, level: str, partial_log: Path | None):
        super().__init__(message)
        self.level = level
        self.partial_log = partial_log


def fold_split(ids: list[str], k: int, seed: int) -> list[list[str]]:
    """Seeded shuffle then round-robin into k parts differing by at most 1."""
    if k < 2:
        raise AdaptiveError(f"fold count must be >= 2, got {k}")
    if len(ids) < k:
        raise AdaptiveError(f"cannot split {len(ids)} ids into {k} folds")
    shuffled = list(ids)
    random.Random(seed).shuffle(shuffled)
    parts: list[list[str]] = [[] for _ in range(k)]
    for index, sample_id in enumerate(shuffled):
        parts[index % k].append(sample_id)
    return parts


def pass_from_attempts(outcomes) -> bool:
    """A sample passes when any attempt predicted it correctly."""
    return any(outcomes)


@dataclass(frozen=True)
class RateLadder:
    """Probe order: strictly decreasing compression, original fallback last."""

    levels: tuple[CompressionLevel, ...]

    def __post_init__(self) -> None:
        if len(self.levels) < 2:
            raise AdaptiveError("ladder needs at least one probed level plus the fallback")
        if self.levels[-1] != ORIGINAL:
            raise AdaptiveError("ladder must end with the original-rationale fallback")
        values = [compression_value(level) for level in self.levels]
        for left, right in zip(values, values[1:]):
            if left <= right:
                raise AdaptiveError("ladder compression must strictly decrease")

    @property
    def probed(self) -> tuple[CompressionLevel, ...]:
        return self.levels[:-1]

    @classmethod
    def from_rates(cls, rates: list[int]) -> "RateLadder":
        from .compressor import budgeted

        ordered = sorted(set(rates), reverse=True)
        return cls(tuple(budgeted(rate) for rate in ordered) + (ORIGINAL,))


@dataclass
class Accepted:
    level: CompressionLevel
    variant: RationaleVariant
    attempt_outcomes: tuple[bool, bool, bool] | None


@dataclass
class SelectionState:
    pending: list[str]
    accepted: dict[str, Accepted] = field(default_factory=dict)
    round_log: list[dict] = field(default_factory=list)

    def histogram(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for item in self.accepted.values():
            label = item.level.label()
            counts[label] = counts.get(label, 0) + 1
        return dict(sorted(counts.items()))

    def assignment(self) -> dict[str, tuple[CompressionLevel, RationaleVariant]]:
        return {sid: (item.level, item.variant) for sid, item in self.accepted.items()}

    def to_json(self) -> dict:
        return {
            "pending": list(self.pending),
            "accepted": {
                sid: {
                    "level": item.level.label(),
                    "variant": {
                        "sample_id": item.variant.sample_id,
                        "level": item.variant.level.label(),
                        "text": item.variant.text,
                        "producer": item.variant.producer,
                        "prompt_digest": item.variant.prompt_digest,
                    },
                    "attempt_outcomes": (
                        list(item.attempt_outcomes) if item.attempt_outcomes is not None else None
                    ),
                }
                for sid, item in sorted(self.accepted.items())
            },
            "round_log": self.round_log,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SelectionState":
        accepted = {}
        for sid, item in obj["accepted"].items():
            variant_obj = item["variant"]
            accepted[sid] = Accepted(
                level=parse_level(item["level"]),
                variant=RationaleVariant(
                    sample_id=variant_obj["sample_id"],
                    level=parse_level(variant_obj["level"]),
                    text=variant_obj["text"],
                    producer=variant_obj["producer"],
                    prompt_digest=variant_obj["prompt_digest"],
                ),
                attempt_outcomes=(
                    tuple(item["attempt_outcomes"])
                    if item["attempt_outcomes"] is not None
                    else None
                ),
            )
        return cls(pending=list(obj["pending"]), accepted=accepted, round_log=obj["round_log"])


def _subcorpus(corpus: Corpus, ids: list[str]) -> Corpus:
    wanted = set(ids)
    return Corpus(
        samples=[s for s in corpus if s.id in wanted],
        split=corpus.split,
        family=corpus.family,
    )


def probe_level(
    corpus: Corpus,
    pending_ids: list[str],
    level: CompressionLevel,
    variants: dict[tuple[str, CompressionLevel], RationaleVariant],
    backend: Backend,
    seeds: tuple[int, ...],
    folds: int = 5,
    workdir: str | Path = ".",
    cache: CompletionCache | None = None,
) -> tuple[dict[str, bool], dict[str, tuple[bool, ...]], dict]:
    """Probe one level over the pending samples.

    Returns (pass map, per-sample attempt outcomes, round log). Any training
    or prediction failure aborts the level after writing the partial outcome
    log next to the probe datasets.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    missing = [sid for sid in pending_ids if (sid, level) not in variants]
    if missing:
        raise AdaptiveError(
            f"missing {level.label()} variants for {len(missing)} pending ids "
            f"(first: {missing[0]})"
        )
    samples = {s.id: s for s in corpus}
    attempt_outcomes: dict[str, list[bool]] = {sid: [] for sid in pending_ids}
    log: dict = {"level": level.label(), "seeds": list(seeds), "folds": folds, "runs": []}

    try:
        for seed in seeds:
            parts = fold_split(pending_ids, folds, seed)
            seed_outcomes: dict[str, bool] = {}
            for fold_index, holdout in enumerate(parts):
                held = set(holdout)
                train_ids = [sid for sid in pending_ids if sid not in held]
                texts = {sid: variants[(sid, level)].text for sid in train_ids}
                dataset = build_single(
                    _subcorpus(corpus, train_ids),
                    SHORT,
                    texts,
                    seed=seed * 1000 + fold_index,
                    level=level,
                )
                dataset_path = workdir / f"probe_{level.label()}_s{seed}_f{fold_index}.jsonl"
                save_dataset(dataset, dataset_path, extra={"probe_level": level.label()})
                job = TrainJob(
                    dataset_path,
                    hyperparams={"probe_level": level.label(), "seed": seed, "fold": fold_index},
                )
                model = backend_mod.train(backend, job)
                for sid in holdout:
                    prompt = render_inference_input(samples[sid].instruction, SHORT)
                    generation = backend_mod.complete(model, prompt, cache=cache)
                    extracted = extract_answer(
                        generation,
                        samples[sid].source,
                        options=samples[sid].choices or None,
                        kind=samples[sid].answer.kind,
                    )
                    seed_outcomes[sid] = extracted is not None and extracted == samples[sid].answer
            for sid in pending_ids:
                attempt_outcomes[sid].append(seed_outcomes[sid])
            log["runs"].append(
                {"seed": seed, "fold_sizes": [len(p) for p in parts],
                 "correct": sum(seed_outcomes.values())}
            )
    except Exception as exc:
        partial = workdir / f"probe_{level.label()}_partial.json"
        partial.write_text(
            json.dumps({"log": log, "outcomes": attempt_outcomes}, indent=2) + "\n",
            encoding="utf-8",
        )
        raise ProbeError(
            f"probe at level {level.label()} failed: {exc}", level.label(), partial
        ) from exc

    outcomes = {sid: tuple(flags) for sid, flags in attempt_outcomes.items()}
    pass_map = {sid: pass_from_attempts(flags) for sid, flags in outcomes.items()}
    log["passed"] = sum(pass_map.values())
    return pass_map, outcomes, log


def _fallback_variant(corpus: Corpus, sample_id: str) -> RationaleVariant:
    sample = corpus.by_id(sample_id)
    return RationaleVariant(
        sample_id, ORIGINAL, sample.rationale_long, "identity",
        prompt_digest(sample.rationale_long),
    )


def run_waterfall(
    corpus: Corpus,
    ladder: RateLadder,
    variants: dict[tuple[str, CompressionLevel], RationaleVariant],
    backend: Backend,
    seeds: tuple[int, ...] = (1, 2, 3),
    folds: int = 5,
    workdir: str | Path = ".",
    cache: CompletionCache | None = None,
    resume: bool = False,
) -> SelectionState:
    """Sweep the ladder from most to least compressed, freezing each sample at
    the first level it passes; unpassed samples fall back to the original.

    State is checkpointed to ``selection_state.json`` after every level, so an
    interrupted run resumes without repeating completed levels.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    checkpoint = workdir / "selection_state.json"

    state = SelectionState(pending=list(corpus.ids()))
    completed: set[str] = set()
    if resume and checkpoint.exists():
        state = SelectionState.from_json(json.loads(checkpoint.read_text(encoding="utf-8")))
        completed = {entry["level"] for entry in state.round_log}

    for level in ladder.probed:
        if level.label() in completed:
            continue
        # A probe needs at least two pending samples (one to train on, one to
        # hold out); anything fewer skips straight to the fallback.
        effective_folds = min(folds, len(state.pending))
        if effective_folds < 2:
            state.round_log.append(
                {"level": level.label(), "pending_before": len(state.pending),
                 "accepted": 0, "seeds": list(seeds), "folds": folds, "skipped": True}
            )
            _write_checkpoint(checkpoint, state)
            continue
        pass_map, outcomes, log = probe_level(
            corpus, state.pending, level, variants, backend, seeds, effective_folds,
            workdir, cache
        )
        newly_accepted = [sid for sid in state.pending if pass_map[sid]]
        for sid in newly_accepted:
            state.accepted[sid] = Accepted(level, variants[(sid, level)], outcomes[sid])
        state.round_log.append(
            {
                "level": level.label(),
                "pending_before": len(state.pending),
                "accepted": len(newly_accepted),
                "seeds": list(seeds),
                "folds": effective_folds,
                "probe": log,
            }
        )
        state.pending = [sid for sid in state.pending if not pass_map[sid]]
        _write_checkpoint(checkpoint, state)

    for sid in state.pending:
        fallback = variants.get((sid, ORIGINAL)) or _fallback_variant(corpus, sid)
        state.accepted[sid] = Accepted(ORIGINAL, fallback, None)
    state.pending = []
    _write_checkpoint(checkpoint, state)
    return state


def _write_checkpoint(path: Path, state: SelectionState) -> None:
    path.write_text(
        json.dumps(state.to_json(), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
