"""Deterministic mock backend and synthetic corpus for desk-scale pipelines.

The oracle models a trainable reasoner whose competence is a step function:
a sample is answered correctly iff its difficulty is at or below the
threshold of the compression level it reasons at. Training on a conditioned
dataset (via the sidecar manifest) tells a trained handle which level each
sample's short rationale was at; inference parses the condition prefix and
the bracketed sample id out of the input and replies with a synthetic CoT of
the level-appropriate length, ending in a correct or deliberately wrong
answer line. Everything is a pure function of the constructor arguments and
the training data, so runs replay bit-identically.

Synthetic samples look like ``[s007] Compute 18 + 96.`` with the gold answer
embedded in the arithmetic, which lets the oracle "solve" them from the input
alone. Their rationale length is a fixed function of the id suffix, so
expected generation lengths are computable in tests.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from pathlib import Path

from .backend import Backend, TrainJob
from .compressor import (
    CompressionLevel,
    EXPANDED,
    EXPANSION_FACTOR,
    FREE_KEEP_FRACTION,
    ORIGINAL,
    SHORT_FREE,
    budgeted,
    compression_value,
    parse_level,
)
from .conditioner import LEVEL_RATES, load_sidecar, parse_conditioned_input
from .corpus import (
    AnswerValue,
    Corpus,
    FamilySpec,
    NUMERIC_KIND,
    Sample,
    register_family,
    word_count,
)

# Share the numeric answer schema with gsm8k-style loaders.
register_family(
    FamilySpec(
        "synthetic",
        NUMERIC_KIND,
        lambda obj, index: Sample(
            id=str(obj.get("id") or f"synthetic-{index:05d}"),
            instruction=str(obj["question"]).strip(),
            rationale_long=str(obj["rationale"]).strip(),
            answer=AnswerValue.numeric(str(obj["answer"])),
            source="synthetic",
        ),
    )
)

_ID_RE = re.compile(r"\[([A-Za-z0-9_-]+)\]")
_SUM_RE = re.compile(r"Compute (\d+) \+ (\d+)\.")
_ID_NUM_RE = re.compile(r"(\d+)$")

_FILLER = ("so", "we", "note", "the", "state", "then", "check", "it", "holds", "here")


def base_len(sample_id: str) -> int:
    """Nominal long-rationale word count for a synthetic sample id."""
    match = _ID_NUM_RE.search(sample_id)
    number = int(match.group(1)) if match else 0
    return 18 + 2 * (number % 12)


def _filler_words(n: int) -> list[str]:
    return [_FILLER[i % len(_FILLER)] for i in range(n)]


def synthetic_rationale(sample_id: str, a: int, b: int) -> str:
    """Filler sentences plus a final equation sentence, exactly base_len words."""
    total = base_len(sample_id)
    equation = f"Therefore {a} + {b} = {a + b}."
    filler = _filler_words(total - word_count(equation))
    sentences = []
    for start in range(0, len(filler), 7):
        chunk = filler[start : start + 7]
        chunk[-1] += "."
        sentences.append(" ".join(chunk))
    sentences.append(equation)
    return " ".join(sentences)


def synthetic_sample(sample_id: str, index: int) -> Sample:
    a = 11 + (7 * index) % 40
    b = 5 + (13 * index) % 60
    return Sample(
        id=sample_id,
        instruction=f"[{sample_id}] Compute {a} + {b}.",
        rationale_long=synthetic_rationale(sample_id, a, b),
        answer=AnswerValue.numeric(str(a + b)),
        source="synthetic",
    )


def synthetic_corpus(n: int, split: str = "train", prefix: str = "s") -> Corpus:
    samples = [synthetic_sample(f"{prefix}{i:03d}", i) for i in range(n)]
    return Corpus(samples=samples, split=split, family="synthetic")


def spread_difficulty(corpus: Corpus) -> dict[str, float]:
    """Evenly spaced difficulties in (0, 1), in corpus order."""
    n = len(corpus)
    return {sample.id: (i + 0.5) / n for i, sample in enumerate(corpus)}


def check_thresholds(thresholds: dict[CompressionLevel, float]) -> None:
    """Thresholds must not increase as compression rises."""
    ordered = sorted(thresholds.items(), key=lambda item: compression_value(item[0]))
    for (low, low_thr), (high, high_thr) in zip(ordered, ordered[1:]):
        if high_thr > low_thr:
            raise ValueError(
                f"threshold rises with compression: {low.label()}={low_thr} -> "
                f"{high.label()}={high_thr}"
            )


def expected_generation_words(sample_id: str, level: CompressionLevel) -> int:
    """CoT length (words) the oracle generates for a sample at a level."""
    long_words = base_len(sample_id)
    if level == ORIGINAL:
        return long_words
    if level == EXPANDED:
        return round(long_words * EXPANSION_FACTOR)
    if level == SHORT_FREE:
        return round(long_words * FREE_KEEP_FRACTION)
    return round(long_words * (1 - level.rate / 100))


class MockOracleBackend(Backend):
    """Complete+train backend driven by a difficulty/threshold table.

    Untrained handles resolve the reasoning level from the condition prefix
    alone (long -> original; compression-level-k -> the k-th ladder rate).
    Trained handles additionally know the level each trained sample's short
    rationale had, and for unseen ids under the brief condition they pick the
    most compressed trained level whose threshold still covers the sample,
    modeling a model that learned to adapt its verbosity.
    """

    kind = "mock-oracle"

    def __init__(
        self,
        difficulty: dict[str, float],
        thresholds: dict[CompressionLevel, float],
        noise_seed: int = 0,
        noise_rate: float = 0.0,
        model: str = "oracle-base",
        short_assignment: dict[str, CompressionLevel] | None = None,
        long_assignment: dict[str, CompressionLevel] | None = None,
        stats: dict | None = None,
        **kwargs,
    ):
        super().__init__(
            model=model, capabilities=frozenset({"complete", "train"}), **kwargs
        )
        check_thresholds(thresholds)
        self.difficulty = dict(difficulty)
        self.thresholds = dict(thresholds)
        self.noise_seed = noise_seed
        self.noise_rate = noise_rate
        self.short_assignment = dict(short_assignment or {})
        self.long_assignment = dict(long_assignment or {})
        self.stats = stats if stats is not None else {"completions": 0, "trainings": 0}

    def _identity_core(self) -> str:
        seed_tag = f"{self.noise_seed}:{self.noise_rate}"
        return f"oracle-{seed_tag}"

    # -- training ----------------------------------------------------------

    def _train_once(self, job: TrainJob) -> "MockOracleBackend":
        self.stats["trainings"] += 1
        data = Path(job.dataset_path).read_bytes()
        salt = hashlib.sha256(data).hexdigest()[:12]
        short_assignment: dict[str, CompressionLevel] = {}
        long_assignment: dict[str, CompressionLevel] = {}
        sidecar = load_sidecar(job.dataset_path)
        if sidecar:
            for record in sidecar.get("records", []):
                level = parse_level(record["level"])
                if record["condition"] == "long":
                    long_assignment[record["id"]] = level
                else:
                    short_assignment[record["id"]] = level
        model_ref = f"trained-{salt}"
        job.mark_completed(model_ref)
        return MockOracleBackend(
            difficulty=self.difficulty,
            thresholds=self.thresholds,
            noise_seed=self.noise_seed,
            noise_rate=self.noise_rate,
            model=model_ref,
            short_assignment=short_assignment,
            long_assignment=long_assignment,
            stats=self.stats,
        )

    # -- inference ---------------------------------------------------------

    def threshold_of(self, level: CompressionLevel) -> float:
        if level in self.thresholds:
            return self.thresholds[level]
        return 1.0 if level in (ORIGINAL, EXPANDED) else 0.0

    def passes(self, sample_id: str, level: CompressionLevel) -> bool:
        difficulty = self.difficulty.get(sample_id, 1.0)
        return difficulty <= self.threshold_of(level) + 1e-12

    def _trained_short_levels(self) -> list[CompressionLevel]:
        counts = Counter(self.short_assignment.values())
        return sorted(counts, key=compression_value, reverse=True)

    def _resolve_level(self, condition_id: str, sample_id: str) -> CompressionLevel:
        if condition_id == "long":
            if sample_id in self.long_assignment:
                return self.long_assignment[sample_id]
            modal = Counter(self.long_assignment.values()).most_common(1)
            return modal[0][0] if modal else ORIGINAL
        if condition_id.startswith("short-level-"):
            return budgeted(LEVEL_RATES[int(condition_id.rsplit("-", 1)[1])])
        # the brief condition
        if sample_id in self.short_assignment:
            return self.short_assignment[sample_id]
        seen = self._trained_short_levels()
        if len(seen) == 1:
            return seen[0]
        if seen:
            for level in seen:  # most compressed first
                if self.passes(sample_id, level):
                    return level
            return seen[-1]
        return SHORT_FREE

    def _noise_flip(self, sample_id: str, level: CompressionLevel) -> bool:
        if self.noise_rate <= 0:
            return False
        payload = f"{self.noise_seed}|{self.model}|{sample_id}|{level.label()}"
        draw = int(hashlib.sha256(payload.encode()).hexdigest()[:12], 16) / 16**12
        return draw < self.noise_rate

    def _complete_once(self, prompt: str) -> str:
        self.stats["completions"] += 1
        parsed = parse_conditioned_input(prompt)
        id_match = _ID_RE.search(prompt)
        sum_match = _SUM_RE.search(prompt)
        if parsed is None or id_match is None or sum_match is None:
            return "I cannot parse this request.\n#### -1"
        condition, _ = parsed
        sample_id = id_match.group(1)
        truth = int(sum_match.group(1)) + int(sum_match.group(2))
        level = self._resolve_level(condition.class_id, sample_id)
        correct = self.passes(sample_id, level)
        if self._noise_flip(sample_id, level):
            correct = not correct
        answer = truth if correct else truth + 1
        n_words = expected_generation_words(sample_id, level)
        cot = " ".join(_filler_words(n_words))
        return f"{cot}\n#### {answer}" if cot else f"#### {answer}"


def mock_oracle(
    difficulty: dict[str, float],
    thresholds: dict[CompressionLevel, float],
    noise_seed: int = 0,
    noise_rate: float = 0.0,
) -> MockOracleBackend:
    """Build a complete+train capable oracle handle."""
    return MockOracleBackend(
        difficulty=difficulty,
        thresholds=thresholds,
        noise_seed=noise_seed,
        noise_rate=noise_rate,
    )
