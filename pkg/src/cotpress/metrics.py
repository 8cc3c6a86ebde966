"""Exact-match accuracy and length-compression metrics.

The compression rate of a candidate against a benchmark length L is
(L - L_tilde) / L: 1 when no CoT is generated, 0 at parity, negative when the
candidate is longer. Lengths are whitespace-word counts by default; both
sides of any one comparison must use the same unit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping

from .corpus import Corpus, extract_answer, strip_answer_rendering

WORDS = "whitespace-words"
CHARACTERS = "characters"
BACKEND_TOKENS = "backend-reported-tokens"
UNITS = (WORDS, CHARACTERS, BACKEND_TOKENS)


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class LengthMeasure:
    unit: str
    value: float

    def __post_init__(self) -> None:
        if self.unit not in UNITS:
            raise MetricsError(f"unknown length unit: {self.unit!r}")
        if self.value < 0:
            raise MetricsError(f"negative length: {self.value}")


def measure(text: str, unit: str = WORDS) -> LengthMeasure:
    if unit == WORDS:
        return LengthMeasure(unit, float(len(text.split())))
    if unit == CHARACTERS:
        return LengthMeasure(unit, float(len(text)))
    raise MetricsError(f"cannot measure text in unit {unit!r}")


def compression_rate(baseline_mean: LengthMeasure, candidate_mean: LengthMeasure) -> float:
    if baseline_mean.unit != candidate_mean.unit:
        raise MetricsError(
            f"unit mismatch: {baseline_mean.unit!r} vs {candidate_mean.unit!r}"
        )
    if baseline_mean.value <= 0:
        raise MetricsError("baseline length must be positive")
    return (baseline_mean.value - candidate_mean.value) / baseline_mean.value


@dataclass(frozen=True)
class SampleOutcome:
    sample_id: str
    correct: bool
    gen_length: LengthMeasure


@dataclass
class EvalResult:
    accuracy: float
    n: int
    per_sample: list[SampleOutcome] = field(default_factory=list)
    compression_rate: float | None = None
    length_unit: str = WORDS
    proxy_baseline: bool = False

    def mean_gen_length(self) -> LengthMeasure:
        if not self.per_sample:
            raise MetricsError("no per-sample outcomes")
        total = sum(o.gen_length.value for o in self.per_sample)
        return LengthMeasure(self.length_unit, total / len(self.per_sample))

    def recomputed_accuracy(self) -> float:
        if not self.per_sample:
            raise MetricsError("no per-sample outcomes")
        return sum(1 for o in self.per_sample if o.correct) / len(self.per_sample)

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n": self.n,
            "compression_rate": self.compression_rate,
            "length_unit": self.length_unit,
            "proxy_baseline": self.proxy_baseline,
            "per_sample": [
                {"id": o.sample_id, "correct": o.correct, "gen_length": o.gen_length.value}
                for o in self.per_sample
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalResult":
        return cls(
            accuracy=obj["accuracy"],
            n=obj["n"],
            per_sample=[
                SampleOutcome(
                    rec["id"], rec["correct"], LengthMeasure(obj["length_unit"], rec["gen_length"])
                )
                for rec in obj["per_sample"]
            ],
            compression_rate=obj.get("compression_rate"),
            length_unit=obj["length_unit"],
            proxy_baseline=obj.get("proxy_baseline", False),
        )


def accuracy(gold: Corpus, generations: Mapping[str, str], unit: str = WORDS) -> EvalResult:
    """Exact-match accuracy over a test corpus.

    A generation is correct when the family extraction rule pulls out an
    answer equal to the gold one after canonicalization; an extraction miss
    counts as incorrect, never as an error. Generation lengths are measured
    over the CoT part only (the trailing answer line is stripped).
    """
    missing = [s.id for s in gold if s.id not in generations]
    if missing:
        shown = ", ".join(missing[:10])
        suffix = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
        raise MetricsError(f"missing generations for sample ids: {shown}{suffix}")
    outcomes = []
    for sample in gold:
        generation = generations[sample.id]
        extracted = extract_answer(
            generation, sample.source, options=sample.choices or None, kind=sample.answer.kind
        )
        correct = extracted is not None and extracted == sample.answer
        cot_text = strip_answer_rendering(generation, sample.answer.kind)
        outcomes.append(SampleOutcome(sample.id, correct, measure(cot_text, unit)))
    score = sum(1 for o in outcomes if o.correct) / len(outcomes) if outcomes else 0.0
    return EvalResult(accuracy=score, n=len(outcomes), per_sample=outcomes, length_unit=unit)


def with_compression(result: EvalResult, baseline_mean: LengthMeasure,
                     proxy_baseline: bool = False) -> EvalResult:
    rate = compression_rate(baseline_mean, result.mean_gen_length())
    return replace(result, compression_rate=rate, proxy_baseline=proxy_baseline)


def corpus_compression_summary(
    originals: Corpus, variants: Mapping[str, object], unit: str = WORDS
) -> dict:
    """Corpus-level compression report: mean lengths, overall rate, and a
    breakdown by deciles of original length."""
    missing = [s.id for s in originals if s.id not in variants]
    if missing:
        raise MetricsError(f"missing variants for {len(missing)} sample ids (first: {missing[0]})")
    rows = []
    for sample in originals:
        original_len = measure(sample.rationale_long, unit).value
        variant_len = measure(variants[sample.id].text, unit).value
        rows.append((sample.id, original_len, variant_len))
    mean_original = sum(r[1] for r in rows) / len(rows)
    mean_variant = sum(r[2] for r in rows) / len(rows)
    overall = compression_rate(
        LengthMeasure(unit, mean_original), LengthMeasure(unit, mean_variant)
    )

    by_length = sorted(rows, key=lambda r: (r[1], r[0]))
    deciles = []
    n = len(by_length)
    for decile in range(10):
        start = decile * n // 10
        end = (decile + 1) * n // 10
        chunk = by_length[start:end]
        if not chunk:
            continue
        chunk_original = sum(r[1] for r in chunk) / len(chunk)
        chunk_variant = sum(r[2] for r in chunk) / len(chunk)
        deciles.append(
            {
                "decile": decile + 1,
                "n": len(chunk),
                "mean_original": chunk_original,
                "mean_variant": chunk_variant,
                "compression_rate": (
                    (chunk_original - chunk_variant) / chunk_original if chunk_original else 0.0
                ),
            }
        )
    return {
        "unit": unit,
        "n": len(rows),
        "mean_original": mean_original,
        "mean_variant": mean_variant,
        "compression_rate": overall,
        "deciles": deciles,
    }


def format_percent(value: float) -> str:
    """Render a fraction as a percentage with two decimals (-3.1017 -> -310.17)."""
    return f"{value * 100:.2f}"


def summary_to_json(summary: dict) -> str:
    return json.dumps(summary, ensure_ascii=False, indent=2)
