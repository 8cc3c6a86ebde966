"""Class-conditioned record construction.

Every training or inference input is a verbatim condition prefix, one space,
then the instruction. The prefix registry is data, not code: new condition
classes can be added without touching the builders, and any emitted input can
be parsed back into (condition, instruction) by longest-prefix match.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path

from .compressor import CompressionLevel, ORIGINAL, RationaleVariant, budgeted
from .corpus import Corpus, Sample, answer_line

SCHEMA_VERSION = "1"


class ConditionError(Exception):
    pass


@dataclass(frozen=True)
class Condition:
    class_id: str
    prefix: str


LONG = Condition("long", "Answer and provide a detailed thought process:")
SHORT = Condition("short", "Answer and provide as brief a thought process as possible:")

# Mixed-conditions classes: level k maps onto the rate ladder ascending, so
# level 1 is the mildest compression (50%) and level 6 drops the CoT (100%).
LEVEL_RATES = {1: 50, 2: 60, 3: 70, 4: 80, 5: 90, 6: 100}
RATE_LEVELS = {rate: k for k, rate in LEVEL_RATES.items()}


def short_level(k: int) -> Condition:
    if k not in LEVEL_RATES:
        raise ConditionError(f"short level must be 1..6, got {k}")
    return Condition(
        f"short-level-{k}",
        f"Answer and provide a thought process in compression level of {k}:",
    )


def condition_for_level(level: CompressionLevel) -> Condition:
    """Mixed-conditions class for a budgeted compression level."""
    if level.kind != "short-budgeted":
        raise ConditionError(f"no mixed condition for level {level.label()}")
    return short_level(RATE_LEVELS[level.rate])


_LEVEL_PREFIX_RE = re.compile(
    r"^Answer and provide a thought process in compression level of (\d):"
)


def registered_conditions() -> list[Condition]:
    return [LONG, SHORT] + [short_level(k) for k in LEVEL_RATES]


def render_inference_input(instruction: str, condition: Condition) -> str:
    return f"{condition.prefix} {instruction}"


def parse_conditioned_input(text: str) -> tuple[Condition, str] | None:
    """Recover (condition, instruction) from an emitted input; None when no
    registered prefix matches."""
    match = _LEVEL_PREFIX_RE.match(text)
    candidates = [c for c in (LONG, SHORT) if text.startswith(c.prefix)]
    if match and int(match.group(1)) in LEVEL_RATES:
        candidates.append(short_level(int(match.group(1))))
    if not candidates:
        return None
    condition = max(candidates, key=lambda c: len(c.prefix))
    rest = text[len(condition.prefix):]
    return condition, rest[1:] if rest.startswith(" ") else rest


@dataclass(frozen=True)
class ConditionedRecord:
    sample_id: str
    condition: Condition
    input: str
    target: str | None
    role: str  # train | inference
    level: CompressionLevel

    def __post_init__(self) -> None:
        if self.role == "train" and self.target is None:
            raise ConditionError(f"train record without target: {self.sample_id}")
        if self.role == "inference" and self.target is not None:
            raise ConditionError(f"inference record carries a target: {self.sample_id}")
        if not self.input.startswith(self.condition.prefix):
            raise ConditionError(f"input does not start with its condition prefix: {self.sample_id}")


@dataclass
class ConditionedDataset:
    records: list[ConditionedRecord]
    shuffle_seed: int
    schema_version: str = SCHEMA_VERSION


def training_target(sample: Sample, rationale_text: str) -> str:
    """Rationale followed by the family answer line; the line alone when the
    rationale is empty (the no-CoT level)."""
    line = answer_line(sample.answer)
    return f"{rationale_text}\n{line}" if rationale_text else line


def _train_record(sample: Sample, condition: Condition, rationale_text: str,
                  level: CompressionLevel) -> ConditionedRecord:
    return ConditionedRecord(
        sample_id=sample.id,
        condition=condition,
        input=render_inference_input(sample.instruction, condition),
        target=training_target(sample, rationale_text),
        role="train",
        level=level,
    )


def _require_coverage(corpus: Corpus, have, describe) -> None:
    missing = [s.id for s in corpus if not have(s.id)]
    if missing:
        shown = ", ".join(missing[:10])
        suffix = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
        raise ConditionError(f"missing {describe} for sample ids: {shown}{suffix}")


def _shuffled(records: list[ConditionedRecord], seed: int) -> list[ConditionedRecord]:
    shuffled = list(records)
    random.Random(seed).shuffle(shuffled)
    return shuffled


def build_two_class(
    corpus: Corpus,
    shorts: dict[str, RationaleVariant],
    seed: int,
    longs: dict[str, RationaleVariant] | None = None,
) -> ConditionedDataset:
    """One Long and one Short record per sample, deterministically shuffled.

    ``longs`` overrides the long-side rationale (used for expanded CoT); by
    default the long side is the sample's original rationale.
    """
    _require_coverage(corpus, lambda i: i in shorts, "short variant")
    if longs is not None:
        _require_coverage(corpus, lambda i: i in longs, "long variant")
    records = []
    for sample in corpus:
        if longs is None:
            records.append(_train_record(sample, LONG, sample.rationale_long, ORIGINAL))
        else:
            records.append(_train_record(sample, LONG, longs[sample.id].text, longs[sample.id].level))
        short = shorts[sample.id]
        records.append(_train_record(sample, SHORT, short.text, short.level))
    return ConditionedDataset(_shuffled(records, seed), shuffle_seed=seed)


def build_mixed(
    corpus: Corpus,
    variants: dict[tuple[str, CompressionLevel], RationaleVariant],
    levels: list[int],
    seed: int,
) -> ConditionedDataset:
    """One Long record plus one record per short condition level per sample."""
    compression_levels = {k: budgeted(LEVEL_RATES[k]) for k in levels}
    for k, level in compression_levels.items():
        _require_coverage(
            corpus, lambda i, lv=level: (i, lv) in variants, f"level-{k} variant"
        )
    records = []
    for sample in corpus:
        records.append(_train_record(sample, LONG, sample.rationale_long, ORIGINAL))
        for k in levels:
            level = compression_levels[k]
            variant = variants[(sample.id, level)]
            records.append(_train_record(sample, short_level(k), variant.text, level))
    return ConditionedDataset(_shuffled(records, seed), shuffle_seed=seed)


def build_adaptive(
    corpus: Corpus,
    assignment: dict[str, tuple[CompressionLevel, RationaleVariant]],
    seed: int,
) -> ConditionedDataset:
    """One Long record plus one Short record carrying each sample's assigned
    (most compressed still-answerable) variant."""
    _require_coverage(corpus, lambda i: i in assignment, "level assignment")
    records = []
    for sample in corpus:
        level, variant = assignment[sample.id]
        records.append(_train_record(sample, LONG, sample.rationale_long, ORIGINAL))
        records.append(_train_record(sample, SHORT, variant.text, level))
    return ConditionedDataset(_shuffled(records, seed), shuffle_seed=seed)


def build_single(
    corpus: Corpus,
    condition: Condition,
    texts: dict[str, str] | None,
    seed: int,
    level: CompressionLevel = ORIGINAL,
) -> ConditionedDataset:
    """Single-class dataset (the plain-SFT baselines). ``texts`` of None means
    train on the original rationales."""
    if texts is not None:
        _require_coverage(corpus, lambda i: i in texts, "rationale text")
    records = [
        _train_record(
            sample,
            condition,
            sample.rationale_long if texts is None else texts[sample.id],
            level,
        )
        for sample in corpus
    ]
    return ConditionedDataset(_shuffled(records, seed), shuffle_seed=seed)


# ---------------------------------------------------------------------------
# On-disk form: JSONL of {input, target} plus a sidecar manifest that keeps
# ids, condition classes, and levels aligned with the data lines.
# ---------------------------------------------------------------------------

def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.json")


def save_dataset(dataset: ConditionedDataset, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in dataset.records:
            handle.write(
                json.dumps({"input": record.input, "target": record.target}, ensure_ascii=False)
                + "\n"
            )
    manifest = {
        "schema_version": dataset.schema_version,
        "shuffle_seed": dataset.shuffle_seed,
        "level_rates": {str(k): rate for k, rate in LEVEL_RATES.items()},
        "records": [
            {"id": r.sample_id, "condition": r.condition.class_id, "level": r.level.label()}
            for r in dataset.records
        ],
    }
    if extra:
        manifest.update(extra)
    sidecar_path(path).write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def load_sidecar(path: str | Path) -> dict | None:
    sidecar = sidecar_path(path)
    if not sidecar.exists():
        return None
    return json.loads(sidecar.read_text(encoding="utf-8"))
