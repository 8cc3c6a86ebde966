"""Canonical record model for reasoning benchmarks with per-family answer schemas.

Four dataset families are built in (gsm8k, mathqa, ecqa, strategyqa); extra
families can be registered through :func:`register_family`. Every loader maps
source JSONL records onto :class:`Sample`, extracting the gold answer with the
family's schema, so downstream stages never touch raw dataset formats.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable


class CorpusError(Exception):
    """Raised for unreadable, malformed, or inconsistent corpus files."""


NUMERIC_KIND = "numeric"
CHOICE_LETTER_KIND = "choice-letter"
CHOICE_TEXT_KIND = "choice-text"
BOOLEAN_KIND = "boolean"

ANSWER_KINDS = (NUMERIC_KIND, CHOICE_LETTER_KIND, CHOICE_TEXT_KIND, BOOLEAN_KIND)

CHOICE_LETTERS = ("a", "b", "c", "d", "e")

# Signed decimal, optionally with thousands separators ("1,234.50").
_NUMBER_RE = re.compile(r"[-+]?\d+(?:,\d{3})*(?:\.\d+)?")
# Option letter, parenthesized "(c)" or standalone word "c".
_LETTER_RE = re.compile(r"\(([a-eA-E])\)|\b([a-eA-E])\b")
_YESNO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_SENTENCE_END_RE = re.compile(r"[.!?]+(?:\s+|$)")


def canonical_numeric(raw: str) -> str:
    """Normalize a numeric answer string: no thousands separators, no leading
    '+' or redundant zeros, no trailing zeros after the decimal point, no
    dangling period."""
    value = raw.strip().replace(",", "")
    if value.startswith("+"):
        value = value[1:]
    if value.endswith("."):
        value = value[:-1]
    if "." in value:
        value = value.rstrip("0").rstrip(".")
    sign = "-" if value.startswith("-") else ""
    if sign:
        value = value[1:]
    if not value or not value[0].isdigit():
        raise ValueError(f"not a numeric answer: {raw!r}")
    integer, _, fraction = value.partition(".")
    integer = integer.lstrip("0") or "0"
    value = f"{integer}.{fraction}" if fraction else integer
    if value == "0":
        sign = ""
    return sign + value


@dataclass(frozen=True)
class AnswerValue:
    """A gold or extracted answer in canonical string form."""

    kind: str
    value: str

    def __post_init__(self) -> None:
        if self.kind not in ANSWER_KINDS:
            raise ValueError(f"unknown answer kind: {self.kind!r}")
        if self.kind == CHOICE_LETTER_KIND and self.value not in CHOICE_LETTERS:
            raise ValueError(f"choice letter out of range: {self.value!r}")
        if self.kind == BOOLEAN_KIND and self.value not in ("yes", "no"):
            raise ValueError(f"boolean answer must be yes/no: {self.value!r}")

    @classmethod
    def numeric(cls, raw: str) -> "AnswerValue":
        return cls(NUMERIC_KIND, canonical_numeric(raw))

    @classmethod
    def choice_letter(cls, raw: str) -> "AnswerValue":
        return cls(CHOICE_LETTER_KIND, raw.strip().strip("()").lower())

    @classmethod
    def choice_text(cls, raw: str) -> "AnswerValue":
        return cls(CHOICE_TEXT_KIND, raw.strip().casefold())

    @classmethod
    def boolean(cls, raw: str | bool) -> "AnswerValue":
        if isinstance(raw, bool):
            return cls(BOOLEAN_KIND, "yes" if raw else "no")
        text = raw.strip().casefold()
        if text in ("yes", "true"):
            return cls(BOOLEAN_KIND, "yes")
        if text in ("no", "false"):
            return cls(BOOLEAN_KIND, "no")
        raise ValueError(f"not a boolean answer: {raw!r}")


@dataclass(frozen=True)
class Sample:
    """One reasoning problem: instruction, gold long rationale, gold answer."""

    id: str
    instruction: str
    rationale_long: str
    answer: AnswerValue
    source: str
    choices: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.instruction.strip():
            raise ValueError(f"sample {self.id!r}: empty instruction")
        if not self.rationale_long.strip():
            raise ValueError(f"sample {self.id!r}: empty rationale")


@dataclass
class Corpus:
    samples: list[Sample]
    split: str
    family: str

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for sample in self.samples:
            if sample.id in seen:
                raise CorpusError(f"duplicate sample id: {sample.id!r}")
            seen.add(sample.id)
            if sample.source != self.family:
                raise CorpusError(
                    f"sample {sample.id!r} has family {sample.source!r}, "
                    f"expected {self.family!r}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def by_id(self, sample_id: str) -> Sample:
        for sample in self.samples:
            if sample.id == sample_id:
                return sample
        raise KeyError(sample_id)


# ---------------------------------------------------------------------------
# Family registry: loader + answer schema per dataset family.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilySpec:
    name: str
    answer_kind: str
    load_record: Callable[[dict, int], Sample]


def _require(obj: dict, family: str, *names: str) -> list:
    values = []
    for name in names:
        if name not in obj or obj[name] in (None, ""):
            raise CorpusError(f"missing required field {name!r} for family {family!r}")
        values.append(obj[name])
    return values


def _load_gsm8k(obj: dict, index: int) -> Sample:
    question, answer_text = _require(obj, "gsm8k", "question", "answer")
    text = str(answer_text).strip()
    if "####" not in text:
        raise CorpusError("missing required field '#### <answer>' marker for family 'gsm8k'")
    rationale, _, gold = text.rpartition("####")
    return Sample(
        id=str(obj.get("id") or f"gsm8k-{index:05d}"),
        instruction=str(question).strip(),
        rationale_long=rationale.strip(),
        answer=AnswerValue.numeric(gold),
        source="gsm8k",
    )


def _load_mathqa(obj: dict, index: int) -> Sample:
    problem, rationale, options, correct = _require(
        obj, "mathqa", "Problem", "Rationale", "options", "correct"
    )
    return Sample(
        id=str(obj.get("id") or f"mathqa-{index:05d}"),
        instruction=f"{str(problem).strip()}\nOptions: {str(options).strip()}",
        rationale_long=str(rationale).strip(),
        answer=AnswerValue.choice_letter(str(correct)),
        source="mathqa",
    )


def _load_ecqa(obj: dict, index: int) -> Sample:
    question, gold = _require(obj, "ecqa", "q_text", "q_ans")
    options = [str(obj[f"q_op{i}"]).strip() for i in range(1, 6) if obj.get(f"q_op{i}")]
    if not options:
        raise CorpusError("missing required field 'q_op1..q_op5' for family 'ecqa'")
    rationale = str(obj.get("taskB") or obj.get("taskA_pos") or "").strip()
    if not rationale:
        raise CorpusError("missing required field 'taskB' for family 'ecqa'")
    rendered = "; ".join(options)
    return Sample(
        id=str(obj.get("q_no") or f"ecqa-{index:05d}"),
        instruction=f"{str(question).strip()}\nOptions: {rendered}",
        rationale_long=rationale,
        answer=AnswerValue.choice_text(str(gold)),
        source="ecqa",
        choices=tuple(options),
    )


def _load_strategyqa(obj: dict, index: int) -> Sample:
    question, = _require(obj, "strategyqa", "question")
    if "answer" not in obj:
        raise CorpusError("missing required field 'answer' for family 'strategyqa'")
    facts = obj.get("facts") or obj.get("decomposition") or []
    rationale = " ".join(str(f).strip() for f in facts if str(f).strip())
    if not rationale:
        raise CorpusError("missing required field 'facts' for family 'strategyqa'")
    return Sample(
        id=str(obj.get("qid") or f"strategyqa-{index:05d}"),
        instruction=str(question).strip(),
        rationale_long=rationale,
        answer=AnswerValue.boolean(obj["answer"]),
        source="strategyqa",
    )


FAMILIES: dict[str, FamilySpec] = {}


def register_family(spec: FamilySpec) -> None:
    FAMILIES[spec.name] = spec


register_family(FamilySpec("gsm8k", NUMERIC_KIND, _load_gsm8k))
register_family(FamilySpec("mathqa", CHOICE_LETTER_KIND, _load_mathqa))
register_family(FamilySpec("ecqa", CHOICE_TEXT_KIND, _load_ecqa))
register_family(FamilySpec("strategyqa", BOOLEAN_KIND, _load_strategyqa))


def family_spec(family: str) -> FamilySpec:
    try:
        return FAMILIES[family]
    except KeyError:
        raise CorpusError(f"unknown dataset family: {family!r}") from None


# ---------------------------------------------------------------------------
# Ingestion and canonical serialization.
# ---------------------------------------------------------------------------

def ingest(path: str | Path, family: str, split: str) -> Corpus:
    """Load a source JSONL file into a canonical Corpus.

    Raises CorpusError naming the offending line number on malformed JSON and
    the missing field name on schema violations.
    """
    spec = family_spec(family)
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"no such file: {path}")
    samples: list[Sample] = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: malformed JSON on line {line_no}: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}: malformed record on line {line_no}: not an object")
            try:
                samples.append(spec.load_record(obj, len(samples)))
            except (CorpusError, ValueError) as exc:
                raise CorpusError(f"{path}: line {line_no}: {exc}") from None
    if not samples:
        raise CorpusError(f"{path}: no records")
    return Corpus(samples=samples, split=split, family=family)


def split_strategyqa(corpus: Corpus, train_size: int, seed: int) -> tuple[Corpus, Corpus]:
    """Deterministically re-split a strategyqa corpus into train/test parts."""
    if corpus.family != "strategyqa":
        raise CorpusError(f"resplit applies to strategyqa, got {corpus.family!r}")
    if train_size >= len(corpus):
        raise CorpusError(
            f"train_size {train_size} must be smaller than corpus size {len(corpus)}"
        )
    shuffled = list(corpus.samples)
    random.Random(seed).shuffle(shuffled)
    train = Corpus(shuffled[:train_size], split="train", family=corpus.family)
    test = Corpus(shuffled[train_size:], split="test", family=corpus.family)
    return train, test


CANONICAL_FIELDS = ("id", "instruction", "rationale_long", "answer_kind", "answer", "family")


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the canonical line-delimited JSON form."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for sample in corpus.samples:
            record = {
                "id": sample.id,
                "instruction": sample.instruction,
                "rationale_long": sample.rationale_long,
                "answer_kind": sample.answer.kind,
                "answer": sample.answer.value,
                "family": sample.source,
            }
            if sample.choices:
                record["choices"] = list(sample.choices)
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path, split: str) -> Corpus:
    """Reload a canonical corpus file written by :func:`save_corpus`."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"no such file: {path}")
    samples: list[Sample] = []
    family: str | None = None
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: malformed JSON on line {line_no}: {exc.msg}") from None
            try:
                sample = Sample(
                    id=str(obj["id"]),
                    instruction=obj["instruction"],
                    rationale_long=obj["rationale_long"],
                    answer=AnswerValue(obj["answer_kind"], obj["answer"]),
                    source=obj["family"],
                    choices=tuple(obj.get("choices", ())),
                )
            except (KeyError, ValueError) as exc:
                raise CorpusError(f"{path}: line {line_no}: {exc}") from None
            if family is None:
                family = sample.source
            samples.append(sample)
    if not samples:
        raise CorpusError(f"{path}: no records")
    return Corpus(samples=samples, split=split, family=family or "")


# ---------------------------------------------------------------------------
# Answer extraction from model generations (last-mention-wins rules) and the
# family-specific rendering of an answer inside a training target.
# ---------------------------------------------------------------------------

def answer_line(answer: AnswerValue) -> str:
    """Render a gold answer the way training targets end."""
    if answer.kind == NUMERIC_KIND:
        return f"#### {answer.value}"
    if answer.kind == CHOICE_LETTER_KIND:
        return f"The answer is ({answer.value})."
    return f"The answer is {answer.value}."


def _final_sentence(text: str) -> str:
    parts = [p for p in _SENTENCE_END_RE.split(text) if p.strip()]
    return parts[-1] if parts else text


def extract_answer(
    generation: str,
    family: str,
    options: Iterable[str] | None = None,
    kind: str | None = None,
) -> AnswerValue | None:
    """Pull the final answer out of free-form model output.

    Total over arbitrary text: returns None when no candidate is found, never
    raises. ``options`` supplies the candidate strings for choice-text
    families; without them no choice-text answer can be recognized.
    """
    kind = kind or family_spec(family).answer_kind
    if not generation or not generation.strip():
        return None

    if kind == NUMERIC_KIND:
        matches = _NUMBER_RE.findall(generation)
        if not matches:
            return None
        try:
            return AnswerValue.numeric(matches[-1])
        except ValueError:
            return None

    if kind == CHOICE_LETTER_KIND:
        last: str | None = None
        for match in _LETTER_RE.finditer(generation):
            last = (match.group(1) or match.group(2)).lower()
        return AnswerValue(CHOICE_LETTER_KIND, last) if last else None

    if kind == CHOICE_TEXT_KIND:
        if not options:
            return None
        sentence = _final_sentence(generation).casefold()
        best: tuple[int, int] | None = None  # (length, position)
        best_option: str | None = None
        for option in options:
            needle = option.strip().casefold()
            if not needle:
                continue
            position = sentence.rfind(needle)
            if position < 0:
                continue
            ranking = (len(needle), position)
            if best is None or ranking > best:
                best = ranking
                best_option = needle
        return AnswerValue(CHOICE_TEXT_KIND, best_option) if best_option else None

    if kind == BOOLEAN_KIND:
        matches = _YESNO_RE.findall(generation)
        return AnswerValue(BOOLEAN_KIND, matches[-1].lower()) if matches else None

    return None


def strip_answer_rendering(text: str, kind: str) -> str:
    """Remove the trailing answer line from a generation, leaving the CoT."""
    if kind == NUMERIC_KIND:
        return re.sub(r"\n?\s*####[^\n]*\s*$", "", text)
    return re.sub(r"(?is)\s*\bthe answer is\b[^.]*\.?\s*$", "", text)


def word_count(text: str) -> int:
    """Uniform length unit: tokens produced by Unicode-whitespace splitting."""
    return len(text.split())
