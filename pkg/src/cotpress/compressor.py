"""Rationale compression: LLM-prompted variants plus a deterministic
extractive reference compressor for offline runs and tests.

Prompt templates live under ``templates/`` as versioned text assets and are
rendered by literal placeholder substitution, so a rendered prompt differs
from the stored asset only at the three substitution points.
"""

from __future__ import annotations

import hashlib
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

from . import backend as backend_mod
from .backend import Backend, RetryPolicy
from .corpus import Corpus, Sample, answer_line, word_count

TEMPLATE_VERSION = "v1"

BUDGET_SLACK = 0.10  # accepted overshoot for LLM word budgets

RATE_LADDER = (50, 60, 70, 80, 90, 100)

# Nominal fraction of the original kept by an unconstrained compression, and
# the nominal growth factor of an expansion; used wherever a level must be
# placed on the compression scale without a measured length.
FREE_KEEP_FRACTION = 0.45
EXPANSION_FACTOR = 4.1


class CompressionError(Exception):
    """A variant could not be produced or validated for a sample."""

    def __init__(self, message: str, sample_id: str = "", level: str = ""):
        super().__init__(message)
        self.sample_id = sample_id
        self.level = level


# ---------------------------------------------------------------------------
# Compression levels and variants.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompressionLevel:
    """A named target for rationale length.

    kind is one of ``original``, ``short-free``, ``short-budgeted``,
    ``expanded``; ``rate`` is the percent reduction for budgeted levels and is
    drawn from the fixed ladder 50..100. Rate 100 means no CoT at all.
    """

    kind: str
    rate: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("original", "short-free", "short-budgeted", "expanded"):
            raise ValueError(f"unknown level kind: {self.kind!r}")
        if self.kind == "short-budgeted":
            if self.rate not in RATE_LADDER:
                raise ValueError(f"budgeted rate must be one of {RATE_LADDER}: {self.rate!r}")
        elif self.rate is not None:
            raise ValueError(f"{self.kind} level takes no rate")

    @property
    def is_short(self) -> bool:
        return self.kind in ("short-free", "short-budgeted")

    @property
    def no_cot(self) -> bool:
        return self.kind == "short-budgeted" and self.rate == 100

    def label(self) -> str:
        if self.kind == "short-budgeted":
            return f"short-{self.rate}"
        return self.kind


ORIGINAL = CompressionLevel("original")
SHORT_FREE = CompressionLevel("short-free")
EXPANDED = CompressionLevel("expanded")


def budgeted(rate: int) -> CompressionLevel:
    return CompressionLevel("short-budgeted", rate)


def compression_value(level: CompressionLevel) -> float:
    """Where a level sits on the compression-rate scale (1 = no CoT at all,
    0 = untouched, negative = longer than the original)."""
    if level.kind == "short-budgeted":
        return level.rate / 100
    if level == SHORT_FREE:
        return 1 - FREE_KEEP_FRACTION
    if level == ORIGINAL:
        return 0.0
    return 1 - EXPANSION_FACTOR


def parse_level(label: str) -> CompressionLevel:
    if label in ("original", "short-free", "expanded"):
        return CompressionLevel(label)
    match = re.fullmatch(r"short-(\d+)", label)
    if match:
        return budgeted(int(match.group(1)))
    raise ValueError(f"unknown level label: {label!r}")


@dataclass(frozen=True)
class RationaleVariant:
    """A rationale at a specific compression level, with provenance."""

    sample_id: str
    level: CompressionLevel
    text: str
    producer: str
    prompt_digest: str

    def __post_init__(self) -> None:
        if not self.text and not (self.level.no_cot or self.level == ORIGINAL):
            raise ValueError(f"empty variant text for {self.sample_id} at {self.level.label()}")


@dataclass(frozen=True)
class CompressionRequest:
    sample: Sample
    level: CompressionLevel
    word_budget: int | None = None

    def __post_init__(self) -> None:
        needs_budget = self.level.kind == "short-budgeted" and not self.level.no_cot
        if needs_budget and (self.word_budget is None or self.word_budget < 1):
            raise ValueError("budgeted request requires word_budget >= 1")
        if not needs_budget and self.word_budget is not None:
            raise ValueError(f"{self.level.label()} request takes no word budget")


def budget_for(sample: Sample, rate: int) -> int:
    """Word budget implied by a compression rate: the residual share of the
    original rationale length (rate 50 keeps half, rate 90 keeps a tenth)."""
    original = word_count(sample.rationale_long)
    return max(1, round(original * (1 - rate / 100)))


def build_request(sample: Sample, level: CompressionLevel) -> CompressionRequest:
    if level.kind == "short-budgeted" and not level.no_cot:
        return CompressionRequest(sample, level, budget_for(sample, level.rate))
    return CompressionRequest(sample, level)


# ---------------------------------------------------------------------------
# Prompt rendering.
# ---------------------------------------------------------------------------

def _load_template(name: str) -> str:
    return (
        resources.files("cotpress.templates")
        .joinpath(f"{name}_{TEMPLATE_VERSION}.txt")
        .read_text(encoding="utf-8")
    )


_INSTRUCTION_SLOT = "<Here is Instruction>"
_COT_SLOT = "<Here is Original CoT>"
_ANSWER_SLOT = "<Here is Final Answer>"
_BUDGET_SLOT = "<Here is Word Numbers>"


def _check_sample(sample: Sample) -> None:
    if not sample.instruction.strip():
        raise ValueError(f"sample {sample.id!r}: empty instruction")
    if not sample.rationale_long.strip():
        raise ValueError(f"sample {sample.id!r}: empty rationale")


def _fill(template: str, sample: Sample) -> str:
    return (
        template.replace(_INSTRUCTION_SLOT, sample.instruction)
        .replace(_COT_SLOT, sample.rationale_long)
        .replace(_ANSWER_SLOT, answer_line(sample.answer))
    )


def render_compress_prompt(sample: Sample) -> str:
    """Free compression prompt; ends with 'SIMPLIFIED THOUGHT PROCESS:'."""
    _check_sample(sample)
    return _fill(_load_template("compress"), sample)


def render_budgeted_prompt(sample: Sample, word_budget: int) -> str:
    """Compression prompt with an explicit word ceiling."""
    _check_sample(sample)
    if word_budget < 1:
        raise ValueError("word_budget must be >= 1; use the rate-100 level for no CoT")
    template = _load_template("compress_budgeted").replace(_BUDGET_SLOT, str(word_budget))
    return _fill(template, sample)


def render_expand_prompt(sample: Sample) -> str:
    """Expansion prompt listing the five expansion strategies."""
    _check_sample(sample)
    return _fill(_load_template("expand"), sample)


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# LLM-backed compression.
# ---------------------------------------------------------------------------

def compress(
    sample: Sample,
    level: CompressionLevel,
    backend: Backend,
    policy: RetryPolicy | None = None,
    cache: backend_mod.CompletionCache | None = None,
) -> RationaleVariant:
    """Produce one validated variant, retrying on validation failures.

    Short variants must come back non-empty and strictly shorter than the
    original; budgeted variants must also land within BUDGET_SLACK of the
    budget. A failed attempt re-prompts with a tightened budget. The rate-100
    level and the original level never touch the backend.
    """
    policy = policy or RetryPolicy()
    if level == ORIGINAL:
        return RationaleVariant(
            sample.id, level, sample.rationale_long, "identity",
            prompt_digest(sample.rationale_long),
        )
    if level.no_cot:
        return RationaleVariant(sample.id, level, "", "no-cot", prompt_digest(sample.id))

    original_words = word_count(sample.rationale_long)
    budget = build_request(sample, level).word_budget
    failure = "no attempts made"
    for attempt in range(policy.max_attempts):
        if level.kind == "expanded":
            prompt = render_expand_prompt(sample)
        elif level.kind == "short-free" and attempt == 0:
            prompt = render_compress_prompt(sample)
        else:
            # Validation-failure retries for the free level fall back to an
            # explicit budget just under the original length.
            if budget is None:
                budget = max(1, original_words - 1)
            prompt = render_budgeted_prompt(sample, budget)
        completion = backend_mod.complete(backend, prompt, cache=cache, retry=policy)
        text = completion.strip()

        if not text:
            failure = "backend returned empty output"
            continue
        if level.kind == "expanded":
            return RationaleVariant(sample.id, level, text, backend.identity, prompt_digest(prompt))
        words = word_count(text)
        if words >= original_words:
            failure = f"variant not shorter than original ({words} >= {original_words} words)"
            budget = max(1, (budget or original_words) // 2)
            continue
        if budget is not None and words > budget * (1 + BUDGET_SLACK):
            failure = f"variant overshoots budget ({words} > {budget} words)"
            budget = max(1, 2 * budget - words)
            continue
        return RationaleVariant(sample.id, level, text, backend.identity, prompt_digest(prompt))

    raise CompressionError(
        f"sample {sample.id!r} at level {level.label()}: {failure} "
        f"after {policy.max_attempts} attempts",
        sample_id=sample.id,
        level=level.label(),
    )


def compress_corpus(
    corpus: Corpus,
    level: CompressionLevel,
    backend: Backend,
    policy: RetryPolicy | None = None,
    cache: backend_mod.CompletionCache | None = None,
    jobs: int = 1,
) -> dict[str, RationaleVariant]:
    """Compress every sample, optionally with bounded parallelism.

    Results are merged by sample id, so completion order does not matter.
    """
    if jobs <= 1:
        return {s.id: compress(s, level, backend, policy, cache) for s in corpus}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        variants = pool.map(lambda s: compress(s, level, backend, policy, cache), corpus.samples)
        return {v.sample_id: v for v in variants}


# ---------------------------------------------------------------------------
# Deterministic extractive reference compressor.
# ---------------------------------------------------------------------------

_CALC_SPAN_RE = re.compile(r"<<[^>]*>>")


def split_sentences(text: str) -> list[str]:
    """Split on sentence punctuation followed by whitespace, treating
    ``<<...>>`` calculator annotations as opaque spans."""
    masked = list(text)
    for match in _CALC_SPAN_RE.finditer(text):
        for i in range(match.start(), match.end()):
            masked[i] = "#"
    boundaries = [0]
    for match in re.finditer(r"[.!?]+\s+", "".join(masked)):
        boundaries.append(match.end())
    boundaries.append(len(text))
    sentences = []
    for start, end in zip(boundaries, boundaries[1:]):
        chunk = text[start:end].strip()
        if chunk:
            sentences.append(chunk)
    return sentences


def _sentence_score(sentence: str, answer_text: str) -> int:
    score = 0
    if any(ch.isdigit() for ch in sentence):
        score += 1
    if "=" in sentence:
        score += 1
    if answer_text and answer_text in sentence:
        score += 1
    return score


def reference_compress(
    sample: Sample, word_budget: int, level: CompressionLevel | None = None
) -> RationaleVariant:
    """Extractive compression to an exact word budget.

    Sentences carrying digits, equation markers, or the final answer string
    rank highest (later sentences win ties); they are kept greedily in
    original order and the sentence that crosses the budget is truncated at
    the budget. Output is always a word-level subsequence of the input.
    ``level`` only tags the returned variant; the budget fixes the length.
    """
    if word_budget < 0:
        raise ValueError("word_budget must be >= 0")
    producer = "reference-extractive"
    digest = prompt_digest(f"{sample.id}|{word_budget}|{sample.rationale_long}")

    def variant(text: str) -> RationaleVariant:
        tag = level or (SHORT_FREE if text else budgeted(100))
        return RationaleVariant(sample.id, tag, text, producer, digest)

    text = sample.rationale_long
    total_words = word_count(text)
    if word_budget == 0:
        return variant("")
    if word_budget >= total_words:
        return variant(text)

    sentences = split_sentences(text)
    scores = [_sentence_score(s, sample.answer.value) for s in sentences]
    priority = sorted(range(len(sentences)), key=lambda i: (-scores[i], -i))

    kept: list[int] = []
    running = 0
    crossing = -1
    for index in priority:
        kept.append(index)
        running += word_count(sentences[index])
        if running >= word_budget:
            crossing = index
            break
    overshoot = running - word_budget
    pieces = []
    for index in sorted(kept):
        words = sentences[index].split()
        if index == crossing and overshoot > 0:
            words = words[: len(words) - overshoot]
        if words:
            pieces.append(" ".join(words))
    return variant(" ".join(pieces))
