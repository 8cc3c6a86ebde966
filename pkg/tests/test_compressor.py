import random

import pytest

from cotpress.backend import MockBackend, RetryPolicy
from cotpress.cache import CompletionCache
from cotpress.compressor import (
    CompressionError,
    CompressionRequest,
    EXPANDED,
    ORIGINAL,
    SHORT_FREE,
    budget_for,
    budgeted,
    compress,
    compress_corpus,
    compression_value,
    parse_level,
    reference_compress,
    render_budgeted_prompt,
    render_compress_prompt,
    render_expand_prompt,
    split_sentences,
)
from cotpress.corpus import AnswerValue, Sample, word_count
from tests.conftest import GOLDEN_DIR

EXPANSION_STRATEGIES = (
    "Think About The Word",
    "Read the Question Again",
    "Repeat State",
    "Self-Verification",
    "Make Equation",
)


class TestPromptRendering:
    def test_compress_prompt_matches_golden(self, natalia_sample):
        expected = (GOLDEN_DIR / "compress_prompt_natalia.txt").read_text(encoding="utf-8")
        assert render_compress_prompt(natalia_sample) == expected

    def test_compress_prompt_structure(self, natalia_sample):
        prompt = render_compress_prompt(natalia_sample)
        for header in ("QUESTION:", "THOUGHT PROCESS:", "ANSWER:"):
            assert header in prompt
        assert natalia_sample.instruction in prompt
        assert natalia_sample.rationale_long in prompt
        assert "#### 72" in prompt
        assert prompt.endswith("SIMPLIFIED THOUGHT PROCESS:")

    def test_budgeted_prompt_matches_golden(self, natalia_sample):
        expected = (GOLDEN_DIR / "compress_budgeted_prompt_natalia_20.txt").read_text(
            encoding="utf-8"
        )
        assert render_budgeted_prompt(natalia_sample, 20) == expected

    def test_budgeted_prompt_contains_budget(self, natalia_sample):
        assert "no more than 20 words" in render_budgeted_prompt(natalia_sample, 20)

    def test_budget_one_renders(self, natalia_sample):
        assert "no more than 1 words" in render_budgeted_prompt(natalia_sample, 1)

    def test_budget_zero_is_an_error(self, natalia_sample):
        with pytest.raises(ValueError, match="rate-100"):
            render_budgeted_prompt(natalia_sample, 0)

    def test_expand_prompt_matches_golden(self, natalia_sample):
        expected = (GOLDEN_DIR / "expand_prompt_natalia.txt").read_text(encoding="utf-8")
        assert render_expand_prompt(natalia_sample) == expected

    def test_expand_prompt_lists_all_five_strategies(self, natalia_sample):
        prompt = render_expand_prompt(natalia_sample)
        for strategy in EXPANSION_STRATEGIES:
            assert strategy in prompt
        assert prompt.endswith("EXPANDED THOUGHT PROCESS:")

    def test_empty_rationale_rejected_at_construction(self):
        with pytest.raises(ValueError, match="empty rationale"):
            Sample("x", "question?", "   ", AnswerValue.numeric("1"), "gsm8k")


class TestLevelsAndRequests:
    def test_labels_round_trip(self):
        for level in (ORIGINAL, SHORT_FREE, EXPANDED, budgeted(50), budgeted(100)):
            assert parse_level(level.label()) == level

    def test_rate_outside_ladder_rejected(self):
        with pytest.raises(ValueError):
            budgeted(55)

    def test_no_cot_flag(self):
        assert budgeted(100).no_cot
        assert not budgeted(90).no_cot

    def test_budget_for_residual_share(self, natalia_sample):
        # 19-word rationale: rate 50 keeps ~half, rate 90 a tenth.
        assert word_count(natalia_sample.rationale_long) == 19
        assert budget_for(natalia_sample, 50) == 10
        assert budget_for(natalia_sample, 90) == 2

    def test_request_budget_presence(self, natalia_sample):
        with pytest.raises(ValueError):
            CompressionRequest(natalia_sample, budgeted(50), None)
        with pytest.raises(ValueError):
            CompressionRequest(natalia_sample, SHORT_FREE, 5)
        CompressionRequest(natalia_sample, budgeted(50), 10)
        CompressionRequest(natalia_sample, budgeted(100))

    def test_compression_value_ordering(self):
        values = [
            compression_value(level)
            for level in (budgeted(100), SHORT_FREE, budgeted(50), ORIGINAL, EXPANDED)
        ]
        assert values == sorted(values, reverse=True)


class TestCompressWithBackend:
    def test_fixture_completion_accepted(self, natalia_sample):
        prompt = render_compress_prompt(natalia_sample)
        backend = MockBackend(fixtures={prompt: "She sold 72 clips in April and May."})
        variant = compress(natalia_sample, SHORT_FREE, backend)
        assert variant.text == "She sold 72 clips in April and May."
        assert variant.level == SHORT_FREE
        assert variant.producer == backend.identity
        assert backend.calls == 1

    def test_prompt_digest_recomputable_from_template_and_sample(self, natalia_sample):
        from cotpress.compressor import prompt_digest

        prompt = render_compress_prompt(natalia_sample)
        backend = MockBackend(fixtures={prompt: "She sold 72 clips."})
        variant = compress(natalia_sample, SHORT_FREE, backend)
        assert variant.prompt_digest == prompt_digest(prompt)

    def test_no_cot_level_skips_backend(self, natalia_sample):
        backend = MockBackend(fixtures={})
        variant = compress(natalia_sample, budgeted(100), backend)
        assert variant.text == ""
        assert backend.calls == 0

    def test_original_level_returns_rationale(self, natalia_sample):
        variant = compress(natalia_sample, ORIGINAL, MockBackend())
        assert variant.text == natalia_sample.rationale_long

    def test_never_shorter_output_fails_after_retries(self, natalia_sample):
        long_text = "word " * 40
        backend = MockBackend(default_fn=lambda prompt: long_text)
        policy = RetryPolicy(max_attempts=3)
        with pytest.raises(CompressionError, match="not shorter"):
            compress(natalia_sample, SHORT_FREE, backend, policy)
        assert backend.calls == 3

    def test_budget_overshoot_retries_with_reduced_budget(self, natalia_sample):
        # budget 10 -> 13-word reply overshoots (13 > 11); retry budget 2*10-13=7.
        first = render_budgeted_prompt(natalia_sample, 10)
        second = render_budgeted_prompt(natalia_sample, 7)
        backend = MockBackend(
            fixtures={
                first: "one two three four five six seven eight nine ten eleven twelve thirteen",
                second: "Natalia sold 72 clips total.",
            }
        )
        variant = compress(natalia_sample, budgeted(50), backend)
        assert variant.text == "Natalia sold 72 clips total."
        assert backend.calls == 2

    def test_within_slack_accepted(self, natalia_sample):
        # budget 10 with 11 words is inside the 10% slack.
        prompt = render_budgeted_prompt(natalia_sample, 10)
        text = "one two three four five six seven eight nine ten eleven"
        backend = MockBackend(fixtures={prompt: text})
        assert compress(natalia_sample, budgeted(50), backend).text == text

    def test_cache_avoids_second_backend_call(self, natalia_sample, tmp_path):
        prompt = render_compress_prompt(natalia_sample)
        backend = MockBackend(fixtures={prompt: "She sold 72 clips."})
        cache = CompletionCache(tmp_path / "cache")
        first = compress(natalia_sample, SHORT_FREE, backend, cache=cache)
        second = compress(natalia_sample, SHORT_FREE, backend, cache=cache)
        assert backend.calls == 1
        assert first == second

    def test_empty_completion_fails(self, natalia_sample):
        backend = MockBackend(default_fn=lambda prompt: "   ")
        with pytest.raises(CompressionError, match="empty"):
            compress(natalia_sample, SHORT_FREE, backend, RetryPolicy(max_attempts=2))

    def test_compress_corpus_parallel_matches_serial(self, gsm8k_source_file):
        from cotpress.corpus import ingest

        corpus = ingest(gsm8k_source_file, "gsm8k", "train")
        backend = MockBackend(default_fn=lambda prompt: "Key fact: 72.")
        serial = compress_corpus(corpus, SHORT_FREE, backend)
        parallel = compress_corpus(corpus, SHORT_FREE, backend, jobs=4)
        assert serial == parallel
        assert set(serial) == set(corpus.ids())


def _is_word_subsequence(output: str, source: str) -> bool:
    source_words = iter(source.split())
    return all(any(word == candidate for candidate in source_words) for word in output.split())


class TestReferenceCompress:
    def test_budget_zero_is_empty(self, natalia_sample):
        assert reference_compress(natalia_sample, 0).text == ""

    def test_budget_at_least_length_is_identity(self, natalia_sample):
        total = word_count(natalia_sample.rationale_long)
        assert reference_compress(natalia_sample, total).text == natalia_sample.rationale_long
        assert reference_compress(natalia_sample, total + 7).text == natalia_sample.rationale_long

    def test_natalia_budget_10_keeps_final_equation_sentence(self, natalia_sample):
        # Hand-run of the scoring rule: the second sentence scores 3 (digits,
        # '=', and the answer string), the first only 2, so the second is kept
        # and truncated to exactly 10 words.
        variant = reference_compress(natalia_sample, 10)
        assert variant.text == "Natalia sold 48+24 = <<48+24=72>>72 clips altogether in April and"
        assert word_count(variant.text) == 10

    def test_exact_budget_when_compressing(self, natalia_sample):
        for budget in range(1, word_count(natalia_sample.rationale_long)):
            assert word_count(reference_compress(natalia_sample, budget).text) == budget

    def test_deterministic(self, natalia_sample):
        assert reference_compress(natalia_sample, 7) == reference_compress(natalia_sample, 7)

    def test_sentence_split_respects_calc_annotations(self):
        text = "First <<1.5*2=3.0>>3 units. Then done."
        assert split_sentences(text) == ["First <<1.5*2=3.0>>3 units.", "Then done."]

    def test_negative_budget_rejected(self, natalia_sample):
        with pytest.raises(ValueError):
            reference_compress(natalia_sample, -1)


def _random_sample(rng: random.Random, index: int) -> Sample:
    filler = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"]
    sentences = []
    answer = rng.randrange(2, 99)
    for _ in range(rng.randrange(1, 7)):
        words = [rng.choice(filler) for _ in range(rng.randrange(1, 9))]
        if rng.random() < 0.5:
            words.append(str(rng.randrange(0, 50)))
        if rng.random() < 0.3:
            words.append(f"{rng.randrange(1, 9)} + {rng.randrange(1, 9)} = {rng.randrange(2, 18)}")
        sentences.append(" ".join(words) + ".")
    sentences.append(f"Therefore the result is {answer}.")
    return Sample(
        id=f"rnd-{index:04d}",
        instruction=f"[rnd-{index:04d}] Solve the puzzle.",
        rationale_long=" ".join(sentences),
        answer=AnswerValue.numeric(str(answer)),
        source="gsm8k",
    )


class TestReferenceCompressProperties:
    def test_randomized_properties(self):
        rng = random.Random(20240817)
        for index in range(250):
            sample = _random_sample(rng, index)
            total = word_count(sample.rationale_long)
            budget = rng.randrange(0, total + 3)
            out = reference_compress(sample, budget).text
            assert _is_word_subsequence(out, sample.rationale_long), sample.id
            assert word_count(out) == min(budget, total)
            smaller = reference_compress(sample, max(0, budget - 1)).text
            assert word_count(smaller) <= word_count(out)
