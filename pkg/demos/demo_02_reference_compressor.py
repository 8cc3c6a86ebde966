"""The deterministic extractive compressor: sentences scoring highest on
digits, equation markers, and the final answer survive; output length equals
the word budget exactly.

Run: python demos/demo_02_reference_compressor.py
"""

from cotpress import reference_compress
from cotpress.compressor import budget_for, budgeted
from cotpress.corpus import AnswerValue, Sample, word_count
from cotpress.metrics import corpus_compression_summary
from cotpress.mock import synthetic_corpus

sample = Sample(
    id="demo-0",
    instruction="Natalia sold clips to 48 of her friends in April, and then she "
    "sold half as many clips in May. How many clips did Natalia sell altogether "
    "in April and May?",
    rationale_long="Natalia sold 48/2 = <<48/2=24>>24 clips in May.\n"
    "Natalia sold 48+24 = <<48+24=72>>72 clips altogether in April and May.",
    answer=AnswerValue.numeric("72"),
    source="gsm8k",
)

total = word_count(sample.rationale_long)
print(f"original rationale ({total} words):")
print(f"  {sample.rationale_long!r}")
print()

print("budget ladder (output word count always equals min(budget, total)):")
for budget in (0, 4, 10, total, total + 5):
    variant = reference_compress(sample, budget)
    print(f"  budget {budget:>3} -> {word_count(variant.text):>3} words: {variant.text!r}")
print()

# Rate-derived budgets: rate 90 keeps a tenth of the words, rate 50 keeps half.
print("rate-derived budgets:")
for rate in (50, 70, 90):
    budget = budget_for(sample, rate)
    variant = reference_compress(sample, budget, budgeted(rate))
    print(f"  rate {rate}% -> budget {budget:>2} -> {variant.text!r}")
print()

# Corpus-level compression summary over a synthetic corpus at rate 50.
corpus = synthetic_corpus(40)
variants = {
    s.id: reference_compress(s, budget_for(s, 50), budgeted(50)) for s in corpus
}
summary = corpus_compression_summary(corpus, variants)
print(
    f"corpus summary: mean {summary['mean_original']:.1f} -> "
    f"{summary['mean_variant']:.1f} words, compression rate "
    f"{summary['compression_rate'] * 100:.1f}%"
)
print("by original-length decile:")
for bucket in summary["deciles"]:
    print(
        f"  decile {bucket['decile']:>2}: n={bucket['n']} "
        f"mean {bucket['mean_original']:.1f} -> {bucket['mean_variant']:.1f} "
        f"(rate {bucket['compression_rate'] * 100:.1f}%)"
    )
