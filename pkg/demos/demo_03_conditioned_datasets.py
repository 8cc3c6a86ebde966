"""Class-conditioned dataset construction: every instruction appears once per
condition class, prefixed with that class's verbatim string.

Run: python demos/demo_03_conditioned_datasets.py
"""

from collections import Counter

from cotpress import build_mixed, build_two_class, parse_conditioned_input
from cotpress.compressor import budget_for, budgeted, reference_compress
from cotpress.conditioner import LONG, SHORT, render_inference_input, short_level
from cotpress.mock import synthetic_corpus

corpus = synthetic_corpus(6)
shorts = {s.id: reference_compress(s, budget_for(s, 50), budgeted(50)) for s in corpus}

print("condition classes:")
for condition in [LONG, SHORT, short_level(1), short_level(6)]:
    print(f"  {condition.class_id:<14} {condition.prefix!r}")
print()

two_class = build_two_class(corpus, shorts, seed=7)
print(f"two-class dataset: {len(corpus)} samples -> {len(two_class.records)} records")
print(f"  per condition: {dict(Counter(r.condition.class_id for r in two_class.records))}")
record = two_class.records[0]
print("  first record after the deterministic shuffle:")
print(f"    input  = {record.input[:90]}...")
print(f"    target = {record.target!r}")
condition, instruction = parse_conditioned_input(record.input)
print(f"    prefix parses back to class={condition.class_id!r}, instruction intact: "
      f"{instruction == corpus.by_id(record.sample_id).instruction}")
print()

# Mixed conditions: one record per compression level per sample, plus Long.
variants = {}
for rate in (50, 60, 70, 80, 90, 100):
    level = budgeted(rate)
    for sample in corpus:
        budget = 0 if level.no_cot else budget_for(sample, rate)
        variants[(sample.id, level)] = reference_compress(sample, budget, level)

mixed = build_mixed(corpus, variants, levels=[1, 2, 3, 4, 5, 6], seed=7)
print(f"mixed dataset: {len(corpus)} samples x (1 long + 6 levels) -> {len(mixed.records)} records")
print(f"  per condition: {dict(sorted(Counter(r.condition.class_id for r in mixed.records).items()))}")
print()

print("inference inputs are the same prefixes applied to a bare question:")
question = corpus.samples[0].instruction
for condition in (SHORT, short_level(3)):
    print(f"  {render_inference_input(question, condition)}")
