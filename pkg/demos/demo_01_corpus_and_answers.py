"""Ingest benchmark-format files into the canonical record model and extract
final answers from free-form generations.

Run: python demos/demo_01_corpus_and_answers.py
"""

import json
import tempfile
from pathlib import Path

from cotpress import extract_answer, ingest
from cotpress.corpus import answer_line, canonical_numeric

GSM8K_SNIPPET = [
    {
        "question": "Natalia sold clips to 48 of her friends in April, and then "
        "she sold half as many clips in May. How many clips did Natalia sell "
        "altogether in April and May?",
        "answer": "Natalia sold 48/2 = <<48/2=24>>24 clips in May.\nNatalia sold "
        "48+24 = <<48+24=72>>72 clips altogether in April and May.\n#### 72",
    },
    {
        "question": "Weng earns $12 an hour for babysitting. Yesterday, she just "
        "did 50 minutes of babysitting. How much did she earn?",
        "answer": "Weng earns 12/60 = $<<12/60=0.2>>0.2 per minute.\nWorking 50 "
        "minutes, she earned 0.2 x 50 = $<<0.2*50=10>>10.\n#### 10",
    },
]

with tempfile.TemporaryDirectory() as tmp:
    source = Path(tmp) / "gsm8k_train.jsonl"
    source.write_text("\n".join(json.dumps(r) for r in GSM8K_SNIPPET) + "\n")
    corpus = ingest(source, family="gsm8k", split="train")

print(f"ingested {len(corpus)} gsm8k samples")
sample = corpus.samples[0]
print(f"  id          = {sample.id}")
print(f"  instruction = {sample.instruction[:60]}...")
print(f"  rationale   = {sample.rationale_long[:60]}...")
print(f"  gold answer = {sample.answer.kind} {sample.answer.value!r}")
print()

# Extraction is last-mention-wins per family schema and never raises.
generations = [
    ("gsm8k", "Adding both months: 48 + 24 = 72. The answer is 72", None),
    ("gsm8k", "I think it's 72.0", None),
    ("gsm8k", "", None),
    ("mathqa", "Dividing gives 4, so the answer is (c).", None),
    ("strategyqa", "No... on reflection the answer is yes.", None),
    ("ecqa", "Many people check it. The answer is office building.",
     ("school", "desk", "office building")),
]
print("extraction examples:")
for family, text, options in generations:
    extracted = extract_answer(text, family, options=options)
    rendered = f"{extracted.kind}:{extracted.value}" if extracted else "absent"
    print(f"  [{family:<10}] {text[:48]!r:<52} -> {rendered}")
print()

print("numeric canonicalization:")
for raw in ("72.0", "+5", "1,234", "3.50", "007"):
    print(f"  {raw!r} -> {canonical_numeric(raw)!r}")
print()

print("gold answers render as training-target answer lines:")
for sample in corpus:
    print(f"  {sample.id}: {answer_line(sample.answer)!r}")
