import json
from pathlib import Path

import pytest

from cotpress.corpus import AnswerValue, Corpus, Sample

GOLDEN_DIR = Path(__file__).parent / "golden"

NATALIA_INSTRUCTION = (
    "Natalia sold clips to 48 of her friends in April, and then she sold half "
    "as many clips in May. How many clips did Natalia sell altogether in April and May?"
)
NATALIA_RATIONALE = (
    "Natalia sold 48/2 = <<48/2=24>>24 clips in May.\n"
    "Natalia sold 48+24 = <<48+24=72>>72 clips altogether in April and May."
)


@pytest.fixture
def natalia_sample() -> Sample:
    return Sample(
        id="gsm8k-00000",
        instruction=NATALIA_INSTRUCTION,
        rationale_long=NATALIA_RATIONALE,
        answer=AnswerValue.numeric("72"),
        source="gsm8k",
    )


@pytest.fixture
def gsm8k_source_file(tmp_path) -> Path:
    records = [
        {
            "question": NATALIA_INSTRUCTION,
            "answer": NATALIA_RATIONALE + "\n#### 72",
        },
        {
            "question": "Weng earns $12 an hour for babysitting. Yesterday, she "
            "just did 50 minutes of babysitting. How much did she earn?",
            "answer": "Weng earns 12/60 = $<<12/60=0.2>>0.2 per minute.\nWorking 50 "
            "minutes, she earned 0.2 x 50 = $<<0.2*50=10>>10.\n#### 10",
        },
        {
            "question": "Betty is saving money for a new wallet which costs $100. "
            "Betty has only half of the money she needs. How much more money does "
            "Betty need?",
            "answer": "Betty has 100/2 = $<<100/2=50>>50.\nBetty needs 100-50 = "
            "$<<100-50=50>>50 more.\n#### 50",
        },
    ]
    path = tmp_path / "gsm8k_train.jsonl"
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def strategyqa_source_file(tmp_path) -> Path:
    records = [
        {
            "qid": f"sq-{i:03d}",
            "question": f"Is the number {i} smaller than {i + 1}?",
            "answer": True,
            "facts": [f"{i} is one less than {i + 1}.", "Smaller means less than."],
        }
        for i in range(12)
    ]
    path = tmp_path / "strategyqa_train.jsonl"
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def ecqa_sample() -> Sample:
    return Sample(
        id="ecqa-00000",
        instruction="Where would you find a clock that is used by many people?\n"
        "Options: school; desk; night stand; wall; office building",
        rationale_long="A school has many people. Schools hang clocks where "
        "everyone can see them.",
        answer=AnswerValue.choice_text("school"),
        source="ecqa",
        choices=("school", "desk", "night stand", "wall", "office building"),
    )


def corpus_of(samples, split="train", family=None) -> Corpus:
    return Corpus(samples=list(samples), split=split, family=family or samples[0].source)
