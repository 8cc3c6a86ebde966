"""End-to-end experiment pipelines against the mock oracle: the long-CoT
baseline fixes the benchmark length, the two-class build compresses at a
fixed rate, and the adaptive build compresses each sample as far as it can
survive. Re-running against the warmed completion cache touches no backend.

Run: python demos/demo_05_full_experiment.py
"""

import tempfile
from pathlib import Path

from cotpress import ExperimentConfig, report, run_experiment
from cotpress.corpus import save_corpus
from cotpress.mock import synthetic_corpus

THRESHOLDS = {
    "short-100": 0.15,
    "short-90": 0.30,
    "short-80": 0.45,
    "short-70": 0.60,
    "short-60": 0.75,
    "short-50": 0.90,
}

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    train_path = root / "train.jsonl"
    test_path = root / "test.jsonl"
    save_corpus(synthetic_corpus(60, prefix="s"), train_path)
    save_corpus(synthetic_corpus(20, split="test", prefix="t"), test_path)

    def config(method, name, **overrides):
        base = dict(
            method=method,
            run_dir=str(root / "runs" / name),
            family="synthetic",
            train_path=str(train_path),
            test_path=str(test_path),
            seed=7,
            compressor={"kind": "reference", "rate": 50},
            trainer={
                "kind": "mock-oracle",
                "oracle": {"difficulty": "spread", "thresholds": THRESHOLDS},
            },
            cache_dir=str(root / "cache"),
        )
        base.update(overrides)
        return ExperimentConfig(**base)

    long_manifest = run_experiment(config("long_cot", "long"))
    baseline = str(root / "runs" / "long" / "manifest.json")
    c3ot_manifest = run_experiment(
        config("c3ot", "two_class", baseline_manifest=baseline)
    )
    adapt_manifest = run_experiment(
        config("c3ot_adapt", "adapt", ladder=[50, 60, 70, 80, 90, 100],
               baseline_manifest=baseline)
    )

    table, _ = report([long_manifest, c3ot_manifest, adapt_manifest])
    print(table)
    print()
    print(f"adaptive selection histogram: {adapt_manifest['adaptive']['histogram']}")
    print()

    replay = run_experiment(
        config("c3ot", "two_class_replay", baseline_manifest=baseline)
    )
    print("warm-cache replay:")
    print(f"  completion transport calls: {replay['transport']['trainer']['completions']}")
    print(f"  cache hits: {replay['cache']['hits']}")
    same = [s["digest"] for s in replay["stages"]] == [
        s["digest"] for s in c3ot_manifest["stages"]
    ]
    print(f"  artifact digests identical to the first run: {same}")
