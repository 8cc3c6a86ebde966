import json

import pytest

from cotpress.adaptive import (
    AdaptiveError,
    ProbeError,
    RateLadder,
    SelectionState,
    fold_split,
    pass_from_attempts,
    probe_level,
    run_waterfall,
)
from cotpress.backend import TrainError
from cotpress.compressor import ORIGINAL, budgeted, budget_for, reference_compress
from cotpress.conditioner import load_sidecar
from cotpress.mock import MockOracleBackend, mock_oracle, spread_difficulty, synthetic_corpus

THRESHOLDS = {
    budgeted(100): 0.15,
    budgeted(90): 0.30,
    budgeted(80): 0.45,
    budgeted(70): 0.60,
    budgeted(60): 0.75,
    budgeted(50): 0.90,
}

LADDER = RateLadder.from_rates([50, 60, 70, 80, 90, 100])


def ladder_variants(corpus, ladder=LADDER):
    variants = {}
    for level in ladder.probed:
        for sample in corpus:
            budget = 0 if level.no_cot else budget_for(sample, level.rate)
            variants[(sample.id, level)] = reference_compress(sample, budget, level)
    return variants


class TestFoldSplit:
    def test_even_split(self):
        parts = fold_split([f"i{i}" for i in range(10)], 5, seed=1)
        assert [len(p) for p in parts] == [2, 2, 2, 2, 2]

    def test_remainder_rule(self):
        parts = fold_split([f"i{i}" for i in range(11)], 5, seed=1)
        assert sorted(len(p) for p in parts) == [2, 2, 2, 2, 3]
        assert max(len(p) for p in parts) - min(len(p) for p in parts) == 1

    def test_union_and_disjointness(self):
        ids = [f"i{i}" for i in range(23)]
        parts = fold_split(ids, 5, seed=9)
        flat = [sid for part in parts for sid in part]
        assert sorted(flat) == sorted(ids)
        assert len(flat) == len(set(flat))

    def test_same_seed_identical(self):
        ids = [f"i{i}" for i in range(17)]
        assert fold_split(ids, 5, seed=4) == fold_split(ids, 5, seed=4)
        assert fold_split(ids, 5, seed=4) != fold_split(ids, 5, seed=5)

    def test_too_few_ids(self):
        with pytest.raises(AdaptiveError, match="cannot split"):
            fold_split(["a", "b"], 3, seed=0)

    def test_k_below_two(self):
        with pytest.raises(AdaptiveError, match=">= 2"):
            fold_split(["a", "b", "c"], 1, seed=0)


class TestPassRule:
    def test_hand_built_outcome_matrices(self):
        assert pass_from_attempts((True, True, True)) is True
        assert pass_from_attempts((False, False, False)) is False
        # the exactly-one-pass cases
        assert pass_from_attempts((True, False, False)) is True
        assert pass_from_attempts((False, True, False)) is True
        assert pass_from_attempts((False, False, True)) is True


class TestRateLadder:
    def test_default_shape(self):
        assert LADDER.levels[0] == budgeted(100)
        assert LADDER.levels[-1] == ORIGINAL
        assert len(LADDER.probed) == 6

    def test_must_end_with_original(self):
        with pytest.raises(AdaptiveError, match="fallback"):
            RateLadder((budgeted(100), budgeted(50)))

    def test_strictly_decreasing(self):
        with pytest.raises(AdaptiveError, match="strictly decrease"):
            RateLadder((budgeted(50), budgeted(100), ORIGINAL))


class TestProbeLevel:
    def test_all_easy_samples_pass(self, tmp_path):
        corpus = synthetic_corpus(10)
        oracle = mock_oracle({sid: 0.05 for sid in corpus.ids()}, THRESHOLDS)
        variants = ladder_variants(corpus)
        pass_map, outcomes, log = probe_level(
            corpus, corpus.ids(), budgeted(100), variants, oracle,
            seeds=(1, 2, 3), folds=5, workdir=tmp_path,
        )
        assert all(pass_map.values())
        assert all(flags == (True, True, True) for flags in outcomes.values())
        assert log["passed"] == 10

    def test_pass_set_matches_oracle_truth_table(self, tmp_path):
        corpus = synthetic_corpus(20)
        difficulty = spread_difficulty(corpus)
        oracle = mock_oracle(difficulty, THRESHOLDS)
        variants = ladder_variants(corpus)
        level = budgeted(80)
        pass_map, _, _ = probe_level(
            corpus, corpus.ids(), level, variants, oracle,
            seeds=(1, 2, 3), folds=5, workdir=tmp_path,
        )
        expected = {sid: difficulty[sid] <= THRESHOLDS[level] for sid in corpus.ids()}
        assert pass_map == expected

    def test_missing_variants_rejected(self, tmp_path):
        corpus = synthetic_corpus(6)
        oracle = mock_oracle(spread_difficulty(corpus), THRESHOLDS)
        with pytest.raises(AdaptiveError, match="missing"):
            probe_level(
                corpus, corpus.ids(), budgeted(100), {}, oracle,
                seeds=(1, 2, 3), folds=3, workdir=tmp_path,
            )

    def test_seed_isolation(self, tmp_path):
        corpus = synthetic_corpus(15)
        difficulty = spread_difficulty(corpus)
        variants = ladder_variants(corpus)
        level = budgeted(70)

        def run(seeds, workdir):
            oracle = mock_oracle(difficulty, THRESHOLDS, noise_seed=7, noise_rate=0.25)
            _, outcomes, _ = probe_level(
                corpus, corpus.ids(), level, variants, oracle,
                seeds=seeds, folds=5, workdir=workdir,
            )
            return outcomes

        base = run((1, 2, 3), tmp_path / "a")
        changed = run((1, 2, 4), tmp_path / "b")
        for sid in corpus.ids():
            assert base[sid][:2] == changed[sid][:2]

    def test_failure_preserves_partial_log(self, tmp_path):
        corpus = synthetic_corpus(8)

        class ExplodingOracle(MockOracleBackend):
            def _train_once(self, job):
                if self.stats["trainings"] >= 3:
                    raise TrainError("gpu fell over")
                return super()._train_once(job)

        oracle = ExplodingOracle(spread_difficulty(corpus), THRESHOLDS)
        with pytest.raises(ProbeError, match="gpu fell over") as info:
            probe_level(
                corpus, corpus.ids(), budgeted(100), ladder_variants(corpus), oracle,
                seeds=(1, 2, 3), folds=4, workdir=tmp_path,
            )
        assert info.value.partial_log.exists()
        payload = json.loads(info.value.partial_log.read_text())
        assert payload["log"]["level"] == "short-100"


def analytic_assignment(difficulty, ladder=LADDER):
    assignment = {}
    for sid, value in difficulty.items():
        for level in ladder.probed:
            if value <= THRESHOLDS[level]:
                assignment[sid] = level.label()
                break
        else:
            assignment[sid] = "original"
    return assignment


class TestRunWaterfall:
    def test_histogram_matches_analytic_assignment(self, tmp_path):
        corpus = synthetic_corpus(30)
        difficulty = spread_difficulty(corpus)
        oracle = mock_oracle(difficulty, THRESHOLDS)
        state = run_waterfall(
            corpus, LADDER, ladder_variants(corpus), oracle,
            seeds=(1, 2, 3), folds=5, workdir=tmp_path,
        )
        expected = analytic_assignment(difficulty)
        observed = {sid: item.level.label() for sid, item in state.accepted.items()}
        assert observed == expected
        histogram = {}
        for label in expected.values():
            histogram[label] = histogram.get(label, 0) + 1
        assert state.histogram() == dict(sorted(histogram.items()))

    def test_totality(self, tmp_path):
        corpus = synthetic_corpus(17)
        oracle = mock_oracle(spread_difficulty(corpus), THRESHOLDS)
        state = run_waterfall(
            corpus, LADDER, ladder_variants(corpus), oracle,
            seeds=(1, 2, 3), folds=5, workdir=tmp_path,
        )
        assert sorted(state.accepted) == sorted(corpus.ids())
        assert state.pending == []

    def test_all_pass_at_no_cot_stops_training_early(self, tmp_path):
        corpus = synthetic_corpus(10)
        permissive = {level: 1.0 for level in THRESHOLDS}
        oracle = mock_oracle({sid: 0.5 for sid in corpus.ids()}, permissive)
        state = run_waterfall(
            corpus, LADDER, ladder_variants(corpus), oracle,
            seeds=(1, 2, 3), folds=5, workdir=tmp_path,
        )
        assert state.histogram() == {"short-100": 10}
        # one probed level trained: 3 seeds x 5 folds
        assert oracle.stats["trainings"] == 15
        skipped = [entry for entry in state.round_log if entry.get("skipped")]
        assert len(skipped) == 5

    def test_fallback_samples_accepted_at_original(self, tmp_path):
        corpus = synthetic_corpus(10)
        hostile = {level: 0.0 for level in THRESHOLDS}
        oracle = mock_oracle({sid: 0.9 for sid in corpus.ids()}, hostile)
        state = run_waterfall(
            corpus, LADDER, ladder_variants(corpus), oracle,
            seeds=(1, 2, 3), folds=5, workdir=tmp_path,
        )
        assert state.histogram() == {"original": 10}
        for item in state.accepted.values():
            assert item.level == ORIGINAL
            assert item.attempt_outcomes is None
            assert item.variant.text  # original rationale carried as variant

    def test_monotone_acceptance_under_monotone_thresholds(self, tmp_path):
        corpus = synthetic_corpus(18)
        difficulty = spread_difficulty(corpus)
        oracle = mock_oracle(difficulty, THRESHOLDS)
        state = run_waterfall(
            corpus, LADDER, ladder_variants(corpus), oracle,
            seeds=(1, 2, 3), folds=5, workdir=tmp_path,
        )
        order = list(LADDER.probed)
        for sid, item in state.accepted.items():
            if item.level == ORIGINAL:
                continue
            index = order.index(item.level)
            for easier in order[index + 1:]:
                assert oracle.passes(sid, easier), (sid, easier.label())

    def test_replay_is_byte_identical(self, tmp_path):
        corpus = synthetic_corpus(12)
        difficulty = spread_difficulty(corpus)
        variants = ladder_variants(corpus)
        blobs = []
        for name in ("first", "second"):
            oracle = mock_oracle(difficulty, THRESHOLDS)
            workdir = tmp_path / name
            run_waterfall(
                corpus, LADDER, variants, oracle,
                seeds=(1, 2, 3), folds=4, workdir=workdir,
            )
            blobs.append((workdir / "selection_state.json").read_bytes())
        assert blobs[0] == blobs[1]

    def test_interrupted_run_resumes_to_same_result(self, tmp_path):
        corpus = synthetic_corpus(12)
        difficulty = spread_difficulty(corpus)
        variants = ladder_variants(corpus)

        class InterruptingOracle(MockOracleBackend):
            def _train_once(self, job):
                sidecar = load_sidecar(job.dataset_path)
                if sidecar.get("probe_level") == "short-80":
                    raise TrainError("interrupted")
                return super()._train_once(job)

        workdir = tmp_path / "resumable"
        flaky = InterruptingOracle(difficulty, THRESHOLDS)
        with pytest.raises(ProbeError):
            run_waterfall(corpus, LADDER, variants, flaky,
                          seeds=(1, 2, 3), folds=4, workdir=workdir)
        checkpoint = json.loads((workdir / "selection_state.json").read_text())
        assert {entry["level"] for entry in checkpoint["round_log"]} == {"short-100", "short-90"}

        resumed = run_waterfall(
            corpus, LADDER, variants, mock_oracle(difficulty, THRESHOLDS),
            seeds=(1, 2, 3), folds=4, workdir=workdir, resume=True,
        )
        fresh = run_waterfall(
            corpus, LADDER, variants, mock_oracle(difficulty, THRESHOLDS),
            seeds=(1, 2, 3), folds=4, workdir=tmp_path / "fresh",
        )
        assert resumed.to_json() == fresh.to_json()

    def test_selection_state_round_trips(self, tmp_path):
        corpus = synthetic_corpus(8)
        oracle = mock_oracle(spread_difficulty(corpus), THRESHOLDS)
        state = run_waterfall(
            corpus, LADDER, ladder_variants(corpus), oracle,
            seeds=(1, 2, 3), folds=4, workdir=tmp_path,
        )
        rebuilt = SelectionState.from_json(json.loads(json.dumps(state.to_json())))
        assert rebuilt.to_json() == state.to_json()
        assert rebuilt.assignment().keys() == state.assignment().keys()
