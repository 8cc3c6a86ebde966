"""cotpress: compress chain-of-thought rationales, build class-conditioned
training corpora, evaluate accuracy and compression rate, and select
per-sample compression levels adaptively."""

from .adaptive import RateLadder, SelectionState, fold_split, probe_level, run_waterfall
from .backend import (
    Backend,
    BackendError,
    DecodingParams,
    HTTPBackend,
    MockBackend,
    RetryPolicy,
    SubprocessBackend,
    TrainJob,
    complete,
    train,
)
from .cache import CompletionCache
from .compressor import (
    EXPANDED,
    ORIGINAL,
    SHORT_FREE,
    CompressionLevel,
    CompressionRequest,
    RationaleVariant,
    budgeted,
    compress,
    compress_corpus,
    reference_compress,
    render_budgeted_prompt,
    render_compress_prompt,
    render_expand_prompt,
)
from .conditioner import (
    LONG,
    SHORT,
    Condition,
    ConditionedDataset,
    ConditionedRecord,
    build_adaptive,
    build_mixed,
    build_two_class,
    parse_conditioned_input,
    render_inference_input,
    short_level,
)
from .corpus import (
    AnswerValue,
    Corpus,
    CorpusError,
    Sample,
    extract_answer,
    ingest,
    load_corpus,
    save_corpus,
    split_strategyqa,
)
from .harness import ExperimentConfig, report, run_experiment
from .metrics import (
    EvalResult,
    LengthMeasure,
    accuracy,
    compression_rate,
    corpus_compression_summary,
)
from .mock import MockOracleBackend, mock_oracle, spread_difficulty, synthetic_corpus

__version__ = "0.1.0"
