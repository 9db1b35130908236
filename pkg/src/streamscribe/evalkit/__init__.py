"""Evaluation toolkit: dataset replay, WER scoring, timing aggregation,
hyperparameter sweeps and pairwise statistical comparison."""

from .harness import (  # noqa: F401
    ClipManifestEntry,
    aggregate_dataset,
    load_manifest,
    pad_trailing_silence,
    run_eval,
    sweep,
    sweep_to_csv,
    synthesize_clip,
)
from .scoring import wer, word_accuracy, weighted_mean, weighted_stats  # noqa: F401
from .stats import compare_reports, rankdata_average, wilcoxon_signed_rank  # noqa: F401
