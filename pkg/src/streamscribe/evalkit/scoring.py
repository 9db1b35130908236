"""Transcript scoring: word error rate and duration-weighted aggregation."""

from __future__ import annotations

import math

from ..textproc import normalize, token_edit_distance


def wer(reference: str, hypothesis: str) -> float:
    """Word-level edit distance divided by reference word count.

    Both sides are normalized first; values above 1.0 are reported as-is.
    An empty (after normalization) reference is undefined and raises.
    """
    ref = normalize(reference).split()
    hyp = normalize(hypothesis).split()
    if not ref:
        raise ValueError("WER is undefined for an empty reference")
    return token_edit_distance(ref, hyp) / len(ref)


def word_accuracy(wer_value: float) -> float:
    """1 - WER, floored at 0 so the value stays rankable."""
    return max(0.0, 1.0 - wer_value)


def weighted_mean(values, weights) -> float:
    total = float(sum(weights))
    if total <= 0:
        raise ValueError("weights must sum to a positive value")
    return float(sum(v * w for v, w in zip(values, weights)) / total)


def weighted_stats(values, weights) -> tuple[float, float]:
    """Weighted mean and its standard error.

    The error is the square root of the weighted variance over the number of
    samples: se = sqrt(sum(w*(v-m)^2)/sum(w) / n).
    """
    values = list(values)
    weights = list(weights)
    mean = weighted_mean(values, weights)
    total = float(sum(weights))
    var = sum(w * (v - mean) ** 2 for v, w in zip(values, weights)) / total
    return mean, math.sqrt(var / len(values))
