"""Paired-comparison statistics: average ranks and the Wilcoxon
signed-rank test with an exact small-sample distribution.

The exact path enumerates the signed-rank distribution by dynamic
programming over doubled ranks (tied ranks are half-integers), which is
equivalent to summing over all 2^n sign assignments. Above
``EXACT_MAX_N`` pairs a normal approximation with tie and continuity
corrections is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EXACT_MAX_N = 25


def rankdata_average(values) -> np.ndarray:
    """Ranks starting at 1; ties share their average rank."""
    a = np.asarray(values, dtype=float)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size, dtype=float)
    sorted_vals = a[order]
    i = 0
    next_rank = 1
    while i < a.size:
        j = i
        while j + 1 < a.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = next_rank + (j - i) / 2.0
        next_rank += j - i + 1
        i = j + 1
    return ranks


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+: rank sum of positive differences
    n_effective: int
    p_greater: float | None
    p_less: float | None
    p_two_sided: float | None
    method: str  # "exact" | "normal" | "undefined"

    @property
    def undefined(self) -> bool:
        return self.method == "undefined"


def _exact_tail_probs(doubled_ranks: list[int], doubled_w: int) -> tuple[float, float]:
    # counts[s] = number of sign assignments whose positive doubled-rank sum is s
    total = sum(doubled_ranks)
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts += shifted
    denom = 2.0 ** len(doubled_ranks)
    p_greater = float(counts[doubled_w:].sum() / denom)
    p_less = float(counts[:doubled_w + 1].sum() / denom)
    return p_greater, p_less


def wilcoxon_signed_rank(differences) -> WilcoxonResult:
    """Signed-rank test of the paired differences against symmetry at zero.

    Zero differences are dropped. W+ is the rank sum over positive
    differences; one-sided p-values are P(W >= w) / P(W <= w) under random
    signs, and the two-sided p doubles the smaller tail (capped at 1).
    """
    diffs = np.asarray(list(differences), dtype=float)
    diffs = diffs[diffs != 0.0]
    n = int(diffs.size)
    if n == 0:
        return WilcoxonResult(statistic=0.0, n_effective=0, p_greater=None,
                              p_less=None, p_two_sided=None, method="undefined")
    ranks = rankdata_average(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())

    if n <= EXACT_MAX_N:
        doubled = [int(round(2 * r)) for r in ranks]
        p_greater, p_less = _exact_tail_probs(doubled, int(round(2 * w_plus)))
        method = "exact"
    else:
        mu = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
        var -= float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
        sigma = math.sqrt(var)
        p_greater = 0.5 * math.erfc((w_plus - 0.5 - mu) / (sigma * math.sqrt(2)))
        p_less = 0.5 * math.erfc((mu - (w_plus + 0.5)) / (sigma * math.sqrt(2)))
        method = "normal"

    p_two = min(1.0, 2.0 * min(p_greater, p_less))
    return WilcoxonResult(statistic=w_plus, n_effective=n, p_greater=p_greater,
                          p_less=p_less, p_two_sided=p_two, method=method)


def compare_reports(report_a: dict, report_b: dict) -> dict:
    """Pairwise comparison of two evaluation reports over the same clips.

    Pairs per-clip word-accuracy values, computes average ranks across the
    two systems (rank 1 = better accuracy) and the Wilcoxon signed-rank
    p-values of the accuracy differences.
    """
    clips_a = {c["clip_id"]: c for c in report_a["per_clip"] if "error" not in c}
    clips_b = {c["clip_id"]: c for c in report_b["per_clip"] if "error" not in c}
    missing_in_b = sorted(set(clips_a) - set(clips_b))
    missing_in_a = sorted(set(clips_b) - set(clips_a))
    if missing_in_a or missing_in_b:
        raise ValueError(
            f"clip sets differ: missing in a={missing_in_a}, missing in b={missing_in_b}"
        )
    if not clips_a:
        raise ValueError("no scorable clips in common")

    pairs = []
    rank_sum_a = 0.0
    rank_sum_b = 0.0
    for clip_id in sorted(clips_a):
        acc_a = clips_a[clip_id]["word_accuracy"]
        acc_b = clips_b[clip_id]["word_accuracy"]
        ranks = rankdata_average([-acc_a, -acc_b])  # negate: higher accuracy -> rank 1
        rank_sum_a += ranks[0]
        rank_sum_b += ranks[1]
        pairs.append({
            "clip_id": clip_id,
            "word_accuracy_a": acc_a,
            "word_accuracy_b": acc_b,
            "diff": acc_a - acc_b,
        })
    n_clips = len(pairs)
    result = wilcoxon_signed_rank([p["diff"] for p in pairs])
    return {
        "clips": n_clips,
        "per_clip_pairs": pairs,
        "mean_ranks": {"a": rank_sum_a / n_clips, "b": rank_sum_b / n_clips},
        "wilcoxon": {
            "statistic": result.statistic,
            "n_effective": result.n_effective,
            "p_greater": result.p_greater,
            "p_less": result.p_less,
            "p_two_sided": result.p_two_sided,
            "method": result.method,
            "undefined": result.undefined,
        },
    }
