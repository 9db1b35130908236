"""Text algorithms for the live-transcription loop and its evaluation.

Levenshtein distance, backward prefix-search suggestion generation,
consecutive-repeat hallucination filtering, and the transcript normalization
used before scoring.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ._kernels import edit_distance, prefix_edit_distances, str_to_codes

_NON_WORD_RE = re.compile(r"[^\w]+", re.UNICODE)
_PUNCT_TO_SPACE_RE = re.compile(r"[^\w\s]", re.UNICODE)
_APOSTROPHES = str.maketrans({"’": "'", "ʼ": "'"})


def levenshtein(a: str, b: str) -> int:
    """Minimal number of single-character insertions, deletions and
    substitutions transforming ``a`` into ``b``."""
    return edit_distance(str_to_codes(a), str_to_codes(b))


def token_edit_distance(a: list[str], b: list[str]) -> int:
    """Levenshtein distance over whole tokens (words as symbols)."""
    vocab: dict[str, int] = {}
    for tok in a:
        vocab.setdefault(tok, len(vocab))
    for tok in b:
        vocab.setdefault(tok, len(vocab))
    ca = np.array([vocab[t] for t in a], dtype=np.uint32)
    cb = np.array([vocab[t] for t in b], dtype=np.uint32)
    return edit_distance(ca, cb)


# ---------------------------------------------------------------------------
# suggestion generation
# ---------------------------------------------------------------------------

def _clean_token(token: str) -> str:
    return _NON_WORD_RE.sub("", token.lower())


def compare_form(text: str) -> str:
    """Casing/punctuation-insensitive form used for distance comparisons:
    lowercase, punctuation stripped per token, single-space joined."""
    cleaned = (_clean_token(t) for t in text.split())
    return " ".join(c for c in cleaned if c)


@dataclass(frozen=True)
class Suggestion:
    """New-token tail of a transcription after overlap removal.

    ``overlap_token_count`` tokens of the new transcription were judged to
    re-cover the previous transcription (minimal edit distance ``distance``);
    ``text`` carries the remaining tokens in their original form.
    """

    text: str
    overlap_token_count: int
    distance: int


def generate_suggestion(new_trx: str, prev_trx: str) -> Suggestion:
    """Split ``new_trx`` into overlap + suggestion against ``prev_trx``.

    Walking backward from the last token, every token prefix of ``new_trx``
    is compared (in compare_form) against the previous transcription; the
    prefix with minimal edit distance marks the overlap and everything after
    it becomes the suggestion. Ties pick the longest prefix, so a duplicated
    word is preferred over a re-emitted one.
    """
    tokens = new_trx.split()
    prev = str_to_codes(compare_form(prev_trx))

    cuts = np.empty(len(tokens) + 1, dtype=np.int64)
    cuts[0] = 0
    pieces = []
    length = 0
    for i, tok in enumerate(tokens):
        cleaned = _clean_token(tok)
        if cleaned:
            if length:
                length += 1
            length += len(cleaned)
            pieces.append(cleaned)
        cuts[i + 1] = length
    joined = str_to_codes(" ".join(pieces))

    # One DP sweep yields the distance of every prefix; prefix k of the
    # token list ends at string offset cuts[k].
    dists = prefix_edit_distances(joined, prev, cuts)
    best = int(dists.min())
    k = int(np.flatnonzero(dists == best)[-1])
    return Suggestion(text=" ".join(tokens[k:]), overlap_token_count=k, distance=best)


# ---------------------------------------------------------------------------
# hallucination filtering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HallucinationVerdict:
    detected: bool
    repeated_unit: str
    repeat_count: int
    filtered_text: str


def _find_repeat_run(tokens: list[str], max_ngram: int, threshold: int):
    # Leftmost qualifying run wins; at the same position, the smallest unit.
    n_tok = len(tokens)
    for i in range(n_tok):
        for n in range(1, max_ngram + 1):
            if i + n > n_tok:
                break
            unit = tokens[i:i + n]
            count = 1
            while tokens[i + count * n:i + (count + 1) * n] == unit:
                count += 1
            if count >= threshold:
                return i, n, count
    return None


def detect_hallucination(text: str, max_ngram: int = 4,
                         repeat_threshold: int = 5) -> HallucinationVerdict:
    """Detect consecutive repetition of a token n-gram.

    Fires when some n-gram (1..max_ngram tokens) repeats back-to-back at
    least ``repeat_threshold`` times; the filtered text keeps a single
    occurrence of each such run.
    """
    tokens = text.split()
    first_unit: str | None = None
    first_count = 0
    while True:
        run = _find_repeat_run(tokens, max_ngram, repeat_threshold)
        if run is None:
            break
        i, n, count = run
        if first_unit is None:
            first_unit = " ".join(tokens[i:i + n])
            first_count = count
        del tokens[i + n:i + n * count]
    if first_unit is None:
        return HallucinationVerdict(False, "", 0, text)
    return HallucinationVerdict(True, first_unit, first_count, " ".join(tokens))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def _load_contractions() -> dict[str, str]:
    table = {}
    data = resources.files("streamscribe.data").joinpath("contractions.tsv").read_text("utf-8")
    for line in data.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, expansion = line.partition("\t")
        table[key.strip().lower()] = expansion.strip().lower()
    return table


_CONTRACTIONS = _load_contractions()
_CONTRACTION_RE = re.compile(
    r"\b(?:" + "|".join(re.escape(k) for k in sorted(_CONTRACTIONS, key=len, reverse=True)) + r")\b"
)


def normalize(text: str) -> str:
    """Normalize a transcript for scoring.

    Lowercases, expands known English contractions (before punctuation is
    touched), drops apostrophes, turns remaining punctuation into spaces and
    collapses whitespace. Idempotent.
    """
    text = text.lower().translate(_APOSTROPHES)
    text = _CONTRACTION_RE.sub(lambda m: _CONTRACTIONS[m.group(0)], text)
    text = text.replace("'", "")
    text = _PUNCT_TO_SPACE_RE.sub(" ", text)
    return " ".join(text.split())
