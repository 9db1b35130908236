"""Numeric inner loops: edit-distance DP and frame energy.

Every kernel has two implementations: a numba ``@njit`` version and a
vectorized numpy fallback. The fallback is selected automatically when
numba is not importable, or explicitly by setting ``STREAMSCRIBE_NO_NUMBA=1``
in the environment before import. ``benchmarks/bench_kernels.py`` compares
the two paths.

All edit-distance kernels operate on ``uint32`` code arrays so the same DP
serves character-level distance (unicode codepoints) and word-level distance
(vocabulary ids).
"""

from __future__ import annotations

import os

import numpy as np

_ENV_DISABLE = os.environ.get("STREAMSCRIBE_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

if not _ENV_DISABLE:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False


def str_to_codes(s: str) -> np.ndarray:
    """Encode a string as a uint32 codepoint array (kernel input form)."""
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)


# ---------------------------------------------------------------------------
# numpy fallback path
# ---------------------------------------------------------------------------

def _edit_distance_numpy(a: np.ndarray, b: np.ndarray) -> int:
    if a.size == 0:
        return int(b.size)
    if b.size == 0:
        return int(a.size)
    idx = np.arange(b.size + 1, dtype=np.int64)
    prev = idx.copy()
    seed = np.empty(b.size + 1, dtype=np.int64)
    for i in range(a.size):
        # seed[j] = best of substitution/deletion; the running minimum then
        # folds in insertions: r[j] = min(seed[j], r[j-1] + 1).
        seed[0] = i + 1
        np.minimum(prev[:-1] + (b != a[i]), prev[1:] + 1, out=seed[1:])
        prev = np.minimum.accumulate(seed - idx) + idx
    return int(prev[-1])


def _prefix_edit_distances_numpy(a: np.ndarray, b: np.ndarray, cuts: np.ndarray) -> np.ndarray:
    """Distances of each prefix a[:cuts[k]] to b, from one full DP sweep.

    ``cuts`` must be non-decreasing row indices in [0, len(a)].
    """
    out = np.empty(cuts.size, dtype=np.int64)
    ci = 0
    while ci < cuts.size and cuts[ci] == 0:
        out[ci] = b.size
        ci += 1
    if a.size == 0 or ci == cuts.size:
        return out
    idx = np.arange(b.size + 1, dtype=np.int64)
    prev = idx.copy()
    seed = np.empty(b.size + 1, dtype=np.int64)
    for i in range(a.size):
        seed[0] = i + 1
        if b.size:
            np.minimum(prev[:-1] + (b != a[i]), prev[1:] + 1, out=seed[1:])
        prev = np.minimum.accumulate(seed - idx) + idx
        while ci < cuts.size and cuts[ci] == i + 1:
            out[ci] = prev[-1]
            ci += 1
    return out


def _frame_rms_numpy(x: np.ndarray, frame_len: int) -> np.ndarray:
    n = x.size // frame_len
    if n == 0:
        return np.empty(0, dtype=np.float64)
    frames = x[: n * frame_len].astype(np.float64, copy=False).reshape(n, frame_len)
    return np.sqrt(np.mean(frames * frames, axis=1))


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:

    @njit(cache=True)
    def _edit_distance_numba(a, b):  # pragma: no cover - exercised via dispatch
        la, lb = a.size, b.size
        if la == 0:
            return lb
        if lb == 0:
            return la
        prev = np.arange(lb + 1)
        cur = np.empty(lb + 1, dtype=np.int64)
        for i in range(la):
            cur[0] = i + 1
            ai = a[i]
            for j in range(1, lb + 1):
                cost = 0 if b[j - 1] == ai else 1
                best = prev[j - 1] + cost
                if prev[j] + 1 < best:
                    best = prev[j] + 1
                if cur[j - 1] + 1 < best:
                    best = cur[j - 1] + 1
                cur[j] = best
            prev, cur = cur, prev
        return prev[lb]

    @njit(cache=True)
    def _prefix_edit_distances_numba(a, b, cuts):  # pragma: no cover
        la, lb = a.size, b.size
        out = np.empty(cuts.size, dtype=np.int64)
        ci = 0
        while ci < cuts.size and cuts[ci] == 0:
            out[ci] = lb
            ci += 1
        if la == 0 or ci == cuts.size:
            return out
        prev = np.arange(lb + 1)
        cur = np.empty(lb + 1, dtype=np.int64)
        for i in range(la):
            cur[0] = i + 1
            ai = a[i]
            for j in range(1, lb + 1):
                cost = 0 if b[j - 1] == ai else 1
                best = prev[j - 1] + cost
                if prev[j] + 1 < best:
                    best = prev[j] + 1
                if cur[j - 1] + 1 < best:
                    best = cur[j - 1] + 1
                cur[j] = best
            prev, cur = cur, prev
            while ci < cuts.size and cuts[ci] == i + 1:
                out[ci] = prev[lb]
                ci += 1
        return out

    @njit(cache=True)
    def _frame_rms_numba(x, frame_len):  # pragma: no cover
        n = x.size // frame_len
        out = np.empty(n, dtype=np.float64)
        for k in range(n):
            acc = 0.0
            base = k * frame_len
            for j in range(frame_len):
                v = x[base + j]
                acc += v * v
            out[k] = np.sqrt(acc / frame_len)
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def edit_distance(a: np.ndarray, b: np.ndarray) -> int:
    """Levenshtein distance between two uint32 code arrays."""
    if NUMBA_ENABLED:
        return int(_edit_distance_numba(a, b))
    return _edit_distance_numpy(a, b)


def prefix_edit_distances(a: np.ndarray, b: np.ndarray, cuts: np.ndarray) -> np.ndarray:
    """Edit distance of every prefix a[:cut] against b, one DP sweep total."""
    if NUMBA_ENABLED:
        return _prefix_edit_distances_numba(a, b, cuts)
    return _prefix_edit_distances_numpy(a, b, cuts)


def frame_rms(x: np.ndarray, frame_len: int) -> np.ndarray:
    """RMS of each complete non-overlapping ``frame_len`` window of x."""
    if frame_len <= 0:
        raise ValueError("frame_len must be positive")
    x = np.ascontiguousarray(x, dtype=np.float64)
    if NUMBA_ENABLED:
        return _frame_rms_numba(x, frame_len)
    return _frame_rms_numpy(x, frame_len)


def warmup() -> None:
    """Trigger JIT compilation so first real call is not charged for it."""
    a = str_to_codes("warm")
    b = str_to_codes("worm")
    edit_distance(a, b)
    prefix_edit_distances(a, b, np.array([0, 2, 4], dtype=np.int64))
    frame_rms(np.zeros(16, dtype=np.float64), 4)
