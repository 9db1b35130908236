"""Benchmark the numba kernels against the pure-numpy fallback.

Run: python benchmarks/bench_kernels.py [--rounds 50]

Covers the three hot paths: plain edit distance, the all-prefixes distance
sweep behind suggestion generation, and frame-RMS energy, plus the
end-to-end suggestion call on 600-character transcriptions.
"""

import argparse
import time

import numpy as np

from streamscribe import _kernels
from streamscribe.textproc import generate_suggestion


def time_call(func, *args, rounds):
    best = float("inf")
    for _ in range(rounds):
        t0 = time.perf_counter()
        func(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def random_words(rng, n, word_len=6):
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    return [" ".join("".join(rng.choice(letters, size=word_len)) for _ in range(n))][0]


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--rounds", type=int, default=50)
    args = parser.parse_args()

    if not _kernels.NUMBA_ENABLED:
        print("numba path disabled (STREAMSCRIBE_NO_NUMBA set or numba missing); "
              "benchmarking the numpy fallback only.")

    rng = np.random.default_rng(0)
    a = _kernels.str_to_codes(random_words(rng, 100))
    b = _kernels.str_to_codes(random_words(rng, 100))
    cuts = np.arange(0, a.size + 1, 7, dtype=np.int64)
    waveform = rng.uniform(-0.5, 0.5, size=320_000)

    _kernels.warmup()

    cases = [
        ("edit_distance 700x700 chars", _kernels._edit_distance_numpy,
         getattr(_kernels, "_edit_distance_numba", None), (a, b)),
        ("prefix sweep, 100 cuts", _kernels._prefix_edit_distances_numpy,
         getattr(_kernels, "_prefix_edit_distances_numba", None), (a, b, cuts)),
        ("frame RMS over 320k samples", _kernels._frame_rms_numpy,
         getattr(_kernels, "_frame_rms_numba", None), (waveform, 480)),
    ]

    print(f"{'kernel':34} {'numpy ms':>10} {'numba ms':>10} {'speedup':>9}")
    for name, numpy_impl, numba_impl, call_args in cases:
        t_np = time_call(numpy_impl, *call_args, rounds=args.rounds)
        if numba_impl is not None:
            t_nb = time_call(numba_impl, *call_args, rounds=args.rounds)
            print(f"{name:34} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:8.1f}x")
        else:
            print(f"{name:34} {t_np:10.3f} {'-':>10} {'-':>9}")

    words = random_words(rng, 100).split()
    prev = " ".join(words)[:600]
    new = " ".join(words[10:] + random_words(rng, 10).split())[:600]
    t = time_call(generate_suggestion, new, prev, rounds=args.rounds)
    path = "numba" if _kernels.NUMBA_ENABLED else "numpy"
    print(f"\ngenerate_suggestion on 600-char strings ({path} path): {t:.3f} ms")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
