"""Independent brute-force oracles used by the test suite.

These deliberately avoid the library's own code paths: recursive LCS,
naive loops for pooling, and a direct transcription of the CIDEr-D formula.
"""

from __future__ import annotations

import math
from collections import Counter
from functools import lru_cache

import numpy as np


def lcs_brute(a: tuple, b: tuple) -> int:
    """Exponential-ish recursive LCS with memoization."""

    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def mean_pool_brute(dense: np.ndarray) -> np.ndarray:
    """Per-clip mean over all spatial-temporal cells via explicit loops."""
    f, h, w, d = dense.shape
    acc = np.zeros(d, dtype=np.float64)
    n = 0
    for i in range(f):
        for j in range(h):
            for k in range(w):
                acc += dense[i, j, k]
                n += 1
    return (acc / n).astype(dense.dtype)


def _grams(tokens: list, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def cider_d_transcription(candidates: list[list[str]],
                          reference_sets: list[list[list[str]]],
                          sigma: float = 6.0, n_max: int = 4) -> list[float]:
    """Direct transcription of the CIDEr-D formula, independent of the library.

    df over reference sets (one document per item), idf = log(N / max(1, df)),
    clipped tf in the numerator, cosine over raw tf-idf vectors, Gaussian
    length penalty, averaged over n, meaned over references, scaled by 10.
    """
    n_docs = len(reference_sets)
    df: dict = {}
    for refs in reference_sets:
        seen = set()
        for ref in refs:
            for n in range(1, n_max + 1):
                seen |= set(_grams(ref, n))
        for g in seen:
            df[g] = df.get(g, 0) + 1

    def idf(g):
        return math.log(n_docs / max(1.0, df.get(g, 0.0)))

    scores = []
    for cand, refs in zip(candidates, reference_sets):
        per_ref = []
        for ref in refs:
            sim_sum = 0.0
            for n in range(1, n_max + 1):
                gc = _grams(cand, n)
                gr = _grams(ref, n)
                num = sum(min(gc[g], gr[g]) * gr[g] * idf(g) ** 2 for g in gc)
                nc = math.sqrt(sum((c * idf(g)) ** 2 for g, c in gc.items()))
                nr = math.sqrt(sum((c * idf(g)) ** 2 for g, c in gr.items()))
                if nc > 0 and nr > 0:
                    sim_sum += num / (nc * nr)
            penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma**2))
            per_ref.append((sim_sum / n_max) * penalty)
        scores.append(10.0 * sum(per_ref) / len(per_ref))
    return scores


def meteor_chunks_brute(cand: list[str], ref: list[str]) -> tuple[int, int]:
    """(matches, min chunks) by exhaustive enumeration of alignments."""
    n_matches = sum((Counter(cand) & Counter(ref)).values())
    best = [n_matches if n_matches else 0]

    def rec(i: int, used: frozenset, last_j: int, chunks: int, matched: int):
        if matched == n_matches:
            best[0] = min(best[0], chunks)
            return
        if i >= len(cand):
            return
        w = cand[i]
        for j, rw in enumerate(ref):
            if rw == w and j not in used:
                rec(i + 1, used | {j}, j, chunks + (0 if j == last_j + 1 else 1), matched + 1)
        rec(i + 1, used, -2, chunks, matched)

    if n_matches:
        rec(0, frozenset(), -2, 0, 0)
    return n_matches, best[0]


def meteor_brute(cand: list[str], ref: list[str]) -> float:
    matches, chunks = meteor_chunks_brute(cand, ref)
    if matches == 0 or not cand or not ref:
        return 0.0
    p = matches / len(cand)
    r = matches / len(ref)
    f = 10 * p * r / (r + 9 * p)
    return f * (1 - 0.5 * (chunks / matches) ** 3)
