"""Captioning metrics: CIDEr-D, ROUGE-L, and METEOR-x.

METEOR-x is an exact-match METEOR variant: unigram alignment without
stemming or synonym tables.  All outputs are labeled "METEOR-x" to keep the
deviation visible.  Inputs are token lists produced by
:func:`hiercap.textproc.tokenize`, so normalization is already settled.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

NGRAM_MAX = 4
CIDER_SIGMA = 6.0
ROUGE_BETA = 1.2


@dataclass
class EvalPair:
    candidate: list[str]
    references: list[list[str]]


# ---------------------------------------------------------------------------
# ROUGE-L


def lcs_length(a: list[str], b: list[str]) -> int:
    """Length of the longest common subsequence of two token lists."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(pair: EvalPair, beta: float = ROUGE_BETA) -> float:
    """LCS-based F-score, maximum over references."""
    if not pair.candidate:
        return 0.0
    best = 0.0
    for ref in pair.references:
        if not ref:
            continue
        lcs = lcs_length(pair.candidate, ref)
        if lcs == 0:
            continue
        p = lcs / len(pair.candidate)
        r = lcs / len(ref)
        f = (1 + beta**2) * p * r / (r + beta**2 * p)
        best = max(best, f)
    return best


# ---------------------------------------------------------------------------
# CIDEr-D


def ngram_counts(tokens: list[str], n_max: int = NGRAM_MAX) -> list[Counter]:
    """Counters of n-grams for n = 1..n_max (index 0 holds unigrams)."""
    out = []
    for n in range(1, n_max + 1):
        out.append(Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)))
    return out


@dataclass
class CorpusIdf:
    """Document frequencies over the reference corpus.

    A "document" is the reference set of one evaluation item; df counts how
    many items contain the n-gram in at least one reference.
    """

    df: dict[tuple, int]
    n_docs: int

    @classmethod
    def from_references(cls, reference_sets: list[list[list[str]]]) -> "CorpusIdf":
        if not reference_sets:
            raise ValueError("cannot build idf from an empty reference corpus")
        df: dict[tuple, int] = defaultdict(int)
        for refs in reference_sets:
            seen = set()
            for ref in refs:
                for counts in ngram_counts(ref):
                    seen.update(counts)
            for g in seen:
                df[g] += 1
        return cls(df=dict(df), n_docs=len(reference_sets))

    def idf(self, gram: tuple) -> float:
        return math.log(self.n_docs / max(1.0, self.df.get(gram, 0.0)))


def _cider_sim(cand: list[Counter], ref: list[Counter], idf: CorpusIdf,
               len_c: int, len_r: int) -> float:
    """Clipped tf-idf cosine per n, averaged, with Gaussian length penalty."""
    total = 0.0
    for n in range(NGRAM_MAX):
        num = 0.0
        norm_c = 0.0
        norm_r = 0.0
        for g, c in cand[n].items():
            w = idf.idf(g)
            num += min(c, ref[n].get(g, 0)) * ref[n].get(g, 0) * w * w
            norm_c += (c * w) ** 2
        for g, c in ref[n].items():
            norm_r += (c * idf.idf(g)) ** 2
        if norm_c > 0 and norm_r > 0:
            total += num / (math.sqrt(norm_c) * math.sqrt(norm_r))
    penalty = math.exp(-((len_c - len_r) ** 2) / (2 * CIDER_SIGMA**2))
    return (total / NGRAM_MAX) * penalty


def cider_d(pairs: list[EvalPair], idf: CorpusIdf) -> tuple[list[float], float]:
    """Per-pair CIDEr-D scores (scaled to [0, 10]) and their corpus mean."""
    if idf.n_docs < 1:
        raise ValueError("empty idf corpus")
    scores = []
    for pair in pairs:
        cand = ngram_counts(pair.candidate)
        score = 0.0
        for ref_tokens in pair.references:
            ref = ngram_counts(ref_tokens)
            score += _cider_sim(cand, ref, idf, len(pair.candidate), len(ref_tokens))
        score = 10.0 * score / max(1, len(pair.references))
        scores.append(score)
    mean = sum(scores) / len(scores) if scores else 0.0
    return scores, mean


# ---------------------------------------------------------------------------
# METEOR-x


CHUNK_SEARCH_BUDGET = 200_000


def _greedy_chunks(cand: list[str], ref_positions: dict[str, list[int]],
                   quota: dict[str, int]) -> int:
    """A valid maximum alignment built left to right, preferring chunk
    continuations.  Its chunk count seeds the branch-and-bound incumbent."""
    used: set[int] = set()
    quota_left = dict(quota)
    chunks, last_j = 0, -2
    for w in cand:
        if quota_left.get(w, 0) <= 0:
            last_j = -2
            continue
        positions = ref_positions[w]
        if last_j + 1 in positions and last_j + 1 not in used:
            j = last_j + 1
        else:
            j = next(p for p in positions if p not in used)
            chunks += 1
        used.add(j)
        quota_left[w] -= 1
        last_j = j
    return chunks


def _min_chunks(cand: list[str], ref: list[str], n_matches: int) -> int:
    """Minimum chunk count over all maximum unigram alignments.

    Branch-and-bound: walk candidate positions left to right, branching over
    which reference occurrence (if any) each matchable token uses, trying
    chunk continuations first and pruning against the best chunk count seen.
    Search effort is capped at ``CHUNK_SEARCH_BUDGET`` nodes; short desk
    captions are solved exactly well within the budget, and adversarially
    repetitive long strings fall back to the best alignment found so far
    (a valid alignment, so the returned count is an upper bound and the
    METEOR-x score a lower bound).
    """
    ref_positions: dict[str, list[int]] = defaultdict(list)
    for j, w in enumerate(ref):
        ref_positions[w].append(j)
    cand_counts = Counter(cand)
    ref_counts = Counter(ref)
    quota = {w: min(cand_counts[w], ref_counts[w]) for w in cand_counts}

    best = _greedy_chunks(cand, ref_positions, quota)
    budget = CHUNK_SEARCH_BUDGET

    def search(i: int, used: set, last_j: int, chunks: int, matched: int,
               quota_left: dict) -> None:
        nonlocal best, budget
        if budget <= 0 or chunks >= best:
            return
        budget -= 1
        if matched == n_matches:
            best = min(best, chunks)
            return
        if i >= len(cand):
            return
        w = cand[i]
        if quota_left.get(w, 0) > 0:
            # chunk continuation first so good incumbents appear early
            ordered = sorted((j for j in ref_positions[w] if j not in used),
                             key=lambda j: j != last_j + 1)
            for j in ordered:
                new_chunks = chunks + (0 if j == last_j + 1 else 1)
                quota_left[w] -= 1
                used.add(j)
                search(i + 1, used, j, new_chunks, matched + 1, quota_left)
                used.discard(j)
                quota_left[w] += 1
        # Skipping is only allowed when this occurrence is not forced:
        # either the word has spare candidate occurrences or no quota left.
        remaining_cand = sum(1 for k in range(i, len(cand)) if cand[k] == w)
        if quota_left.get(w, 0) < remaining_cand:
            search(i + 1, used, -2, chunks, matched, quota_left)

    search(0, set(), -2, 0, 0, dict(quota))
    return best


def meteor_exact(pair: EvalPair) -> float:
    """Exact-match METEOR: F-mean with fragmentation penalty, max over refs."""
    best = 0.0
    for ref in pair.references:
        if not pair.candidate or not ref:
            continue
        matches = sum((Counter(pair.candidate) & Counter(ref)).values())
        if matches == 0:
            continue
        chunks = _min_chunks(pair.candidate, ref, matches)
        p = matches / len(pair.candidate)
        r = matches / len(ref)
        f = 10 * p * r / (r + 9 * p)
        penalty = 0.5 * (chunks / matches) ** 3
        best = max(best, f * (1 - penalty))
    return best


# ---------------------------------------------------------------------------
# Corpus-level evaluation


@dataclass
class LevelScores:
    level: int
    cider: float
    rouge_l: float
    meteor_x: float
    n_scored: int
    n_skipped: int

    def as_dict(self) -> dict:
        return {
            "level": self.level,
            "CIDEr": self.cider,
            "ROUGE-L": self.rouge_l,
            "METEOR-x": self.meteor_x,
            "n_scored": self.n_scored,
            "n_skipped": self.n_skipped,
        }


def spans_overlap(a_start: int, a_end: int, b_start: int, b_end: int) -> bool:
    return a_start < b_end and b_start < a_end


def evaluate_level(model_records, gt_records, level: int) -> LevelScores:
    """Score model records of one level against overlapping ground truth.

    A model record's references are all ground-truth records of the same
    level and video whose spans overlap its window.  Windows with no
    overlapping ground truth are skipped and counted.
    """
    from .textproc import tokenize

    gt_by_video: dict[str, list] = defaultdict(list)
    for rec in gt_records:
        if rec.level == level:
            gt_by_video[rec.video_id].append(rec)

    pairs = []
    n_skipped = 0
    for rec in model_records:
        if rec.level != level:
            continue
        refs = [
            tokenize(g.text)
            for g in gt_by_video.get(rec.video_id, [])
            if spans_overlap(rec.t_start, rec.t_end, g.t_start, g.t_end)
        ]
        if not refs:
            n_skipped += 1
            continue
        pairs.append(EvalPair(candidate=tokenize(rec.text), references=refs))

    if not pairs:
        raise ValueError(f"no level-{level} model windows matched any ground truth")

    idf = CorpusIdf.from_references([p.references for p in pairs])
    _, cider_mean = cider_d(pairs, idf)
    rouge_mean = sum(rouge_l(p) for p in pairs) / len(pairs)
    meteor_mean = sum(meteor_exact(p) for p in pairs) / len(pairs)
    return LevelScores(
        level=level,
        cider=cider_mean,
        rouge_l=rouge_mean,
        meteor_x=meteor_mean,
        n_scored=len(pairs),
        n_skipped=n_skipped,
    )
