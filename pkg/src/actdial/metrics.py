"""Deterministic text-generation scores: ROUGE-1/2/L, exact-match METEOR,
embedding-similarity PRF, Monte-Carlo relative entropy, and distinct-n.

All operations are pure; token sequences are lists of strings unless noted.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Embedder = Callable[[str], np.ndarray]


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "PRF":
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        return cls(precision, recall, f1)

    @classmethod
    def zero(cls) -> "PRF":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RewardComponents:
    """Scores entering the composite reward.

    ``re`` is the relative-entropy estimate after division by the configured
    RE scale; it may be negative for a Monte-Carlo estimate.
    """

    r: float
    bs: float
    rho: float
    re: float


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> PRF:
    """N-gram overlap PRF with clipped multiset intersection."""
    if n not in (1, 2):
        raise ValueError(f"rouge_n supports n in {{1, 2}}, got {n}")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    total_cand = sum(cand.values())
    total_ref = sum(ref.values())
    if total_cand == 0 or total_ref == 0:
        return PRF.zero()
    overlap = sum((cand & ref).values())
    return PRF.from_pr(overlap / total_cand, overlap / total_ref)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length via the standard row-rolling DP."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                curr[j] = prev[j - 1] + 1
            else:
                curr[j] = max(prev[j], curr[j - 1])
        prev = curr
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> PRF:
    """LCS-based PRF: P = LCS/|candidate|, R = LCS/|reference|."""
    if not candidate or not reference:
        return PRF.zero()
    lcs = lcs_length(candidate, reference)
    return PRF.from_pr(lcs / len(candidate), lcs / len(reference))


def _meteor_alignment(
    candidate: Sequence[str], reference: Sequence[str]
) -> list[tuple[int, int]]:
    """Greedy exact-match alignment.

    Walks the candidate left to right, preferring the reference position that
    continues the current chunk, otherwise the earliest unused match. Every
    candidate token with an unused reference copy gets matched, so the match
    count equals the clipped unigram overlap.
    """
    positions: dict[str, list[int]] = {}
    for j, tok in enumerate(reference):
        positions.setdefault(tok, []).append(j)
    used: set[int] = set()
    pairs: list[tuple[int, int]] = []
    prev_ref = -2
    for i, tok in enumerate(candidate):
        opts = [j for j in positions.get(tok, ()) if j not in used]
        if not opts:
            prev_ref = -2
            continue
        j = prev_ref + 1 if prev_ref + 1 in opts else opts[0]
        used.add(j)
        pairs.append((i, j))
        prev_ref = j
    return pairs


def _count_chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = (-2, -2)
    for i, j in pairs:
        if i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Exact-match METEOR: recall-weighted F-mean with a fragmentation penalty.

    score = F_mean * (1 - 0.5 * (chunks / matches)^3), F_mean = 10PR / (R + 9P).
    Stemming and synonym stages are intentionally absent.
    """
    if not candidate or not reference:
        return 0.0
    pairs = _meteor_alignment(candidate, reference)
    m = len(pairs)
    if m == 0:
        return 0.0
    precision = m / len(candidate)
    recall = m / len(reference)
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (_count_chunks(pairs) / m) ** 3
    return f_mean * (1.0 - penalty)


def embed_similarity(
    candidate: Sequence[str], reference: Sequence[str], embedder: Embedder
) -> PRF:
    """Greedy cosine matching between token embeddings.

    Precision is the mean over candidate tokens of the best cosine against any
    reference token; recall is symmetric. Cosines are clipped to [0, 1] so the
    PRF bounds hold. Embedding vectors are L2-normalized internally.
    """
    if not candidate or not reference:
        return PRF.zero()

    def matrix(tokens: Sequence[str]) -> np.ndarray:
        vecs = np.stack([np.asarray(embedder(t), dtype=np.float64) for t in tokens])
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        return vecs / np.maximum(norms, 1e-12)

    sim = matrix(candidate) @ matrix(reference).T
    sim = np.clip(sim, 0.0, 1.0)
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    return PRF.from_pr(precision, recall)


def relative_entropy(
    logp_policy: Sequence[float], logp_ref: Sequence[float]
) -> float:
    """Monte-Carlo KL estimate: mean of (logp_policy - logp_ref) over samples.

    Both vectors are per-sequence log-probabilities (natural units) of samples
    drawn from the policy; the estimate is unbiased only under that sampling
    distribution.
    """
    if len(logp_policy) == 0:
        raise ValueError("relative_entropy needs at least one sample")
    if len(logp_policy) != len(logp_ref):
        raise ValueError(
            f"log-prob vectors differ in length: {len(logp_policy)} vs {len(logp_ref)}"
        )
    diffs = [lp - lr for lp, lr in zip(logp_policy, logp_ref)]
    return float(sum(diffs) / len(diffs))


def distinct_n(texts: Sequence[Sequence[str]], n: int) -> float:
    """Unique n-grams over total n-grams, pooled over all texts."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    total = 0
    unique: set[tuple[str, ...]] = set()
    for tokens in texts:
        grams = [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]
        total += len(grams)
        unique.update(grams)
    if total == 0:
        return 0.0
    return len(unique) / total
