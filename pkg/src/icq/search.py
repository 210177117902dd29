"""Query engines over a trained index.

All scores are squared Euclidean distances assembled from a per-query
lookup table of query-to-codeword distances. The two-step engine scans in
dataset order, prunes with the fast score of the current heap maximum plus
the margin, and refines survivors exactly. Results are the k smallest
(score, id) pairs, so ties always resolve to the smaller dataset id.

Op counters tally table-lookup additions: scoring an element over t tables
costs t - 1 additions. LUT construction cost is tracked separately as
K*m*d multiply-adds.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddedDataset, SearchIndex, ValidationError


@dataclass
class OpCounter:
    """Addition counts for one query; evaluations/refinements are diagnostics."""

    fast_adds: int = 0
    exact_adds: int = 0
    lut_ops: int = 0
    evaluations: int = 0
    refinements: int = 0

    @property
    def total_adds(self) -> int:
        return self.fast_adds + self.exact_adds


@dataclass
class QueryResult:
    """Ranked neighbor ids and scores (ascending) plus the op counter."""

    ids: np.ndarray
    scores: np.ndarray
    ops: OpCounter = field(default_factory=OpCounter)
    fallback: bool = False


def _check_query(q: np.ndarray, d: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape != (d,):
        raise ValidationError(f"query shape {q.shape} does not match d={d}")
    if not np.all(np.isfinite(q)):
        raise ValidationError("query contains non-finite values")
    return q


def _check_k(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} out of range [1, {n}]")


def build_lut(index: SearchIndex, q: np.ndarray, ops: OpCounter | None = None) -> np.ndarray:
    """(K, m) table of squared distances from q to every codeword."""
    q = _check_query(q, index.d)
    books = index.books.codewords.astype(np.float64)
    diff = books - q[None, None, :]
    lut = (diff * diff).sum(axis=2)
    if ops is not None:
        ops.lut_ops += index.cfg.K * index.cfg.m * index.d
    return lut


def exact_score(lut: np.ndarray, code_row: np.ndarray, ops: OpCounter | None = None) -> float:
    """Full reconstruction score: one lookup per codebook, summed."""
    K = lut.shape[0]
    score = float(np.sum(lut[np.arange(K), np.asarray(code_row)]))
    if ops is not None:
        ops.exact_adds += K - 1
    return score


def fast_score(
    lut: np.ndarray, code_row: np.ndarray, fast: np.ndarray, ops: OpCounter | None = None
) -> float:
    """Partial score over the fast codebook set only."""
    fast = np.asarray(fast)
    score = float(np.sum(lut[fast, np.asarray(code_row)[fast]]))
    if ops is not None:
        ops.fast_adds += max(len(fast) - 1, 0)
    return score


def _gather_scores(lut: np.ndarray, codes: np.ndarray, books: np.ndarray) -> np.ndarray:
    """Per-element sums of lut entries over the given book columns."""
    return lut[books[None, :], codes[:, books]].sum(axis=1)


def search_exact(index: SearchIndex, q: np.ndarray, k: int) -> QueryResult:
    """Scan every element with the full score; k best by (score, id)."""
    _check_k(k, index.n)
    ops = OpCounter()
    lut = build_lut(index, q, ops)
    codes = index.codes.codes
    n, K = codes.shape
    scores = _gather_scores(lut, codes, np.arange(K))
    order = np.lexsort((np.arange(n), scores))[:k]
    ops.exact_adds = (K - 1) * n
    ops.evaluations = n
    ops.refinements = n
    return QueryResult(ids=order.astype(np.int64), scores=scores[order], ops=ops)


def search_two_step(
    index: SearchIndex, q: np.ndarray, k: int, sigma: float | None = None
) -> QueryResult:
    """Prune with fast scores against the heap maximum, refine the rest.

    The heap is seeded with the first k elements scored exactly. Element i
    is refined iff fast(i) < fast(heap max) + sigma; sigma defaults to the
    index margin. An empty fast set falls back to exact search with the
    fallback flag set.
    """
    _check_k(k, index.n)
    if sigma is None:
        sigma = index.sigma
    if not sigma >= 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    fast = index.fast.astype(np.int64)
    if fast.size == 0:
        result = search_exact(index, q, k)
        result.fallback = True
        return result

    ops = OpCounter()
    lut = build_lut(index, q, ops)
    codes = index.codes.codes
    n, K = codes.shape
    fast_all = _gather_scores(lut, codes, fast)
    exact_all = _gather_scores(lut, codes, np.arange(K))

    # Max-heap on (score, id) via negated keys; entry[2] caches the fast score.
    heap = [(-exact_all[i], -i, fast_all[i]) for i in range(k)]
    heapq.heapify(heap)
    bound = heap[0][2]
    refinements = 0

    fast_list = fast_all.tolist()
    exact_list = exact_all.tolist()
    for i in range(k, n):
        if fast_list[i] < bound + sigma:
            refinements += 1
            s = exact_list[i]
            if s < -heap[0][0]:
                heapq.heapreplace(heap, (-s, -i, fast_list[i]))
                bound = heap[0][2]

    ranked = sorted((-e[0], -e[1]) for e in heap)
    ops.fast_adds = (fast.size - 1) * n
    ops.exact_adds = (K - 1) * (refinements + k)
    ops.evaluations = n
    ops.refinements = refinements
    return QueryResult(
        ids=np.array([i for _, i in ranked], dtype=np.int64),
        scores=np.array([s for s, _ in ranked], dtype=np.float64),
        ops=ops,
    )


def search_bruteforce(ds: EmbeddedDataset | np.ndarray, q: np.ndarray, k: int) -> QueryResult:
    """Exact squared Euclidean scan over raw vectors (no quantization)."""
    x = ds.vectors if isinstance(ds, EmbeddedDataset) else np.asarray(ds)
    n, d = x.shape
    _check_k(k, n)
    q = _check_query(q, d)
    diff = x.astype(np.float64) - q[None, :]
    scores = (diff * diff).sum(axis=1)
    order = np.lexsort((np.arange(n), scores))[:k]
    ops = OpCounter(exact_adds=(d - 1) * n, evaluations=n, refinements=n)
    return QueryResult(ids=order.astype(np.int64), scores=scores[order], ops=ops)
