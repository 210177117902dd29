"""Retrieval metrics and benchmark orchestration."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import EmbeddedDataset, SearchIndex, ValidationError
from .search import search_bruteforce, search_exact, search_two_step


def average_precision(ranked_ids, relevant) -> float:
    """Mean of precision-at-hit over the relevant items retrieved; 0 if none."""
    ranked = np.asarray(ranked_ids)
    relevant = np.asarray(list(relevant) if isinstance(relevant, set) else relevant)
    hits = np.isin(ranked, relevant)
    if not hits.any():
        return 0.0
    precision = np.cumsum(hits) / (np.arange(ranked.size) + 1)
    return float(precision[hits].mean())


def recall_at(ranked_ids, truth_ids, r: int) -> float:
    """Overlap of the top r of the ranking with the truth set, normalized."""
    if r < 1:
        raise ValidationError(f"r must be >= 1, got {r}")
    truth = np.asarray(list(truth_ids) if isinstance(truth_ids, set) else truth_ids)
    if truth.size == 0:
        raise ValidationError("truth set is empty")
    found = np.isin(np.asarray(ranked_ids)[:r], truth).sum()
    return float(found) / min(r, truth.size)


def code_length_bits(K: int, m: int) -> float:
    """Nominal code length of a K-book, m-codeword quantizer in bits."""
    return K * math.log2(m)


def effective_code_length(bits: float, ops: float, baseline_ops: float) -> float:
    """Nominal bits scaled by the measured-to-baseline op ratio."""
    if baseline_ops <= 0:
        raise ValidationError(f"baseline_ops must be > 0, got {baseline_ops}")
    return bits * ops / baseline_ops


@dataclass
class EvalReport:
    """Aggregated benchmark metrics for one index configuration.

    map/recall/avg_ops describe the two-step engine; recall is measured
    against the exact engine's ranking on the same index, and the exact
    engine's own MAP and op count ride along as the baseline columns.
    """

    map: float
    recall_at: dict[int, float]
    avg_ops: float
    effective_code_length: float
    query_count: int
    map_exact: float
    avg_ops_exact: float
    code_length: float
    K: int
    fast_size: int
    fallbacks: int = 0

    def csv_header(self) -> str:
        recalls = ",".join(f"recall@{r}" for r in sorted(self.recall_at))
        return (
            "code_length,K,fast_size,map,"
            + recalls
            + ",avg_ops,effective_code_length,map_exact,avg_ops_exact,query_count"
        )

    def csv_row(self) -> str:
        recalls = ",".join(repr(self.recall_at[r]) for r in sorted(self.recall_at))
        return ",".join(
            [
                repr(self.code_length),
                str(self.K),
                str(self.fast_size),
                repr(self.map),
                recalls,
                repr(self.avg_ops),
                repr(self.effective_code_length),
                repr(self.map_exact),
                repr(self.avg_ops_exact),
                str(self.query_count),
            ]
        )

    def to_csv(self) -> str:
        return self.csv_header() + "\n" + self.csv_row() + "\n"


def _query_rows(queries) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(queries, EmbeddedDataset):
        return queries.vectors, queries.labels
    arr = np.asarray(queries)
    if arr.ndim != 2:
        raise ValidationError(f"queries must be (nq, d), got shape {arr.shape}")
    return arr, None


def run_benchmark(
    index: SearchIndex,
    ds: EmbeddedDataset,
    queries,
    truth: str = "brute",
    k: int = 10,
    recall_rs: tuple[int, ...] = (1, 10, 100),
    sigma: float | None = None,
    threads: int = 1,
) -> EvalReport:
    """Run two-step and exact search over all queries and aggregate.

    Args:
        index: trained index whose codes cover ds row-for-row.
        ds: the indexed dataset (raw vectors for brute-force relevance).
        queries: (nq, d) array or EmbeddedDataset; labels enable label truth.
        truth: "labels" (same class label is relevant) or "brute"
            (brute-force top-k over ds is relevant).
        k: retrieval depth.
        recall_rs: recall cutoffs, each capped at k.
        sigma: pruning margin override for the two-step engine.
        threads: query-level parallelism cap (aggregation order is fixed).
    """
    if ds.n != index.n:
        raise ValidationError(f"dataset has {ds.n} rows, index encodes {index.n}")
    qvecs, qlabels = _query_rows(queries)
    if truth not in ("brute", "labels"):
        raise ValidationError(f"truth must be 'brute' or 'labels', got {truth!r}")
    if truth == "labels" and (qlabels is None or ds.labels is None):
        raise ValidationError("label truth requires labels on both queries and dataset")
    recall_rs = tuple(r for r in recall_rs if r <= k) or (k,)
    nq = qvecs.shape[0]
    if nq == 0:
        raise ValidationError("no queries given")

    def one(i: int):
        q = qvecs[i]
        two = search_two_step(index, q, k, sigma=sigma)
        exact = search_exact(index, q, k)
        if truth == "labels":
            relevant = np.flatnonzero(ds.labels == qlabels[i])
        else:
            relevant = search_bruteforce(ds, q, k).ids
        return two, exact, relevant

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(nq)))
    else:
        results = [one(i) for i in range(nq)]

    ap_two = np.empty(nq)
    ap_exact = np.empty(nq)
    ops_two = np.empty(nq)
    ops_exact = np.empty(nq)
    recalls = {r: np.empty(nq) for r in recall_rs}
    fallbacks = 0
    for i, (two, exact, relevant) in enumerate(results):
        ap_two[i] = average_precision(two.ids, relevant)
        ap_exact[i] = average_precision(exact.ids, relevant)
        ops_two[i] = two.ops.total_adds
        ops_exact[i] = exact.ops.total_adds
        fallbacks += int(two.fallback)
        for r in recall_rs:
            recalls[r][i] = recall_at(two.ids, exact.ids[:r], r)

    bits = code_length_bits(index.cfg.K, index.cfg.m)
    avg_two = float(ops_two.mean())
    avg_exact = float(ops_exact.mean())
    return EvalReport(
        map=float(ap_two.mean()),
        recall_at={r: float(v.mean()) for r, v in recalls.items()},
        avg_ops=avg_two,
        effective_code_length=effective_code_length(bits, avg_two, avg_exact),
        query_count=nq,
        map_exact=float(ap_exact.mean()),
        avg_ops_exact=avg_exact,
        code_length=bits,
        K=index.cfg.K,
        fast_size=int(index.fast.size),
        fallbacks=fallbacks,
    )


def unseen_class_split(
    ds: EmbeddedDataset, fraction: float, seed: int
) -> tuple[EmbeddedDataset, EmbeddedDataset]:
    """Partition a labeled dataset by class: ceil(fraction * c) classes train.

    The held-out side contains only classes the training side never saw.
    """
    if ds.labels is None:
        raise ValidationError("unseen_class_split requires a labeled dataset")
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must be in (0, 1), got {fraction}")
    classes = np.unique(ds.labels)
    n_train = math.ceil(fraction * classes.size)
    if n_train >= classes.size:
        raise ValidationError(
            f"fraction {fraction} keeps all {classes.size} classes, nothing held out"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(classes)
    train_classes = perm[:n_train]
    mask = np.isin(ds.labels, train_classes)
    return (
        EmbeddedDataset(ds.vectors[mask], ds.labels[mask]),
        EmbeddedDataset(ds.vectors[~mask], ds.labels[~mask]),
    )
