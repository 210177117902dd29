"""Shared builders for small synthetic indexes used across test modules."""

import numpy as np
import pytest

from icq import CodebookSet, CodeMatrix, Config, SearchIndex
from icq.train import fast_set


def build_index(
    rng: np.random.Generator,
    n: int = 60,
    d: int = 8,
    K: int = 3,
    m: int = 4,
    xi: np.ndarray | None = None,
    sigma: float = 0.5,
) -> SearchIndex:
    """Random but internally consistent index for engine-level tests."""
    books = rng.standard_normal((K, m, d)).astype(np.float32)
    codes = rng.integers(0, m, size=(n, K))
    if xi is None:
        xi = (rng.random(d) < 0.5).astype(np.uint8)
    if xi.any():
        # concentrate the first half of the books inside the mask so the
        # fast set is nonempty for pruning tests
        boost = np.where(xi.astype(bool), 10.0, 1.0).astype(np.float32)
        books[: max(1, K // 2)] *= boost
    cfg = Config(K=K, m=m)
    return SearchIndex(
        books=CodebookSet(books),
        codes=CodeMatrix(codes),
        xi=xi,
        fast=fast_set(books, xi),
        sigma=sigma,
        lambdas=np.abs(rng.standard_normal(d)).astype(np.float32),
        cfg=cfg,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
