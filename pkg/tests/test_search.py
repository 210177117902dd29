"""Query engines: LUT scoring, pruning, tie handling, and op accounting."""

import numpy as np
import pytest

from icq import (
    CodebookSet,
    CodeMatrix,
    Config,
    OpCounter,
    SearchIndex,
    ValidationError,
    build_lut,
    exact_score,
    fast_score,
    search_bruteforce,
    search_exact,
    search_two_step,
)
from conftest import build_index


def _tiny_index():
    """Two 2-codeword books in 2d with hand-checkable distances."""
    books = np.array(
        [
            [[0.0, 0.0], [1.0, 0.0]],
            [[0.0, 0.0], [0.0, 1.0]],
        ],
        dtype=np.float32,
    )
    codes = np.array([[1, 1], [0, 0], [1, 0]], dtype=np.uint32)
    return SearchIndex(
        books=CodebookSet(books),
        codes=CodeMatrix(codes),
        xi=np.array([1, 0], dtype=np.uint8),
        fast=np.array([0], dtype=np.uint32),
        sigma=0.5,
        lambdas=np.array([1.0, 1.0], dtype=np.float32),
        cfg=Config(K=2, m=2),
    )


class TestScoring:
    def test_lut_worked_example(self):
        index = _tiny_index()
        ops = OpCounter()
        lut = build_lut(index, np.array([1.0, 1.0]), ops)
        # squared distances from [1,1] to each codeword
        assert np.allclose(lut, [[2.0, 1.0], [2.0, 1.0]])
        assert ops.lut_ops == 2 * 2 * 2

    def test_exact_score_sums_all_books(self):
        index = _tiny_index()
        ops = OpCounter()
        lut = build_lut(index, np.array([1.0, 1.0]))
        assert exact_score(lut, np.array([1, 1]), ops) == pytest.approx(2.0)
        assert exact_score(lut, np.array([0, 0]), ops) == pytest.approx(4.0)
        assert ops.exact_adds == 2  # (K - 1) per evaluation

    def test_fast_score_sums_fast_books_only(self):
        index = _tiny_index()
        ops = OpCounter()
        lut = build_lut(index, np.array([1.0, 1.0]))
        got = fast_score(lut, np.array([1, 1]), index.fast, ops)
        assert got == pytest.approx(1.0)
        assert ops.fast_adds == 0  # single fast book, no additions

    def test_score_matches_reconstruction_distance(self, rng):
        """With books on disjoint dimensions the LUT sum equals the distance
        to the additive reconstruction plus (K-1)||q||^2 exactly."""
        books = np.zeros((2, 3, 4), dtype=np.float32)
        books[0, :, :2] = rng.normal(size=(3, 2))
        books[1, :, 2:] = rng.normal(size=(3, 2))
        q = rng.normal(size=4)
        q_sq = float((q**2).sum())
        lut = ((books.astype(np.float64) - q[None, None, :]) ** 2).sum(axis=2)
        for c0 in range(3):
            for c1 in range(3):
                recon = books[0, c0].astype(np.float64) + books[1, c1].astype(np.float64)
                want = float(((q - recon) ** 2).sum())
                assert exact_score(lut, np.array([c0, c1])) == pytest.approx(want + q_sq, rel=1e-9)


class TestExactEngine:
    def test_matches_naive_ranking(self, rng):
        index = build_index(rng, n=80, d=6, K=3, m=4)
        q = rng.normal(size=6)
        lut = build_lut(index, q)
        naive = np.array([exact_score(lut, row) for row in index.codes.codes])
        res = search_exact(index, q, k=10)
        order = np.lexsort((np.arange(index.n), naive))[:10]
        assert np.array_equal(res.ids, order)
        assert np.allclose(res.scores, naive[order])

    def test_op_accounting(self, rng):
        index = build_index(rng, n=50, d=6, K=3, m=4)
        res = search_exact(index, rng.normal(size=6), k=5)
        assert res.ops.exact_adds == (3 - 1) * 50
        assert res.ops.fast_adds == 0
        assert res.ops.lut_ops == 3 * 4 * 6
        assert res.ops.evaluations == 50
        assert res.ops.total_adds == res.ops.exact_adds

    def test_scores_ascend_and_ties_id_ordered(self, rng):
        index = build_index(rng, n=60, d=6, K=3, m=4)
        # duplicate every code row pairwise to force exact score ties
        codes = index.codes.codes.copy()
        codes[1::2] = codes[0::2]
        index = SearchIndex(
            books=index.books,
            codes=CodeMatrix(codes),
            xi=index.xi,
            fast=index.fast,
            sigma=index.sigma,
            lambdas=index.lambdas,
            cfg=index.cfg,
        )
        res = search_exact(index, rng.normal(size=6), k=20)
        assert np.all(np.diff(res.scores) >= 0)
        for a, b in zip(res.ids[:-1], res.ids[1:]):
            sa, sb = res.scores[res.ids == a][0], res.scores[res.ids == b][0]
            if sa == sb:
                assert a < b

    def test_k_bounds(self, rng):
        index = build_index(rng, n=20)
        q = rng.normal(size=8)
        with pytest.raises(ValidationError):
            search_exact(index, q, k=0)
        with pytest.raises(ValidationError):
            search_exact(index, q, k=21)
        res = search_exact(index, q, k=20)
        assert res.ids.size == 20

    def test_query_validation(self, rng):
        index = build_index(rng, n=20, d=8)
        with pytest.raises(ValidationError):
            search_exact(index, np.zeros(7), k=1)
        with pytest.raises(ValidationError):
            search_exact(index, np.full(8, np.nan), k=1)


class TestTwoStepEngine:
    def test_huge_sigma_reproduces_exact(self, rng):
        index = build_index(rng, n=120, d=8, K=4, m=5)
        for _ in range(20):
            q = rng.normal(size=8)
            want = search_exact(index, q, k=7)
            got = search_two_step(index, q, k=7, sigma=1e18)
            assert np.array_equal(got.ids, want.ids)
            assert np.allclose(got.scores, want.scores)
            assert got.ops.refinements == index.n - 7

    def test_tie_ordering_matches_exact_under_duplicates(self, rng):
        index = build_index(rng, n=100, d=6, K=3, m=4)
        codes = index.codes.codes.copy()
        codes[1::2] = codes[0::2]
        index = SearchIndex(
            books=index.books,
            codes=CodeMatrix(codes),
            xi=index.xi,
            fast=index.fast,
            sigma=index.sigma,
            lambdas=index.lambdas,
            cfg=index.cfg,
        )
        for _ in range(20):
            q = rng.normal(size=6)
            want = search_exact(index, q, k=11)
            got = search_two_step(index, q, k=11, sigma=1e18)
            assert np.array_equal(got.ids, want.ids)

    def test_results_subset_is_well_formed_at_small_sigma(self, rng):
        index = build_index(rng, n=150, d=8, K=4, m=5)
        q = rng.normal(size=8)
        res = search_two_step(index, q, k=10, sigma=0.0)
        assert res.ids.size == 10
        assert np.all(np.diff(res.scores) >= 0)
        assert np.unique(res.ids).size == 10
        assert not res.fallback

    def test_pruning_reduces_exact_evaluations(self, rng):
        index = build_index(rng, n=300, d=8, K=4, m=6, sigma=0.1)
        q = rng.normal(size=8)
        res = search_two_step(index, q, k=5)
        assert res.ops.refinements < index.n - 5
        assert res.ops.exact_adds < search_exact(index, q, k=5).ops.exact_adds

    def test_refinements_bounded_and_saturate(self, rng):
        index = build_index(rng, n=200, d=8, K=4, m=5)
        q = rng.normal(size=8)
        k = 9
        lo = search_two_step(index, q, k, sigma=0.0).ops.refinements
        hi = search_two_step(index, q, k, sigma=1e18).ops.refinements
        assert 0 <= lo <= hi == index.n - k

    def test_op_accounting(self, rng):
        index = build_index(rng, n=150, d=8, K=4, m=5, sigma=0.3)
        q = rng.normal(size=8)
        k = 6
        res = search_two_step(index, q, k)
        f = index.fast.size
        assert res.ops.lut_ops == 4 * 5 * 8
        assert res.ops.fast_adds == (f - 1) * index.n
        assert res.ops.exact_adds == (4 - 1) * (res.ops.refinements + k)
        assert res.ops.evaluations == index.n
        assert res.ops.total_adds == res.ops.fast_adds + res.ops.exact_adds

    def test_default_sigma_comes_from_index(self, rng):
        index = build_index(rng, n=100, d=8, K=3, m=4, sigma=0.25)
        q = rng.normal(size=8)
        assert np.array_equal(
            search_two_step(index, q, k=5).ids,
            search_two_step(index, q, k=5, sigma=0.25).ids,
        )

    def test_negative_sigma_rejected(self, rng):
        index = build_index(rng, n=30)
        with pytest.raises(ValidationError):
            search_two_step(index, rng.normal(size=8), k=3, sigma=-1.0)

    def test_empty_fast_set_falls_back_to_exact(self, rng):
        index = build_index(rng, n=80, d=8, K=3, m=4, xi=np.zeros(8, dtype=np.uint8))
        assert index.fast.size == 0
        q = rng.normal(size=8)
        res = search_two_step(index, q, k=6)
        assert res.fallback
        want = search_exact(index, q, k=6)
        assert np.array_equal(res.ids, want.ids)

    def test_k_equals_n(self, rng):
        index = build_index(rng, n=40, d=8, K=3, m=4)
        q = rng.normal(size=8)
        res = search_two_step(index, q, k=40, sigma=1e18)
        assert np.array_equal(np.sort(res.ids), np.arange(40))


class TestBruteforce:
    def test_matches_direct_distances(self, rng):
        x = rng.normal(size=(50, 5)).astype(np.float32)
        q = rng.normal(size=5)
        res = search_bruteforce(x, q, k=8)
        scores = ((x.astype(np.float64) - q) ** 2).sum(axis=1)
        order = np.lexsort((np.arange(50), scores))[:8]
        assert np.array_equal(res.ids, order)
        assert np.allclose(res.scores, scores[order])
        assert res.ops.exact_adds == (5 - 1) * 50

    def test_accepts_dataset_wrapper(self, rng):
        from icq import EmbeddedDataset

        x = rng.normal(size=(30, 4)).astype(np.float32)
        ds = EmbeddedDataset(x)
        q = np.zeros(4)
        assert np.array_equal(search_bruteforce(ds, q, k=3).ids, search_bruteforce(x, q, k=3).ids)

    def test_tie_break_by_id(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], dtype=np.float32)
        res = search_bruteforce(x, np.zeros(2), k=3)
        assert res.ids.tolist() == [0, 1, 2]
        assert np.allclose(res.scores, 1.0)
