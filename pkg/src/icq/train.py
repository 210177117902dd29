"""Codebook training.

Pipeline: residual k-means initialization, per-batch joint descent on the
quantization loss plus the masked interleave penalty (with the prior's
parameters tracking the variance estimate), and a full ICM encoding pass at
every epoch end. The final epoch's variance snapshot fixes the subspace
mask, the fast codebook set, and the pruning margin of the returned index.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import (
    CodebookSet,
    CodeMatrix,
    Config,
    EmbeddedDataset,
    SearchIndex,
    ValidationError,
)
from .embedder import LinearEmbedder
from .moments import OnlineMoments
from .prior import PriorParams, prior_grad, prior_nll, subspace_mask

_INIT_SIGMA1 = 0.1
_INIT_SIGMA2 = 1.0


class TrainingError(RuntimeError):
    """Raised when a loss term goes non-finite during training."""

    def __init__(self, term: str, epoch: int):
        self.term = term
        self.epoch = epoch
        super().__init__(f"training diverged: {term} is non-finite at epoch {epoch}")


@dataclass
class TrainReport:
    """Per-epoch loss terms and the final mask/fast-set/variance state."""

    l_c: list[float] = field(default_factory=list)
    l_p: list[float] = field(default_factory=list)
    l_icq: list[float] = field(default_factory=list)
    l_e: list[float] = field(default_factory=list)
    psi_sizes: list[int] = field(default_factory=list)
    fast_sizes: list[int] = field(default_factory=list)
    lambdas: np.ndarray | None = None
    xi: np.ndarray | None = None
    fast: np.ndarray | None = None
    prior: PriorParams | None = None
    embedder: LinearEmbedder | None = None

    @property
    def epochs(self) -> int:
        return len(self.l_c)


def _vectors(ds) -> np.ndarray:
    if isinstance(ds, EmbeddedDataset):
        return ds.vectors
    arr = np.asarray(ds)
    if arr.ndim != 2:
        raise ValidationError(f"expected (n, d) vectors, got shape {arr.shape}")
    return arr


def _codewords(books) -> np.ndarray:
    return books.codewords if isinstance(books, CodebookSet) else np.asarray(books)


def _code_array(codes) -> np.ndarray:
    return codes.codes if isinstance(codes, CodeMatrix) else np.asarray(codes)


def _kmeans_pp(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread proportional to squared distance."""
    n = x.shape[0]
    centers = np.empty((m, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, m):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(x: np.ndarray, m: int, rng: np.random.Generator, iters: int = 20) -> np.ndarray:
    """Fixed-iteration Lloyd refinement; empty clusters reseed at far points."""
    n, d = x.shape
    if m > n:
        raise ValidationError(f"m={m} exceeds the number of points n={n}")
    centers = _kmeans_pp(x, m, rng)
    for _ in range(iters):
        # argmin over ||x - c||^2; the ||x||^2 term is constant per row
        part = centers @ x.T  # (m, n)
        c_sq = 0.5 * (centers**2).sum(axis=1)
        assign = np.argmax(part - c_sq[:, None], axis=0)
        counts = np.bincount(assign, minlength=m)
        sums = np.empty((m, d), dtype=np.float64)
        for j in range(d):
            sums[:, j] = np.bincount(assign, weights=x[:, j], minlength=m)
        empty = np.flatnonzero(counts == 0)
        nonzero = counts > 0
        centers[nonzero] = sums[nonzero] / counts[nonzero, None]
        if empty.size:
            dmin = (x**2).sum(axis=1) - 2.0 * (part[assign, np.arange(n)] - c_sq[assign])
            far = np.argsort(-dmin, kind="stable")[: empty.size]
            centers[empty] = x[far]
    return centers


def init_codebooks(ds, cfg: Config) -> CodebookSet:
    """Residual k-means chain: each codebook quantizes what the previous left.

    Returns float64 codewords; the index assembly narrows them to float32.
    """
    x = _vectors(ds).astype(np.float64)
    rng = np.random.default_rng(cfg.seed)
    return CodebookSet(_init_books(x, cfg.K, cfg.m, rng))


def _init_books(x: np.ndarray, K: int, m: int, rng: np.random.Generator) -> np.ndarray:
    res = x.copy()
    books = np.empty((K, m, x.shape[1]), dtype=np.float64)
    for k in range(K):
        centers = _lloyd(res, m, rng)
        books[k] = centers
        assign = np.argmin(
            (centers**2).sum(axis=1)[None, :] - 2.0 * (res @ centers.T), axis=1
        )
        res -= centers[assign]
    return books


def reconstruct(books, codes) -> np.ndarray:
    """Sum of the chosen codeword from every codebook, one row per element."""
    b = _codewords(books)
    c = _code_array(codes)
    recon = np.zeros((c.shape[0], b.shape[2]), dtype=np.float64)
    for k in range(b.shape[0]):
        recon += b[k][c[:, k]]
    return recon


def quantization_loss(ds, books, codes) -> float:
    """Mean squared reconstruction error over the dataset."""
    x = _vectors(ds).astype(np.float64)
    recon = reconstruct(books, codes)
    if recon.shape != x.shape:
        raise ValidationError(f"codes reconstruct shape {recon.shape}, data is {x.shape}")
    return float(np.mean(((x - recon) ** 2).sum(axis=1)))


def icq_penalty(books, xi: np.ndarray) -> float:
    """Interleave penalty: sum over codewords of ||c in mask|| * ||c outside||."""
    b = _codewords(books).astype(np.float64)
    inside, outside = _split_norms(b, xi)
    return float(np.sum(inside * outside))


def icq_penalty_grad(books, xi: np.ndarray) -> np.ndarray:
    """Gradient of icq_penalty per codeword entry (zero where a norm vanishes)."""
    b = _codewords(books).astype(np.float64)
    xi = _check_mask(xi, b.shape[2])
    inside, outside = _split_norms(b, xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_in = np.where(inside > 0, outside / inside, 0.0)[:, :, None]
        r_out = np.where(outside > 0, inside / outside, 0.0)[:, :, None]
    mask = xi.astype(np.float64)
    return r_in * (b * mask) + r_out * (b * (1.0 - mask))


def _check_mask(xi: np.ndarray, d: int) -> np.ndarray:
    xi = np.asarray(xi)
    if xi.shape != (d,):
        raise ValidationError(f"mask shape {xi.shape} does not match d={d}")
    return xi


def _split_norms(b: np.ndarray, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xi = _check_mask(xi, b.shape[2]).astype(bool)
    sq = b**2
    inside = np.sqrt(sq[:, :, xi].sum(axis=2)) if xi.any() else np.zeros(b.shape[:2])
    outside = np.sqrt(sq[:, :, ~xi].sum(axis=2)) if (~xi).any() else np.zeros(b.shape[:2])
    return inside, outside


def assign_codes(ds, books, codes=None, max_sweeps: int = 10) -> CodeMatrix:
    """Encode elements by iterated conditional modes over the codebooks.

    Without starting codes, books enter one at a time against the running
    residual (greedy build-up); afterwards full sweeps re-pick each code with
    the others fixed, only on strict improvement, until a sweep changes
    nothing or max_sweeps is reached. The reconstruction loss never
    increases.
    """
    x = _vectors(ds).astype(np.float64)
    b = _codewords(books).astype(np.float64)
    K = b.shape[0]
    n = x.shape[0]
    if b.shape[2] != x.shape[1]:
        raise ValidationError(f"codebook d={b.shape[2]} does not match data d={x.shape[1]}")
    c_sq = (b**2).sum(axis=2)  # (K, m)

    if codes is None:
        code_arr = np.empty((n, K), dtype=np.int64)
        res = x.copy()
        for k in range(K):
            dist = c_sq[k][None, :] - 2.0 * (res @ b[k].T)
            code_arr[:, k] = np.argmin(dist, axis=1)
            res -= b[k][code_arr[:, k]]
        recon = x - res
    else:
        code_arr = _code_array(codes).astype(np.int64).copy()
        if code_arr.shape != (n, K):
            raise ValidationError(f"codes shape {code_arr.shape} does not match ({n}, {K})")
        recon = reconstruct(b, code_arr)

    rows = np.arange(n)
    for _ in range(max_sweeps):
        changed = 0
        for k in range(K):
            cur = code_arr[:, k]
            target = x - (recon - b[k][cur])
            dist = c_sq[k][None, :] - 2.0 * (target @ b[k].T)
            best = np.argmin(dist, axis=1)
            improve = dist[rows, best] < dist[rows, cur]
            if np.any(improve):
                hit = np.flatnonzero(improve)
                recon[hit] += b[k][best[hit]] - b[k][cur[hit]]
                code_arr[hit, k] = best[hit]
                changed += hit.size
        if changed == 0:
            break
    return CodeMatrix(code_arr)


def fast_set(books, xi: np.ndarray) -> np.ndarray:
    """Codebooks whose every codeword has strictly more mass inside the mask.

    An all-zero codeword keeps its book out of the set.
    """
    b = _codewords(books).astype(np.float64)
    inside, outside = _split_norms(b, xi)
    return np.flatnonzero(np.all(outside < inside, axis=1)).astype(np.uint32)


def encode_dataset(index: SearchIndex, ds) -> SearchIndex:
    """Index new data with an already trained quantizer.

    Codes are reassigned by ICM; books, mask, fast set, and margin carry
    over unchanged.
    """
    x = _vectors(ds)
    if x.shape[1] != index.d:
        raise ValidationError(f"data d={x.shape[1]} does not match index d={index.d}")
    codes = assign_codes(x, index.books)
    return SearchIndex(
        books=index.books,
        codes=codes,
        xi=index.xi,
        fast=index.fast,
        sigma=index.sigma,
        lambdas=index.lambdas,
        cfg=index.cfg,
    )


def _capped_mask(lam: np.ndarray, params: PriorParams, psi_cap: int | None) -> np.ndarray:
    xi = subspace_mask(lam, params)
    if psi_cap is not None and int(xi.sum()) > psi_cap:
        sel = np.flatnonzero(xi)
        keep = sel[np.argsort(-lam[sel], kind="stable")[:psi_cap]]
        xi = np.zeros_like(xi)
        xi[keep] = 1
    return xi


def train(
    ds: EmbeddedDataset,
    cfg: Config,
    with_embedder: bool = False,
    embed_dim: int | None = None,
    embed_weight: float = 1.0,
    psi_cap: int | None = None,
) -> tuple[SearchIndex, TrainReport]:
    """Train codebooks, prior, and (optionally) the embedder jointly.

    Each batch updates the variance estimate, steps the prior parameters
    (sigmas in log space), refreshes the mask, and steps the codebooks on
    the quantization loss plus gamma2 times the interleave penalty with the
    codes held fixed. Epoch ends run a full ICM pass and reset the moments.
    Runs are bitwise deterministic for a fixed config.

    Raises:
        TrainingError: a recorded loss term went non-finite.
    """
    raw = ds.vectors
    n = raw.shape[0]
    if cfg.m > n:
        raise ValidationError(f"m={cfg.m} exceeds the dataset size n={n}")
    rng = np.random.default_rng(cfg.seed)

    emb = None
    if with_embedder:
        if ds.labels is None:
            raise ValidationError("with_embedder requires a labeled dataset")
        n_classes = int(ds.labels.max()) + 1
        emb = LinearEmbedder(raw.shape[1], embed_dim, n_classes, seed=cfg.seed)
        raw64 = raw.astype(np.float64)
        x = emb.embed(raw64)
    else:
        x = raw.astype(np.float64)
    d = x.shape[1]

    books = _init_books(x, cfg.K, cfg.m, rng)
    codes = assign_codes(x, books).codes.astype(np.int64)

    lam0 = x.var(axis=0)
    params = PriorParams(
        sigma1=_INIT_SIGMA1,
        sigma2=_INIT_SIGMA2,
        mu2=float(np.quantile(lam0, 0.9)),
        alpha2=cfg.alpha2,
        pi1=cfg.pi1,
        pi2=cfg.pi2,
    )
    log_s1 = math.log(params.sigma1)
    log_s2 = math.log(params.sigma2)

    moments = OnlineMoments(d)
    report = TrainReport()
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    lam = lam0
    xi = _capped_mask(lam, params, psi_cap)
    sigma = 0.0

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = perm[start : start + cfg.batch_size]
            if emb is not None:
                raw_b = raw64[rows]
                xb = emb.embed(raw_b)
            else:
                xb = x[rows]
            nb = rows.size

            moments.update(xb)
            lam = moments.variance
            lr = cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))

            _, gp = prior_grad(lam, params)
            log_s1 -= lr * cfg.gamma1 * gp.sigma1 * params.sigma1
            log_s2 -= lr * cfg.gamma1 * gp.sigma2 * params.sigma2
            mu2 = params.mu2 - lr * cfg.gamma1 * gp.mu2
            params = PriorParams(
                math.exp(log_s1), math.exp(log_s2), mu2, cfg.alpha2, cfg.pi1, cfg.pi2
            )
            xi = _capped_mask(lam, params, psi_cap)

            recon_b = np.zeros((nb, d), dtype=np.float64)
            for k in range(cfg.K):
                recon_b += books[k][codes[rows, k]]
            resid = xb - recon_b
            grad_books = np.zeros_like(books)
            for k in range(cfg.K):
                np.add.at(grad_books[k], codes[rows, k], resid)
            grad_books *= -2.0 / nb
            if cfg.gamma2 > 0:
                grad_books += cfg.gamma2 * icq_penalty_grad(books, xi)
            books -= lr * grad_books

            if emb is not None:
                l_e, grads = emb.classification_loss(raw_b, ds.labels[rows])
                dx = (2.0 / nb) * resid  # straight-through: codes fixed
                emb.weight -= lr * (embed_weight * grads["weight"] + dx.T @ raw_b)
                emb.classifier -= lr * embed_weight * grads["classifier"]
                emb.bias -= lr * embed_weight * grads["bias"]
            step += 1

        if emb is not None:
            x = emb.embed(raw64)
        codes = assign_codes(x, books, codes).codes.astype(np.int64)

        lam = moments.variance.copy()
        xi = _capped_mask(lam, params, psi_cap)
        sigma = moments.margin(xi, cfg.sigma_scale)
        epoch_losses = {
            "L_C": quantization_loss(x, books, codes),
            "L_P": prior_nll(lam, params),
            "L_ICQ": icq_penalty(books, xi),
            "L_E": (emb.classification_loss(raw64, ds.labels)[0] if emb is not None else 0.0),
        }
        for term, value in epoch_losses.items():
            if not np.isfinite(value):
                raise TrainingError(term, epoch)
        report.l_c.append(epoch_losses["L_C"])
        report.l_p.append(epoch_losses["L_P"])
        report.l_icq.append(epoch_losses["L_ICQ"])
        report.l_e.append(epoch_losses["L_E"])
        report.psi_sizes.append(int(xi.sum()))
        report.fast_sizes.append(int(fast_set(books, xi).size))
        moments.reset()

    books32 = books.astype(np.float32)
    fast = fast_set(books32, xi)
    index = SearchIndex(
        books=CodebookSet(books32),
        codes=CodeMatrix(codes),
        xi=xi,
        fast=fast,
        sigma=sigma,
        lambdas=lam.astype(np.float32),
        cfg=cfg,
    )
    report.lambdas = lam
    report.xi = xi
    report.fast = fast
    report.prior = params
    report.embedder = emb
    return index, report
