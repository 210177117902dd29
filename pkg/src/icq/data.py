"""Shared containers and binary persistence.

Two little-endian file formats:

* dataset (magic ``ICQD``): u32 n, u32 d, u8 has_labels, n*d float32 vectors
  row-major, then n uint32 labels if has_labels.
* index (magic ``ICQI``): u32 format version, the Config fields in fixed
  order, u32 n, u32 d, K*m*d float32 codewords, n*K uint32 codes, the
  subspace mask (u32 length + u8 entries), the fast-set membership mask
  (u32 length + u8 entries), the variance vector (u32 length + float32
  entries), and the float32 pruning margin.

Stored vectors are float32 and codes uint32, so save/load round-trips are
bitwise exact.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

INDEX_FORMAT_VERSION = 1

_DATASET_MAGIC = b"ICQD"
_INDEX_MAGIC = b"ICQI"

# Config scalars in serialization order: K, m, gamma1, gamma2, pi1, pi2,
# alpha2, sigma_scale, epochs, batch_size, learning_rate, seed.
_CONFIG_STRUCT = struct.Struct("<IIddddddIIdQ")


class ValidationError(ValueError):
    """Invalid values: non-finite data, bad shapes, out-of-range parameters."""


class FormatError(Exception):
    """Malformed file: bad magic, truncated payload, inconsistent lengths."""


class UnsupportedVersionError(FormatError):
    """Index file written with an unknown format version."""


@dataclass
class EmbeddedDataset:
    """Vectors in the embedded space plus optional integer class labels.

    Args:
        vectors: (n, d) array, stored as float32.
        labels: optional (n,) array of non-negative ints, stored as uint32.
    """

    vectors: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValidationError(f"vectors must be 2-d, got shape {vectors.shape}")
        self.vectors = vectors
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (vectors.shape[0],):
                raise ValidationError(
                    f"labels shape {labels.shape} does not match n={vectors.shape[0]}"
                )
            if labels.size and (np.any(labels < 0) or not np.issubdtype(labels.dtype, np.integer)):
                raise ValidationError("labels must be non-negative integers")
            self.labels = np.ascontiguousarray(labels, dtype=np.uint32)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


@dataclass
class Config:
    """Training and search hyperparameters.

    Mixture weights are fixed (pi1 > pi2, summing to one) and alpha2 stays
    negative; sigmas of the prior are trained, not configured.
    """

    K: int = 8
    m: int = 256
    gamma1: float = 0.1
    gamma2: float = 1.0
    pi1: float = 0.9
    pi2: float = 0.1
    alpha2: float = -10.0
    sigma_scale: float = 1.0
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        if self.m < 2:
            raise ValidationError(f"m must be >= 2, got {self.m}")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValidationError("gamma1 and gamma2 must be non-negative")
        if not (self.pi1 > self.pi2 > 0):
            raise ValidationError(f"need pi1 > pi2 > 0, got {self.pi1}, {self.pi2}")
        if abs(self.pi1 + self.pi2 - 1.0) > 1e-12:
            raise ValidationError(f"pi1 + pi2 must equal 1, got {self.pi1 + self.pi2}")
        if self.alpha2 >= 0:
            raise ValidationError(f"alpha2 must be negative, got {self.alpha2}")
        if self.sigma_scale < 0:
            raise ValidationError(f"sigma_scale must be >= 0, got {self.sigma_scale}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")

    def pack(self) -> bytes:
        return _CONFIG_STRUCT.pack(
            self.K, self.m, self.gamma1, self.gamma2, self.pi1, self.pi2,
            self.alpha2, self.sigma_scale, self.epochs, self.batch_size,
            self.learning_rate, self.seed,
        )

    @classmethod
    def unpack(cls, buf: bytes) -> "Config":
        values = _CONFIG_STRUCT.unpack(buf)
        return cls(*values)


@dataclass
class CodebookSet:
    """K codebooks of m codewords each, as a (K, m, d) array."""

    codewords: np.ndarray

    def __post_init__(self):
        codewords = np.ascontiguousarray(self.codewords)
        if codewords.ndim != 3:
            raise ValidationError(f"codewords must be (K, m, d), got shape {codewords.shape}")
        self.codewords = codewords

    def __getitem__(self, k: int) -> np.ndarray:
        return self.codewords[k]

    def __len__(self) -> int:
        return self.codewords.shape[0]

    @property
    def K(self) -> int:
        return self.codewords.shape[0]

    @property
    def m(self) -> int:
        return self.codewords.shape[1]

    @property
    def d(self) -> int:
        return self.codewords.shape[2]


@dataclass
class CodeMatrix:
    """Per-element codeword choices, one column per codebook: (n, K) uint32."""

    codes: np.ndarray

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes)
        if codes.ndim != 2:
            raise ValidationError(f"codes must be (n, K), got shape {codes.shape}")
        if codes.size and np.any(codes < 0):
            raise ValidationError("codes must be non-negative")
        self.codes = codes.astype(np.uint32, copy=False)

    def __len__(self) -> int:
        return self.codes.shape[0]

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def K(self) -> int:
        return self.codes.shape[1]


@dataclass
class SearchIndex:
    """Complete query-time state of a trained quantizer.

    Fields:
        books: trained CodebookSet (float32).
        codes: CodeMatrix over the indexed elements.
        xi: (d,) uint8 subspace mask.
        fast: sorted codebook indices whose codewords live inside the mask.
        sigma: pruning margin (float32 precision).
        lambdas: (d,) float32 per-dimension variance snapshot.
        cfg: the Config the index was trained under.
    """

    books: CodebookSet
    codes: CodeMatrix
    xi: np.ndarray
    fast: np.ndarray
    sigma: float
    lambdas: np.ndarray
    cfg: Config = field(default_factory=Config)

    def __post_init__(self):
        books = self.books
        codes = self.codes
        if not isinstance(books, CodebookSet):
            books = CodebookSet(books)
        if not isinstance(codes, CodeMatrix):
            codes = CodeMatrix(codes)
        self.books = CodebookSet(books.codewords.astype(np.float32, copy=False))
        self.codes = codes
        if codes.K != books.K:
            raise ValidationError(f"codes have {codes.K} books, codebooks have {books.K}")
        if codes.codes.size and codes.codes.max() >= books.m:
            raise ValidationError("codes reference codewords beyond m")
        if self.cfg.K != books.K or self.cfg.m != books.m:
            raise ValidationError("config K/m disagree with the codebooks")

        xi = np.ascontiguousarray(np.asarray(self.xi), dtype=np.uint8)
        if xi.shape != (books.d,):
            raise ValidationError(f"xi length {xi.shape} does not match d={books.d}")
        if xi.size and xi.max() > 1:
            raise ValidationError("xi entries must be 0 or 1")
        self.xi = xi

        fast = np.ascontiguousarray(np.asarray(self.fast), dtype=np.uint32)
        if fast.ndim != 1 or (fast.size and fast.max() >= books.K):
            raise ValidationError("fast set must hold codebook indices in [0, K)")
        if fast.size and (np.any(np.diff(fast.astype(np.int64)) <= 0)):
            raise ValidationError("fast set must be sorted and unique")
        self.fast = fast

        lambdas = np.ascontiguousarray(np.asarray(self.lambdas), dtype=np.float32)
        if lambdas.shape != (books.d,):
            raise ValidationError(f"lambdas length {lambdas.shape} does not match d={books.d}")
        if lambdas.size and (not np.all(np.isfinite(lambdas)) or lambdas.min() < 0):
            raise ValidationError("lambdas must be finite and non-negative")
        self.lambdas = lambdas

        sigma = float(np.float32(self.sigma))
        if not np.isfinite(sigma) or sigma < 0:
            raise ValidationError(f"sigma must be finite and >= 0, got {self.sigma}")
        self.sigma = sigma

    @property
    def n(self) -> int:
        return self.codes.n

    @property
    def d(self) -> int:
        return self.books.d


def save_dataset(ds: EmbeddedDataset, path) -> None:
    """Write a dataset file; non-finite vectors are rejected."""
    if not np.all(np.isfinite(ds.vectors)):
        raise ValidationError("dataset vectors contain non-finite values")
    has_labels = ds.labels is not None
    with open(path, "wb") as f:
        f.write(_DATASET_MAGIC)
        f.write(struct.pack("<IIB", ds.n, ds.d, int(has_labels)))
        f.write(np.ascontiguousarray(ds.vectors, dtype="<f4").tobytes())
        if has_labels:
            f.write(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())


def load_dataset(path) -> EmbeddedDataset:
    """Read a dataset file, validating magic, header, and exact length."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 13:
        raise FormatError(f"dataset file too short ({len(raw)} bytes)")
    if raw[:4] != _DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {raw[:4]!r}")
    n, d, has_labels = struct.unpack_from("<IIB", raw, 4)
    if has_labels not in (0, 1):
        raise FormatError(f"has_labels flag must be 0 or 1, got {has_labels}")
    expected = 13 + n * d * 4 + (n * 4 if has_labels else 0)
    if len(raw) != expected:
        raise FormatError(f"dataset payload is {len(raw)} bytes, expected {expected}")
    off = 13
    vectors = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += n * d * 4
    labels = None
    if has_labels:
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off)
    return EmbeddedDataset(vectors.copy(), None if labels is None else labels.copy())


def _pack_u8_section(values: np.ndarray) -> bytes:
    return struct.pack("<I", len(values)) + np.ascontiguousarray(values, dtype=np.uint8).tobytes()


def save_index(index: SearchIndex, path) -> None:
    """Write an index file with every field in fixed little-endian order."""
    books = index.books
    fast_mask = np.zeros(books.K, dtype=np.uint8)
    fast_mask[index.fast.astype(np.int64)] = 1
    with open(path, "wb") as f:
        f.write(_INDEX_MAGIC)
        f.write(struct.pack("<I", INDEX_FORMAT_VERSION))
        f.write(index.cfg.pack())
        f.write(struct.pack("<II", index.n, index.d))
        f.write(np.ascontiguousarray(books.codewords, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(index.codes.codes, dtype="<u4").tobytes())
        f.write(_pack_u8_section(index.xi))
        f.write(_pack_u8_section(fast_mask))
        f.write(struct.pack("<I", index.d))
        f.write(np.ascontiguousarray(index.lambdas, dtype="<f4").tobytes())
        f.write(struct.pack("<f", index.sigma))


class _Reader:
    """Cursor over a byte buffer that errors on any overrun."""

    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.off + count > len(self.raw):
            raise FormatError(f"index file {self.path} truncated at offset {self.off}")
        out = self.raw[self.off : self.off + count]
        self.off += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize), dtype=dtype, count=count).copy()


def load_index(path) -> SearchIndex:
    """Read an index file; any inconsistency raises FormatError."""
    with open(path, "rb") as f:
        raw = f.read()
    r = _Reader(raw, path)
    if r.take(4) != _INDEX_MAGIC:
        raise FormatError(f"bad index magic in {path}")
    version = r.u32()
    if version != INDEX_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"index format version {version}, this build reads {INDEX_FORMAT_VERSION}"
        )
    try:
        cfg = Config.unpack(r.take(_CONFIG_STRUCT.size))
    except ValidationError as exc:
        raise FormatError(f"index config invalid: {exc}") from exc
    n = r.u32()
    d = r.u32()
    codewords = r.array("<f4", cfg.K * cfg.m * d).reshape(cfg.K, cfg.m, d)
    codes = r.array("<u4", n * cfg.K).reshape(n, cfg.K)
    xi_len = r.u32()
    if xi_len != d:
        raise FormatError(f"mask length {xi_len} does not match d={d}")
    xi = r.array("u1", xi_len)
    fast_len = r.u32()
    if fast_len != cfg.K:
        raise FormatError(f"fast mask length {fast_len} does not match K={cfg.K}")
    fast_mask = r.array("u1", fast_len)
    lam_len = r.u32()
    if lam_len != d:
        raise FormatError(f"variance length {lam_len} does not match d={d}")
    lambdas = r.array("<f4", lam_len)
    sigma = struct.unpack("<f", r.take(4))[0]
    if r.off != len(raw):
        raise FormatError(f"index file {path} has {len(raw) - r.off} trailing bytes")
    try:
        return SearchIndex(
            books=CodebookSet(codewords),
            codes=CodeMatrix(codes),
            xi=xi,
            fast=np.flatnonzero(fast_mask).astype(np.uint32),
            sigma=sigma,
            lambdas=lambdas,
            cfg=cfg,
        )
    except ValidationError as exc:
        raise FormatError(f"index fields invalid: {exc}") from exc
