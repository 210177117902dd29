"""Labeled Gaussian-cluster synthesizer with planted informative dimensions.

Class centroids sit on scaled random hypercube vertices inside a randomly
placed informative subspace; redundant dimensions are unit-norm random
linear combinations of the informative ones, and everything else is
low-amplitude noise. The informative positions are returned so recovery of
the planted subspace can be scored.
"""

from dataclasses import dataclass

import numpy as np

from .data import EmbeddedDataset, ValidationError


@dataclass
class SynthSpec:
    """Generation parameters; redundant defaults to half the leftover dims."""

    n_train: int
    n_test: int
    d: int
    informative: int
    redundant: int | None = None
    classes: int = 2
    class_sep: float = 2.0
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 0:
            raise ValidationError("need n_train >= 1 and n_test >= 0")
        if self.d < 1:
            raise ValidationError(f"d must be >= 1, got {self.d}")
        if not 1 <= self.informative <= self.d:
            raise ValidationError(f"informative must be in [1, {self.d}], got {self.informative}")
        if self.redundant is None:
            self.redundant = (self.d - self.informative) // 2
        if self.redundant < 0 or self.informative + self.redundant > self.d:
            raise ValidationError(f"redundant={self.redundant} does not fit in d={self.d}")
        if self.classes < 2:
            raise ValidationError(f"classes must be >= 2, got {self.classes}")
        if self.classes > 2**self.informative:
            raise ValidationError(
                f"{self.classes} classes need more than {self.informative} informative dims"
            )
        if self.class_sep <= 0:
            raise ValidationError(f"class_sep must be > 0, got {self.class_sep}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _distinct_vertices(rng: np.random.Generator, classes: int, dims: int) -> np.ndarray:
    """Distinct random {-1, +1} hypercube vertices, one per class."""
    while True:
        v = rng.integers(0, 2, size=(classes, dims)) * 2 - 1
        if np.unique(v, axis=0).shape[0] == classes:
            return v.astype(np.float64)


def _balanced_labels(rng: np.random.Generator, n: int, classes: int) -> np.ndarray:
    counts = np.full(classes, n // classes)
    counts[: n % classes] += 1
    return rng.permutation(np.repeat(np.arange(classes, dtype=np.uint32), counts))


def generate(spec: SynthSpec) -> tuple[EmbeddedDataset, EmbeddedDataset, np.ndarray]:
    """Draw a train/test pair and return the informative dimension indices."""
    rng = np.random.default_rng(spec.seed)
    centroids = spec.class_sep * _distinct_vertices(rng, spec.classes, spec.informative)

    perm = rng.permutation(spec.d)
    info_pos = np.sort(perm[: spec.informative])
    red_pos = np.sort(perm[spec.informative : spec.informative + spec.redundant])
    noise_pos = np.sort(perm[spec.informative + spec.redundant :])

    if spec.redundant:
        mix = rng.standard_normal((spec.informative, spec.redundant))
        mix /= np.linalg.norm(mix, axis=0, keepdims=True)
    else:
        mix = np.zeros((spec.informative, 0))

    def draw(n: int) -> EmbeddedDataset:
        labels = _balanced_labels(rng, n, spec.classes)
        x_info = centroids[labels] + rng.standard_normal((n, spec.informative))
        x = np.zeros((n, spec.d), dtype=np.float64)
        x[:, info_pos] = x_info
        x[:, red_pos] = x_info @ mix
        x[:, noise_pos] = spec.noise_sigma * rng.standard_normal((n, noise_pos.size))
        return EmbeddedDataset(x, labels)

    train = draw(spec.n_train)
    test = draw(spec.n_test)
    return train, test, info_pos.astype(np.int64)
