"""Streaming per-dimension moments over equal-size batches."""

import numpy as np

from .data import ValidationError


class OnlineMoments:
    """Running mean and population variance, merged one batch at a time.

    With equal batch sizes the recursion reproduces the population moments
    of the concatenated data exactly (up to float64 rounding):

        M_b = M_{b-1} + (M_batch - M_{b-1}) / b
        V_b = V_{b-1} + (V_batch - V_{b-1}) / b
              + (1/b) (1 - 1/b) (M_batch - M_{b-1})^2
    """

    def __init__(self, d: int):
        if d < 1:
            raise ValidationError(f"d must be >= 1, got {d}")
        self.d = d
        self.count = 0  # batches seen
        self.mean = np.zeros(d, dtype=np.float64)
        self.var = np.zeros(d, dtype=np.float64)

    def update(self, batch: np.ndarray) -> None:
        """Fold one (n_b, d) batch into the running moments."""
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.d:
            raise ValidationError(f"batch shape {batch.shape} does not match d={self.d}")
        if batch.shape[0] < 1:
            raise ValidationError("batch must hold at least one row")
        m_batch = batch.mean(axis=0)
        v_batch = batch.var(axis=0)  # population variance, divide by n_b
        self.count += 1
        b = self.count
        delta = m_batch - self.mean
        self.mean += delta / b
        self.var += (v_batch - self.var) / b + (1.0 / b) * (1.0 - 1.0 / b) * delta * delta

    def reset(self) -> None:
        """Drop all state; a reset-then-update equals a fresh update."""
        self.count = 0
        self.mean[:] = 0.0
        self.var[:] = 0.0

    @property
    def variance(self) -> np.ndarray:
        return self.var

    def margin(self, mask: np.ndarray, sigma_scale: float) -> float:
        """Pruning margin: sigma_scale times the variance mass outside the mask."""
        if self.count == 0:
            raise RuntimeError("margin requested before any update")
        mask = np.asarray(mask)
        if mask.shape != (self.d,):
            raise ValidationError(f"mask shape {mask.shape} does not match d={self.d}")
        if sigma_scale < 0:
            raise ValidationError(f"sigma_scale must be >= 0, got {sigma_scale}")
        return float(sigma_scale * self.var[mask == 0].sum())
