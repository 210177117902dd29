"""Bi-modal prior over per-dimension variances.

The mixture pairs a zero-centered normal (dead dimensions) with a
negatively skewed normal (live, high-variance dimensions):

    P(lam) = pi1 * N(lam; 0, sigma1) + pi2 * SN(lam; mu2, sigma2, alpha2)

Its negative log likelihood carries a robustness term, -log(sum_i pi2 *
SN(lam_i)), that keeps the skewed mode from detaching from the data. The
subspace mask marks the dimensions the skewed mode claims.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .data import ValidationError

# Densities are floored before logs so far-tail evaluations stay finite.
DENSITY_FLOOR = 1e-300

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class PriorParams:
    """Mixture parameters; sigma1, sigma2, mu2 are the trainable subset."""

    sigma1: float
    sigma2: float
    mu2: float
    alpha2: float = -10.0
    pi1: float = 0.9
    pi2: float = 0.1

    def __post_init__(self):
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ValidationError(f"sigmas must be > 0, got {self.sigma1}, {self.sigma2}")
        if not (self.pi1 > self.pi2 > 0):
            raise ValidationError(f"need pi1 > pi2 > 0, got {self.pi1}, {self.pi2}")
        if abs(self.pi1 + self.pi2 - 1.0) > 1e-12:
            raise ValidationError(f"pi1 + pi2 must equal 1, got {self.pi1 + self.pi2}")
        if self.alpha2 >= 0:
            raise ValidationError(f"alpha2 must be negative, got {self.alpha2}")


@dataclass
class PriorParamGrad:
    """Partial derivatives of the NLL with respect to the trainable subset."""

    sigma1: float
    sigma2: float
    mu2: float


def normal_pdf(x, sigma: float):
    """Zero-mean normal density at x (scalar or array)."""
    x = np.asarray(x, dtype=np.float64)
    z = x / sigma
    return _INV_SQRT_2PI / sigma * np.exp(-0.5 * z * z)


def skew_normal_pdf(x, mu: float, sigma: float, alpha: float):
    """Skew-normal density (2/sigma) * phi(z) * Phi(alpha z), z = (x-mu)/sigma."""
    x = np.asarray(x, dtype=np.float64)
    z = (x - mu) / sigma
    return 2.0 / sigma * (_INV_SQRT_2PI * np.exp(-0.5 * z * z)) * ndtr(alpha * z)


def _mixture(lambdas: np.ndarray, p: PriorParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension component densities (normal, skew-normal)."""
    n = normal_pdf(lambdas, p.sigma1)
    s = skew_normal_pdf(lambdas, p.mu2, p.sigma2, p.alpha2)
    return n, s


def prior_nll(lambdas: np.ndarray, params: PriorParams) -> float:
    """Negative log likelihood of the variances plus the robustness term.

    Both the per-dimension mixture and the skewed-mode mass are floored at
    DENSITY_FLOOR inside the logs, so the result is finite for any input.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    n, s = _mixture(lambdas, params)
    mix = np.maximum(params.pi1 * n + params.pi2 * s, DENSITY_FLOOR)
    tail_mass = max(float(np.sum(params.pi2 * s)), DENSITY_FLOOR)
    return float(-np.sum(np.log(mix)) - np.log(tail_mass))


def prior_grad(lambdas: np.ndarray, params: PriorParams) -> tuple[np.ndarray, PriorParamGrad]:
    """Analytic gradient of prior_nll.

    Returns:
        Per-dimension gradient with respect to each lambda, and the gradient
        with respect to (sigma1, sigma2, mu2). Floored terms contribute zero,
        matching finite differences of prior_nll away from the floor boundary.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    p = params
    n, s = _mixture(lambdas, p)

    z1 = lambdas / p.sigma1
    z2 = (lambdas - p.mu2) / p.sigma2
    # t = (2/sigma2) * phi(z2) * alpha * phi(alpha z2): derivative of the
    # Phi factor; ds/dz2 = -z2 * s + t.
    t = (
        2.0 / p.sigma2
        * (_INV_SQRT_2PI * np.exp(-0.5 * z2 * z2))
        * p.alpha2
        * (_INV_SQRT_2PI * np.exp(-0.5 * (p.alpha2 * z2) ** 2))
    )
    ds_dz = -z2 * s + t

    dn_dlam = -(z1 / p.sigma1) * n
    ds_dlam = ds_dz / p.sigma2
    dn_dsigma1 = (z1 * z1 - 1.0) / p.sigma1 * n
    ds_dsigma2 = -(s + z2 * ds_dz) / p.sigma2
    ds_dmu2 = -ds_dz / p.sigma2

    mix = p.pi1 * n + p.pi2 * s
    live = mix > DENSITY_FLOOR
    inv_mix = np.where(live, 1.0 / np.maximum(mix, DENSITY_FLOOR), 0.0)

    tail_mass = float(np.sum(p.pi2 * s))
    inv_tail = 1.0 / tail_mass if tail_mass > DENSITY_FLOOR else 0.0

    grad_lam = -(p.pi1 * dn_dlam + p.pi2 * ds_dlam) * inv_mix - p.pi2 * ds_dlam * inv_tail
    grad = PriorParamGrad(
        sigma1=float(-np.sum(p.pi1 * dn_dsigma1 * inv_mix)),
        sigma2=float(
            -np.sum(p.pi2 * ds_dsigma2 * inv_mix) - np.sum(p.pi2 * ds_dsigma2) * inv_tail
        ),
        mu2=float(-np.sum(p.pi2 * ds_dmu2 * inv_mix) - np.sum(p.pi2 * ds_dmu2) * inv_tail),
    )
    return grad_lam, grad


def subspace_mask(lambdas: np.ndarray, params: PriorParams) -> np.ndarray:
    """Dimensions the skewed mode wins: xi_i = 1 iff pi2*SN > pi1*N (strict).

    Ties, including both densities underflowing to zero, resolve to 0.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    n, s = _mixture(lambdas, params)
    return (params.pi2 * s > params.pi1 * n).astype(np.uint8)
