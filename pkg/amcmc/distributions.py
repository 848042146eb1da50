"""
Seeded random variates shared by the samplers.

Every sampler takes a numpy Generator. SeededRng builds those generators from a
(seed, stream) pair on the counter-based Philox bit generator, so chains with
different streams are independent and a given pair always replays the same
variates.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.linalg

from .errors import DomainError

logger = logging.getLogger(__name__)

PG_TERMS = 200
SYMMETRY_TOL = 1e-8
PSD_TOL = 1e-8


@dataclass(frozen=True)
class SeededRng:
    """
    Reproducible generator recipe.

    Args:
        seed: 64-bit seed.
        stream: Path of stream indices; substream() appends to it.
        algorithm: Bit generator name, informational.
    """

    seed: int
    stream: Tuple[int, ...] = ()
    algorithm: str = "philox"

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2 ** 64):
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        object.__setattr__(self, "stream", tuple(int(s) for s in self.stream))

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(int(self.seed), spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(sequence))

    def substream(self, index: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + (int(index),), self.algorithm)


def sample_dirichlet(rng: np.random.Generator, concentration) -> np.ndarray:
    """
    Draw a simplex point by normalizing independent gammas.

    Small concentrations are handled in log space (G_a = G_{a+1} U^{1/a}) so a
    draw never collapses to an all-zero vector.
    """
    conc = np.asarray(concentration, dtype=float)
    if conc.ndim != 1 or conc.size == 0:
        raise DomainError("concentration must be a nonempty vector")
    if np.any(~(conc > 0.0)) or not np.all(np.isfinite(conc)):
        raise DomainError("Dirichlet concentrations must be positive and finite")
    if conc.size == 1:
        rng.standard_gamma(conc)
        return np.ones(1)
    log_g = np.log(rng.standard_gamma(conc + 1.0)) + np.log(rng.random(conc.size)) / conc
    log_g -= log_g.max()
    weights = np.exp(log_g)
    return weights / weights.sum()


def sample_multinomial(rng: np.random.Generator, n: int, probs) -> np.ndarray:
    """Counts for n trials; numpy's sequential binomial construction, sums to n exactly."""
    n = int(n)
    if n < 0:
        raise DomainError(f"trial count must be nonnegative, got {n}")
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0 or np.any(probs < 0.0) or not probs.sum() > 0.0:
        raise DomainError("multinomial probabilities must be a nonnegative vector with positive mass")
    return rng.multinomial(n, probs / probs.sum()).astype(np.int64)


def mvn_root(covariance) -> np.ndarray:
    """
    A factor L with L L' = covariance.

    Cholesky when the matrix is strictly positive definite, otherwise the
    eigendecomposition with tiny negative eigenvalues clipped to zero.
    """
    cov = np.asarray(covariance, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DomainError(f"covariance must be square, got shape {cov.shape}")
    if np.abs(cov - cov.T).max(initial=0.0) > SYMMETRY_TOL:
        raise DomainError("covariance is not symmetric")
    try:
        return scipy.linalg.cholesky(cov, lower=True)
    except np.linalg.LinAlgError:
        values, vectors = scipy.linalg.eigh(0.5 * (cov + cov.T))
        if values.min(initial=0.0) < -PSD_TOL:
            raise DomainError(f"covariance has eigenvalue {values.min():.3g} below -{PSD_TOL}")
        return vectors * np.sqrt(np.clip(values, 0.0, None))


def sample_mvn(rng: np.random.Generator, mean, covariance) -> np.ndarray:
    """mean + L z with L from mvn_root and z standard normal."""
    mean = np.asarray(mean, dtype=float)
    root = mvn_root(covariance)
    if root.shape[0] != mean.shape[0]:
        raise DomainError(f"mean has length {mean.shape[0]} but covariance is {root.shape[0]}-dimensional")
    return mean + root @ rng.standard_normal(root.shape[1])


def polya_gamma_mean(c) -> np.ndarray:
    """E[PG(1, c)] = tanh(c/2) / (2c), with the limit 1/4 at c = 0."""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-4
    safe = np.where(small, 1.0, c)
    return np.where(small, 0.25 - c * c / 48.0, np.tanh(safe / 2.0) / (2.0 * safe))


def sample_polya_gamma(rng: np.random.Generator, c, terms: int = PG_TERMS) -> np.ndarray:
    """
    PG(1, c) variates from the truncated sum of weighted exponentials.

    omega = 1/(2 pi^2) sum_{k=1..T} g_k / ((k - 1/2)^2 + c^2/(4 pi^2)), and the
    mean of the dropped tail is added back so the draw has the exact mean.

    Args:
        rng: Generator.
        c: Tilt parameters, scalar or array.
        terms: Truncation level T.

    Returns:
        ndarray: One variate per entry of c, all strictly positive.
    """
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise DomainError("Polya-Gamma tilt must be finite")
    flat = c.reshape(-1)
    k = np.arange(1, int(terms) + 1, dtype=float)
    denom = (k - 0.5) ** 2 + (flat[:, None] ** 2) / (4.0 * math.pi ** 2)
    g = rng.standard_exponential((flat.size, k.size))
    scale = 1.0 / (2.0 * math.pi ** 2)
    draws = scale * (g / denom).sum(axis=1)
    truncated_mean = scale * (1.0 / denom).sum(axis=1)
    draws += polya_gamma_mean(flat) - truncated_mean
    return draws.reshape(c.shape)


def sample_gamma(rng: np.random.Generator, shape: float, rate: float) -> float:
    """Gamma variate with the shape/rate parameterization."""
    if not (shape > 0.0 and rate > 0.0):
        raise DomainError(f"gamma shape and rate must be positive, got {shape}, {rate}")
    return float(rng.gamma(shape, 1.0 / rate))


def sample_discrete(rng: np.random.Generator, probs) -> int:
    """Index drawn by inverse CDF from unnormalized nonnegative weights."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0 or np.any(probs < 0.0) or not probs.sum() > 0.0:
        raise DomainError("discrete weights must be a nonnegative vector with positive mass")
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), probs.size - 1)
