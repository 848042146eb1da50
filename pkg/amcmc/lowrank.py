"""
Randomized partial eigendecomposition of PSD matrices.

The basis grows in Gaussian blocks until a probe-vector estimate of the range
residual certifies the Frobenius target, then a shifted Nystrom step turns the
basis into eigenpairs. The achieved residual is always measured and the basis
keeps growing if the measurement misses the target, so the returned factor
meets ||Sigma - U diag(lam) U'||_F <= delta.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.linalg
from scipy.stats import chi2

from .errors import DomainError

logger = logging.getLogger(__name__)

BLOCK = 8
OVERSAMPLE = 10
PROBES = 10
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LowRankFactor:
    """
    Sigma ~ U diag(lam) U'.

    Args:
        U: n x r orthonormal columns.
        lam: r eigenvalues, descending, nonnegative.
        delta: Frobenius target the factor was built for.
        d_prob: Failure-probability exponent of the probe certificate.
        residual: Measured ||Sigma - U diag(lam) U'||_F.
        full_rank: True when no compression was possible (r == n).
    """

    U: np.ndarray
    lam: np.ndarray
    delta: float
    d_prob: int = 3
    residual: float = 0.0
    full_rank: bool = False

    @property
    def rank(self) -> int:
        return int(self.lam.size)

    @property
    def n(self) -> int:
        return int(self.U.shape[0])

    @property
    def lam_max(self) -> float:
        return float(self.lam[0]) if self.lam.size else 0.0

    @classmethod
    def from_dense(cls, sigma: np.ndarray, delta: float = 0.0, rank=None) -> "LowRankFactor":
        """Exact eigendecomposition, truncated to rank or to the smallest rank meeting delta."""
        values, vectors = scipy.linalg.eigh(0.5 * (sigma + sigma.T))
        values = np.clip(values[::-1], 0.0, None)
        vectors = vectors[:, ::-1]
        n = values.size
        if rank is None:
            # tail[r] = ||lam[r:]||_2
            tail = np.sqrt(np.cumsum((values ** 2)[::-1])[::-1])
            tail = np.append(tail, 0.0)
            rank = int(np.argmax(tail <= delta)) if delta > 0.0 else n
        rank = int(rank)
        U = np.ascontiguousarray(vectors[:, :rank])
        lam = values[:rank]
        residual = _residual(sigma, U, lam)
        return cls(U, lam, float(delta), 0, residual, rank == n)


def _residual(sigma: np.ndarray, U: np.ndarray, lam: np.ndarray) -> float:
    return float(np.linalg.norm(sigma - (U * lam) @ U.T, "fro"))


def _extend_basis(Q: np.ndarray, Y: np.ndarray, abs_tol: float) -> np.ndarray:
    """Append the numerically new directions of Y to the orthonormal basis Q."""
    for _ in range(2):
        Y = Y - Q @ (Q.T @ Y)
    q, r, _ = scipy.linalg.qr(Y, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    keep = int(np.sum(diag > max(abs_tol, RANK_TOL * (diag[0] if diag.size else 0.0))))
    return np.hstack([Q, q[:, :keep]])


def _nystrom(sigma: np.ndarray, Q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the Nystrom approximation on range(Q), descending."""
    n = sigma.shape[0]
    E = sigma @ Q
    shift = 1e-7 * math.sqrt(n) * float(np.linalg.norm(E, axis=0).max(initial=0.0))
    E = E + shift * Q
    R = Q.T @ E
    R = 0.5 * (R + R.T)
    L = scipy.linalg.cholesky(R, lower=True)
    F = scipy.linalg.solve_triangular(L, E.T, lower=True)
    _, s, Vt = scipy.linalg.svd(F, full_matrices=False)
    lam = s * s - shift
    U = Vt.T
    order = np.argsort(-lam, kind="stable")
    return U[:, order], lam[order]


def _dense_factor(sigma: np.ndarray, delta: float, d_prob: int) -> LowRankFactor:
    factor = LowRankFactor.from_dense(sigma, delta)
    return LowRankFactor(factor.U, factor.lam, float(delta), d_prob, factor.residual, factor.full_rank)


def probe_constant(n_probe: int, d_prob: int) -> float:
    """c with P(||B||_F^2 > c * mean_i ||B w_i||^2) <= 10^-d for Gaussian probes w_i."""
    return n_probe / float(chi2.ppf(10.0 ** (-d_prob), n_probe))


def randomized_partial_eig(rng: np.random.Generator, sigma, delta: float, d_prob: int = 3,
                           block: int = BLOCK, oversample: int = OVERSAMPLE,
                           n_probe: int = PROBES) -> LowRankFactor:
    """
    Low-rank eigendecomposition meeting a Frobenius error target.

    Args:
        rng: Generator for test and probe matrices.
        sigma: Symmetric PSD n x n matrix.
        delta: Frobenius error target, > 0.
        d_prob: The probe certificate holds with probability 1 - 10^-d_prob.
        block: Columns added per growth step.
        oversample: Extra columns used in the Nystrom step and then dropped.
        n_probe: Gaussian probe vectors for the residual estimate.

    Returns:
        LowRankFactor: eigenpairs with the measured residual. When the basis
        would exceed n/1.25 columns the matrix is decomposed densely instead,
        and full_rank is set if no truncation meets delta.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {sigma.shape}")
    if not delta > 0.0:
        raise DomainError(f"delta must be positive, got {delta}")
    n = sigma.shape[0]
    scale = float(np.linalg.norm(sigma, "fro"))
    if np.abs(sigma - sigma.T).max(initial=0.0) > 1e-10 * max(scale, 1.0):
        raise DomainError("matrix is not symmetric")
    if scale <= delta:
        return LowRankFactor(np.zeros((n, 0)), np.zeros(0), float(delta), d_prob, scale, False)

    abs_tol = 1e-14 * scale * math.sqrt(n)
    target = (0.5 * delta) ** 2 / probe_constant(n_probe, d_prob)
    probes = sigma @ rng.standard_normal((n, n_probe))
    Q = np.zeros((n, 0))

    while True:
        resid = probes - Q @ (Q.T @ probes)
        estimate = float(np.mean(np.sum(resid ** 2, axis=0)))
        if Q.shape[1] > 0 and estimate <= target:
            rank = Q.shape[1]
            extended = _extend_basis(Q, sigma @ rng.standard_normal((n, oversample)), abs_tol)
            U, lam = _nystrom(sigma, extended)
            U, lam = U[:, :rank], np.clip(lam[:rank], 0.0, None)
            residual = _residual(sigma, U, lam)
            if residual <= delta:
                logger.debug("randomized eig: rank %d, residual %.3g (target %.3g)", rank, residual, delta)
                return LowRankFactor(U, lam, float(delta), d_prob, residual, False)
            logger.debug("certified basis of rank %d missed target (%.3g > %.3g); growing", rank, residual, delta)
        if Q.shape[1] + block + oversample >= n / 1.25:
            logger.info("randomized eig: basis near n=%d, using the dense eigendecomposition", n)
            return _dense_factor(sigma, delta, d_prob)
        grown = _extend_basis(Q, sigma @ rng.standard_normal((n, block)), abs_tol)
        if grown.shape[1] == Q.shape[1]:
            if math.isinf(target):
                logger.info("randomized eig: range exhausted above target %.3g, going dense", delta)
                return _dense_factor(sigma, delta, d_prob)
            # range exhausted: the certificate failed only through probe noise
            target = math.inf
        Q = grown


def eig_accuracy_metrics(sigma, factor: LowRankFactor, rng: np.random.Generator) -> Tuple[float, float, float]:
    """
    Compare a factor with the exact top eigenpairs of sigma.

    R: Euclidean distance between the top-r exact and approximate eigenvalues.
    F: ||I - U_eps' U*||_F / sqrt(n), after aligning eigenvector signs.
    C: correlation between y = U* beta (beta standard normal) and its least
       squares fit on U_eps.
    """
    exact = LowRankFactor.from_dense(np.asarray(sigma, dtype=float), rank=factor.rank)
    n = exact.n
    R = float(np.sqrt(np.sum((exact.lam - factor.lam) ** 2)))
    G = factor.U.T @ exact.U
    signs = np.sign(np.diag(G))
    signs[signs == 0.0] = 1.0
    F = float(np.linalg.norm(np.eye(factor.rank) - signs[:, None] * G, "fro") / math.sqrt(n))
    y = exact.U @ rng.standard_normal(factor.rank)
    coef, *_ = np.linalg.lstsq(factor.U, y, rcond=None)
    fitted = factor.U @ coef
    C = float(np.corrcoef(y, fitted)[0, 1])
    return R, F, C
