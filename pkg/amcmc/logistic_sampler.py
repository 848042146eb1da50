"""
Polya-Gamma Gibbs sampling for Bayesian logistic regression.

Exact sweep:   omega_i ~ PG(1, x_i beta), beta ~ N(S_N (X'kappa + B^-1 b), S_N),
               S_N = (X' Omega X + B^-1)^-1.
Subset sweep:  omega_i only for i in a uniform subset V, and
               S_V = ((N/|V|) X_V' Omega_V X_V + B^-1)^-1 with the full X'kappa in the mean.

Both sweeps share _beta_conditional, so a subset of size N taken in index
order reproduces the exact chain draw for draw.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg

from .diagnostics import Trace
from .distributions import sample_polya_gamma
from .errors import DataError, DomainError, FactorizationError
from .tables import numeric_columns, read_csv_frame

logger = logging.getLogger(__name__)

AUDIT_EVERY = 10
AUDIT_MAX_N = 200_000


@dataclass(frozen=True, eq=False)
class LogisticData:
    """Design matrix X (N x p) and binary responses y."""

    X: np.ndarray
    y: np.ndarray
    x_kappa: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DomainError(f"X of shape {X.shape} does not match {y.shape[0]} responses")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DomainError("responses must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_kappa", X.T @ (y - 0.5))

    @property
    def kappa(self) -> np.ndarray:
        return self.y - 0.5

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """beta ~ N(b, B)."""

    b: np.ndarray
    B: np.ndarray
    B_inv: np.ndarray = field(init=False, repr=False)
    B_inv_b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).reshape(-1)
        B = np.asarray(self.B, dtype=float)
        if B.shape != (b.size, b.size):
            raise DomainError(f"prior covariance shape {B.shape} does not match mean length {b.size}")
        try:
            factor = scipy.linalg.cho_factor(B, lower=True)
        except np.linalg.LinAlgError as exc:
            raise DomainError("prior covariance must be symmetric positive definite") from exc
        B_inv = scipy.linalg.cho_solve(factor, np.eye(b.size))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "B_inv", 0.5 * (B_inv + B_inv.T))
        object.__setattr__(self, "B_inv_b", B_inv @ b)

    @classmethod
    def isotropic(cls, p: int, variance: float = 100.0) -> "GaussianPrior":
        return cls(np.zeros(p), variance * np.eye(p))


@dataclass(frozen=True, eq=False)
class PGState:
    beta: np.ndarray
    omega: np.ndarray
    subset: np.ndarray
    spectrum: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class SubsetPolicy:
    """
    How large a subset to draw each step.

    In adaptive mode the size comes from adaptive_subset_size using the
    spectrum of the previous step's subset curvature, starting from size.
    """

    mode: str = "fixed"
    size: int = 1000
    epsilon: float = 0.1
    C: float = 1.0
    M: float = 2.0

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise DomainError(f"subset mode must be 'fixed' or 'adaptive', got {self.mode!r}")
        if self.size < 1:
            raise DomainError(f"subset size must be positive, got {self.size}")


def standardize(X) -> np.ndarray:
    """Center and scale each column to unit variance; constant columns are only centered."""
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 0.0, sd, 1.0)


def simulate_logistic(rng: np.random.Generator, N: int, p: int, beta) -> LogisticData:
    """Standard normal design, standardized, with Bernoulli(logit^-1(X beta)) responses."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (p,):
        raise DomainError(f"beta must have length {p}")
    X = standardize(rng.standard_normal((N, p)))
    prob = 1.0 / (1.0 + np.exp(-X @ beta))
    y = (rng.random(N) < prob).astype(float)
    return LogisticData(X, y)


def _precision_factor(precision: np.ndarray, state: PGState):
    try:
        return scipy.linalg.cho_factor(0.5 * (precision + precision.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            "beta precision matrix is not positive definite",
            {"beta": state.beta.tolist(), "subset_size": int(state.subset.size)},
        ) from exc


def _curvature(X_V: np.ndarray, omega_V: np.ndarray, scale: float) -> np.ndarray:
    return scale * (X_V.T * omega_V) @ X_V


def _beta_conditional(data: LogisticData, prior: GaussianPrior, X_V: np.ndarray,
                      omega_V: np.ndarray, scale: float, state: PGState):
    """Cholesky factor of S^-1 and the conditional mean of beta."""
    precision = _curvature(X_V, omega_V, scale) + prior.B_inv
    factor = _precision_factor(precision, state)
    mean = scipy.linalg.cho_solve(factor, data.x_kappa + prior.B_inv_b)
    return factor, mean


def _draw_beta(rng: np.random.Generator, factor, mean: np.ndarray) -> np.ndarray:
    lower, _ = factor
    z = rng.standard_normal(mean.size)
    # S = (L L')^-1, so L'^-1 z has covariance S
    return mean + scipy.linalg.solve_triangular(lower, z, lower=True, trans="T")


def _pg_sweep(rng: np.random.Generator, state: PGState, data: LogisticData,
              prior: GaussianPrior, subset: np.ndarray) -> PGState:
    X_V = data.X[subset]
    omega = sample_polya_gamma(rng, X_V @ state.beta)
    scale = data.n / subset.size
    working = replace(state, omega=omega, subset=subset)
    factor, mean = _beta_conditional(data, prior, X_V, omega, scale, working)
    beta = _draw_beta(rng, factor, mean)
    return replace(working, beta=beta)


def initial_pg_state(data: LogisticData, beta0=None) -> PGState:
    beta = np.zeros(data.p) if beta0 is None else np.asarray(beta0, dtype=float)
    return PGState(beta, np.full(data.n, 0.25), np.arange(data.n))


def gibbs_step_exact(rng: np.random.Generator, state: PGState, data: LogisticData,
                     prior: GaussianPrior) -> PGState:
    """Draw every omega_i, then beta from its Gaussian full conditional."""
    return _pg_sweep(rng, state, data, prior, np.arange(data.n))


def subset_spectrum(X_V: np.ndarray, omega_V: np.ndarray) -> Tuple[float, float]:
    """(lambda_min, lambda_max) of (1/|V|) X_V' Omega_V X_V."""
    sigma = _curvature(X_V, omega_V, 1.0 / X_V.shape[0])
    values = scipy.linalg.eigvalsh(0.5 * (sigma + sigma.T))
    return float(values[0]), float(values[-1])


def adaptive_subset_size(lam_min: float, lam_max: float, p: int, epsilon: float, N: int,
                         C: float = 1.0, M: float = 2.0) -> int:
    """
    Subset size needed for a kernel error of epsilon given the curvature spectrum.

    delta is the smallest of
        2 sqrt(2) eps p^-1/2 (lmin/2)^2 / (lmax + lmin/2)^{3/2},
        eps^2 (lmin/2) / (p (lmax + lmin/2)),
        eps p^-1/2 lmin / (lmin + lmax),
    and the size is p C M^4 delta^-2 log^2(2 M^2 delta^-2), clamped to [p+1, N].
    """
    if not lam_min > 0.0:
        raise DomainError(f"curvature spectrum is degenerate: lambda_min = {lam_min}")
    if lam_max < lam_min:
        raise DomainError("lambda_max must be at least lambda_min")
    if not epsilon > 0.0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    half = lam_min / 2.0
    root_p = math.sqrt(p)
    delta = min(
        2.0 * math.sqrt(2.0) * epsilon / root_p * half ** 2 / (lam_max + half) ** 1.5,
        epsilon ** 2 * half / (p * (lam_max + half)),
        epsilon / root_p * lam_min / (lam_min + lam_max),
    )
    size = p * C * M ** 4 / delta ** 2 * math.log(2.0 * M ** 2 / delta ** 2) ** 2
    return int(min(max(math.ceil(size), p + 1), N))


def _policy_size(policy: SubsetPolicy, state: PGState, data: LogisticData) -> int:
    if policy.mode == "adaptive" and state.spectrum is not None:
        return adaptive_subset_size(state.spectrum[0], state.spectrum[1], data.p,
                                    policy.epsilon, data.n, policy.C, policy.M)
    return min(policy.size, data.n)


def gibbs_step_subset(rng: np.random.Generator, state: PGState, data: LogisticData,
                      prior: GaussianPrior, policy: SubsetPolicy) -> PGState:
    """
    Subsampled-curvature sweep.

    A fresh subset is drawn without replacement every step. A subset of size N
    is taken as 0..N-1 without consuming randomness, which reproduces the exact
    sweep.
    """
    size = _policy_size(policy, state, data)
    if size < data.p + 1:
        raise DomainError(f"subset size {size} is below p + 1 = {data.p + 1}")
    if size > data.n:
        raise DomainError(f"subset size {size} exceeds N = {data.n}")
    if size == data.n:
        subset = np.arange(data.n)
    else:
        subset = np.sort(rng.choice(data.n, size=size, replace=False))
    nxt = _pg_sweep(rng, state, data, prior, subset)
    if policy.mode == "adaptive":
        nxt = replace(nxt, spectrum=subset_spectrum(data.X[subset], nxt.omega))
    return nxt


def gaussian_kl(m1, S1, m2, S2) -> float:
    """KL(N(m1, S1) || N(m2, S2))."""
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    m2 = np.atleast_1d(np.asarray(m2, dtype=float))
    S1 = np.atleast_2d(np.asarray(S1, dtype=float))
    S2 = np.atleast_2d(np.asarray(S2, dtype=float))
    if S1.shape != S2.shape or S1.shape != (m1.size, m1.size) or m2.size != m1.size:
        raise DomainError("Gaussian KL needs matching dimensions")
    if np.array_equal(m1, m2) and np.array_equal(S1, S2):
        return 0.0
    try:
        f1 = scipy.linalg.cho_factor(S1, lower=True)
        f2 = scipy.linalg.cho_factor(S2, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DomainError("Gaussian KL needs positive definite covariances") from exc
    k = m1.size
    diff = m2 - m1
    trace_term = float(np.trace(scipy.linalg.cho_solve(f2, S1)))
    quad = float(diff @ scipy.linalg.cho_solve(f2, diff))
    logdet1 = 2.0 * float(np.sum(np.log(np.diag(f1[0]))))
    logdet2 = 2.0 * float(np.sum(np.log(np.diag(f2[0]))))
    return max(0.0, 0.5 * (trace_term + quad - k + logdet2 - logdet1))


def pinsker_tv(kl: float) -> float:
    """TV upper bound sqrt(KL/2), capped at 1."""
    if kl < 0.0:
        raise DomainError(f"KL divergence must be nonnegative, got {kl}")
    return min(1.0, math.sqrt(kl / 2.0))


def audit_step(rng: np.random.Generator, state: PGState, data: LogisticData,
               prior: GaussianPrior) -> float:
    """
    Pinsker TV bound between the subset and full beta conditionals at this step.

    The full conditional needs omega for every observation; those outside the
    subset are drawn from rng at the current beta, leaving the chain's own
    stream untouched.
    """
    if state.subset.size == data.n:
        return 0.0
    omega_full = sample_polya_gamma(rng, data.X @ state.beta)
    omega_full[state.subset] = state.omega
    f_sub, m_sub = _beta_conditional(data, prior, data.X[state.subset], state.omega,
                                     data.n / state.subset.size, state)
    f_full, m_full = _beta_conditional(data, prior, data.X, omega_full, 1.0, state)
    eye = np.eye(data.p)
    S_sub = scipy.linalg.cho_solve(f_sub, eye)
    S_full = scipy.linalg.cho_solve(f_full, eye)
    kl = gaussian_kl(m_sub, 0.5 * (S_sub + S_sub.T), m_full, 0.5 * (S_full + S_full.T))
    return pinsker_tv(kl)


@dataclass(frozen=True, eq=False)
class LogisticRun:
    trace: Trace
    subset_sizes: np.ndarray
    epsilon_trace: np.ndarray
    audit_disabled: bool = False
    audited_steps: List[int] = field(default_factory=list)


def run_logistic_chain(rng: np.random.Generator, data: LogisticData, prior: GaussianPrior,
                       policy: Optional[SubsetPolicy], n_iter: int, burn_in: int = 0,
                       audit_every: Optional[int] = None, audit_rng: Optional[np.random.Generator] = None,
                       seed: Optional[int] = None) -> LogisticRun:
    """
    Run the exact chain (policy None) or a subset chain and keep post-burn-in beta draws.

    Args:
        rng: Chain generator.
        data: Logistic data.
        prior: Gaussian prior on beta.
        policy: Subset policy; None runs gibbs_step_exact.
        n_iter: Recorded steps.
        burn_in: Discarded steps.
        audit_every: Audit the beta-update error every this many recorded steps.
        audit_rng: Generator for the audit's extra omega draws.

    Returns:
        LogisticRun: beta trace, subset size per step and the audit series.
    """
    audit_disabled = False
    if audit_every is not None and data.n > AUDIT_MAX_N:
        logger.warning("N=%d exceeds %d; epsilon audit disabled", data.n, AUDIT_MAX_N)
        audit_disabled = True
    if audit_every is not None and audit_every < 1:
        raise DomainError(f"audit_every must be a positive step count, got {audit_every}")
    if audit_every is not None and audit_rng is None:
        raise DomainError("an audit needs its own generator")

    def _step(current: PGState) -> PGState:
        if policy is None:
            return gibbs_step_exact(rng, current, data, prior)
        return gibbs_step_subset(rng, current, data, prior, policy)

    state = initial_pg_state(data)
    if policy is not None and policy.mode == "adaptive":
        state = replace(state, spectrum=None)
    for _ in range(burn_in):
        state = _step(state)

    draws = np.empty((n_iter, data.p))
    seconds = np.empty(n_iter)
    sizes = np.empty(n_iter, dtype=np.int64)
    epsilons: List[float] = []
    audited: List[int] = []
    for i in range(n_iter):
        tic = time.perf_counter()
        state = _step(state)
        seconds[i] = time.perf_counter() - tic
        draws[i] = state.beta
        sizes[i] = state.subset.size
        if audit_every is not None and not audit_disabled and i % audit_every == 0:
            epsilons.append(audit_step(audit_rng, state, data, prior))  # type: ignore[arg-type]
            audited.append(i)
    names = [f"beta{j}" for j in range(data.p)]
    trace = Trace(draws, seed=seed, step_seconds=seconds, names=names)
    return LogisticRun(trace, sizes, np.asarray(epsilons), audit_disabled, audited)


def empirical_epsilon_trace(run: LogisticRun) -> pd.Series:
    """
    Pinsker TV bounds of a finished run, indexed by the recorded step they audit.

    Raises:
        DomainError: The audit was switched off for a large N.
    """
    if run.audit_disabled:
        raise DomainError("epsilon audit was disabled for this run")
    if len(run.audited_steps) != run.epsilon_trace.shape[0]:
        raise DomainError(f"{len(run.audited_steps)} audited steps for {run.epsilon_trace.shape[0]} bounds")
    index = pd.Index(run.audited_steps, name="step", dtype=np.int64)
    return pd.Series(run.epsilon_trace, index=index, name="tv_bound", dtype=float)


def read_logistic_csv(path: Union[str, Path], standardize_columns: bool = True) -> LogisticData:
    """CSV with a header row, features first and y in the last column."""
    values = numeric_columns(read_csv_frame(path), None, path)
    if values.shape[1] < 2:
        raise DataError(f"{path}: needs at least one feature column and a response column")
    X, y = values[:, :-1], values[:, -1]
    return LogisticData(standardize(X) if standardize_columns else X, y)
