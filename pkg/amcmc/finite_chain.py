"""
Exact computations on small finite-state Markov kernels.

These are the brute-force ground truth for the closed-form bounds: the
symmetric two-state chain attains the TV bound with equality, and its
perturbations attain the stationary gap and the approximate Cesaro term.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from .distributions import SeededRng
from .ergodic_bounds import (BoundInputs, ErgodicityParams, covariance_bound, l2_bound_exact,
                             stationary_bias_bound, tv_bound_approx, tv_bound_exact, variance_factor)
from .errors import DomainError, NonUniqueStationaryError, SizeError

logger = logging.getLogger(__name__)

MAX_STATES = 16
MAX_DP_STEPS = 64
ROW_TOL = 1e-12
UNIT_EIGEN_TOL = 1e-10
POWER_TOL = 1e-14
POWER_MAX_ITER = 1_000_000
# reaches the slow-mixing regime where the unrearranged closed form cancels
VARIANCE_ALPHAS = (0.9, 0.5, 0.1, 1e-2, 1e-4)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteKernel:
    """Row-stochastic K x K transition matrix, K <= 16."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise DomainError(f"kernel must be a nonempty square matrix, got shape {m.shape}")
        if m.shape[0] > MAX_STATES:
            raise SizeError(f"kernel has {m.shape[0]} states, cap is {MAX_STATES}")
        if np.any(m < 0.0) or np.any(m > 1.0):
            raise DomainError("kernel entries must lie in [0, 1]")
        if np.max(np.abs(m.sum(axis=1) - 1.0)) > ROW_TOL:
            raise DomainError("kernel rows must sum to 1")
        object.__setattr__(self, "matrix", m)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class FiniteMeasure:
    """Probability vector over the states of a FiniteKernel."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1 or w.size == 0:
            raise DomainError("measure weights must be a nonempty vector")
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > ROW_TOL:
            raise DomainError("measure weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)


def symmetric_two_state(a: float) -> FiniteKernel:
    """Two-state chain switching with probability a; Doeblin constant 2a."""
    if not (0.0 < a <= 0.5):
        raise DomainError(f"switch probability must lie in (0, 1/2], got {a}")
    return FiniteKernel(np.array([[1.0 - a, a], [a, 1.0 - a]]))


def perturbed_two_state(a: float, eps: float) -> FiniteKernel:
    """Asymmetric perturbation with stationary law ((a+eps)/2a, (a-eps)/2a)."""
    if not (0.0 <= eps < a):
        raise DomainError(f"eps must lie in [0, a), got {eps}")
    return FiniteKernel(np.array([[1.0 - (a - eps), a - eps], [a + eps, 1.0 - (a + eps)]]))


def shifted_two_state(a: float, eps: float) -> FiniteKernel:
    """Both switch probabilities lowered to a - eps; Doeblin constant 2a - 2eps."""
    if not (0.0 <= eps < a):
        raise DomainError(f"eps must lie in [0, a), got {eps}")
    return symmetric_two_state(a - eps)


def load_kernel(path: Union[str, Path]) -> FiniteKernel:
    """Read a kernel from rows of whitespace-separated reals."""
    return FiniteKernel(np.loadtxt(path, ndmin=2))


def tv_distance(mu, nu) -> float:
    """Total variation distance between two probability vectors."""
    mu = np.asarray(getattr(mu, "weights", mu), dtype=float)
    nu = np.asarray(getattr(nu, "weights", nu), dtype=float)
    return 0.5 * float(np.abs(mu - nu).sum())


def doeblin_alpha(P: FiniteKernel) -> float:
    """1 minus the largest TV distance between two rows of P."""
    m = P.matrix
    pairwise = 0.5 * np.abs(m[:, None, :] - m[None, :, :]).sum(axis=2)
    return 1.0 - float(pairwise.max())


def kernel_tv_sup(P: FiniteKernel, Q: FiniteKernel) -> float:
    """Largest row-wise TV distance between two kernels on the same states."""
    if P.size != Q.size:
        raise DomainError(f"kernels have {P.size} and {Q.size} states")
    return 0.5 * float(np.abs(P.matrix - Q.matrix).sum(axis=1).max())


def _power_iteration(m: np.ndarray) -> np.ndarray:
    pi = np.full(m.shape[0], 1.0 / m.shape[0])
    for _ in range(POWER_MAX_ITER):
        nxt = pi @ m
        if np.abs(nxt - pi).max() < POWER_TOL:
            return nxt
        pi = nxt
    logger.warning("power iteration hit %d iterations without converging", POWER_MAX_ITER)
    return pi


def invariant_measure(P: FiniteKernel) -> FiniteMeasure:
    """
    Stationary law of P.

    Uniqueness is checked on the spectrum of P^T: exactly one eigenvalue may lie
    within 1e-10 of 1. The vector itself solves pi (P - I) = 0 with sum(pi) = 1
    by least squares, falling back to power iteration if that solve is poor.

    Raises:
        NonUniqueStationaryError: If the unit eigenvalue is repeated.
    """
    m = P.matrix
    k = P.size
    eigenvalues = np.linalg.eigvals(m.T)
    unit = int(np.sum(np.abs(eigenvalues - 1.0) < UNIT_EIGEN_TOL))
    if unit != 1:
        raise NonUniqueStationaryError(f"kernel has {unit} unit eigenvalues; stationary law is not unique")

    system = np.vstack([m.T - np.eye(k), np.ones((1, k))])
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    residual = np.abs(pi @ m - pi).max()
    if residual > UNIT_EIGEN_TOL or np.any(pi < -UNIT_EIGEN_TOL):
        logger.info("stationary solve residual %.3g; switching to power iteration", residual)
        pi = _power_iteration(m)
    pi = np.clip(pi, 0.0, None)
    return FiniteMeasure(pi / pi.sum())


def cesaro_series(nu: FiniteMeasure, P: FiniteKernel, t_max: int) -> np.ndarray:
    """TV(Pi, (1/t) sum_{k<t} nu P^k) for every t = 1..t_max, in one pass."""
    if t_max < 1:
        raise DomainError(f"t must be at least 1, got {t_max}")
    pi = invariant_measure(P).weights
    mu = np.array(nu.weights, dtype=float)
    acc = np.zeros_like(mu)
    out = np.empty(int(t_max))
    for t in range(1, int(t_max) + 1):
        acc += mu
        out[t - 1] = tv_distance(pi, acc / t)
        mu = mu @ P.matrix
    return out


def cesaro_tv(nu: FiniteMeasure, P: FiniteKernel, t: int) -> float:
    """Exact TV between the stationary law and the Cesaro average of nu P^k, k < t."""
    return float(cesaro_series(nu, P, t)[-1])


@dataclass(frozen=True)
class AverageLaw:
    """Exact law of an ergodic average: sorted support points and their masses."""

    support: np.ndarray
    probs: np.ndarray

    def mean_squared_error(self, target: float) -> float:
        return float(np.sum(self.probs * (target - self.support) ** 2))


def ergodic_average_law(P: FiniteKernel, f, nu: FiniteMeasure, t: int) -> AverageLaw:
    """
    Exact distribution of (1/t) sum_{k<t} f(theta_k) with theta_0 ~ nu.

    Dynamic program over (current state, counts of each distinct f value).

    Args:
        P: Transition kernel.
        f: One real per state.
        nu: Initial law.
        t: Path length, 1 <= t <= 64.

    Returns:
        AverageLaw: support and probabilities summing to 1.
    """
    if t < 1:
        raise DomainError(f"t must be at least 1, got {t}")
    if t > MAX_DP_STEPS:
        raise SizeError(f"t={t} exceeds the exact dynamic program cap of {MAX_DP_STEPS}")
    f = np.asarray(f, dtype=float)
    if f.shape != (P.size,):
        raise DomainError(f"f must have one value per state ({P.size}), got shape {f.shape}")
    values, value_index = np.unique(f, return_inverse=True)
    m = P.matrix

    def _bump(counts: Tuple[int, ...], state: int) -> Tuple[int, ...]:
        bumped = list(counts)
        bumped[value_index[state]] += 1
        return tuple(bumped)

    zero = tuple([0] * len(values))
    layer: Dict[Tuple[int, Tuple[int, ...]], float] = {}
    for s in range(P.size):
        if nu.weights[s] > 0.0:
            layer[(s, _bump(zero, s))] = float(nu.weights[s])

    for _ in range(t - 1):
        nxt: Dict[Tuple[int, Tuple[int, ...]], float] = {}
        for (s, counts), mass in layer.items():
            for s2 in np.flatnonzero(m[s] > 0.0):
                key = (int(s2), _bump(counts, int(s2)))
                nxt[key] = nxt.get(key, 0.0) + mass * m[s, s2]
        layer = nxt

    by_counts: Dict[Tuple[int, ...], float] = {}
    for (_, counts), mass in layer.items():
        by_counts[counts] = by_counts.get(counts, 0.0) + mass
    averages: Dict[float, float] = {}
    for counts, mass in by_counts.items():
        avg = float(np.dot(counts, values)) / t
        averages[avg] = averages.get(avg, 0.0) + mass
    support = np.array(sorted(averages))
    probs = np.array([averages[x] for x in support])
    return AverageLaw(support, probs)


def exact_autocovariance(P: FiniteKernel, f, nu_stationary: FiniteMeasure, k: int) -> float:
    """Stationary covariance of f(theta_0) and f(theta_k)."""
    if k < 0:
        raise DomainError(f"lag must be nonnegative, got {k}")
    f = np.asarray(f, dtype=float)
    pi = nu_stationary.weights
    mean = float(pi @ f)
    centered = f - mean
    propagated = np.linalg.matrix_power(P.matrix, int(k)) @ centered
    return float(np.sum(pi * centered * propagated))


def seminorm(f) -> float:
    """inf_c ||f - c||_inf, half the range of f."""
    f = np.asarray(f, dtype=float)
    return 0.5 * float(f.max() - f.min())


def l2_sharpness_constant(P: FiniteKernel, f, nu: FiniteMeasure, t: int) -> float:
    """
    Empirical constant C* in E(Pi f - avg)^2 = C* ||f||^2 (1-(1-a)^t) tv0/(a t) + ||f||^2 S(t, a).

    Compares the exact mean squared error with the variance term of the L2
    bound, then expresses what is left as a multiple of the burn-in term.
    """
    alpha = doeblin_alpha(P)
    pi = invariant_measure(P)
    fstar = seminorm(f)
    tv0 = tv_distance(pi, nu)
    if fstar == 0.0 or tv0 == 0.0:
        raise DomainError("sharpness constant needs a nonconstant f and nu != Pi")
    mse = ergodic_average_law(P, f, nu, t).mean_squared_error(float(pi.weights @ np.asarray(f, float)))
    burn_in = fstar ** 2 * -np.expm1(t * np.log1p(-alpha)) * tv0 / (alpha * t)
    return float((mse - fstar ** 2 * variance_factor(t, alpha)) / burn_in)


def simulate_chain(rng: np.random.Generator, P: FiniteKernel, nu: FiniteMeasure, t: int) -> np.ndarray:
    """Sample a state path of length t by inverse-CDF steps."""
    cdf = np.cumsum(P.matrix, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(int(t))
    path = np.empty(int(t), dtype=np.int64)
    init_cdf = np.cumsum(nu.weights)
    init_cdf[-1] = 1.0
    state = int(np.searchsorted(init_cdf, u[0], side="right"))
    path[0] = state
    for i in range(1, int(t)):
        state = int(np.searchsorted(cdf[state], u[i], side="right"))
        path[i] = state
    return path


def _brute_variance_factor(t: int, alpha: float) -> float:
    lags = np.arange(1, t, dtype=float)
    return float((t + 2.0 * np.sum((t - lags) * (1.0 - alpha) ** lags)) / (t * t))


def run_sharpness_suite(t_max: int = 200, seed: int = 0, random_kernels: int = 100) -> pd.DataFrame:
    """
    Check every closed-form bound against the exact two-state witnesses.

    Returns:
        DataFrame: one row per check with columns check, passed, worst, tol.
        worst is the largest deviation (equalities) or the largest excess of
        the exact value over its bound (inequalities).
    """
    rows: List[dict] = []

    def _record(name: str, worst: float, tol: float = 1e-12):
        rows.append({"check": name, "passed": bool(worst <= tol), "worst": float(worst), "tol": tol})

    ts = np.arange(1, t_max + 1)
    worst = 0.0
    for a in (0.05, 0.25, 0.45):
        P = symmetric_two_state(a)
        pi = invariant_measure(P)
        for gamma in (0.0, 0.2):
            nu = FiniteMeasure(np.array([gamma, 1.0 - gamma]))
            series = cesaro_series(nu, P, t_max)
            tv0 = tv_distance(pi, nu)
            bound = np.array([tv_bound_exact(2.0 * a, BoundInputs(int(t), tv0)) for t in ts])
            worst = max(worst, float(np.abs(series - bound).max()))
    _record("tv_bound_exact_attained", worst)

    a = 0.25
    pi = invariant_measure(symmetric_two_state(a))
    start = FiniteMeasure(np.array([0.0, 1.0]))
    gap = shift = 0.0
    alpha_shift = 0.0
    for eps in (0.01, 0.05, 0.1):
        pi_eps = invariant_measure(perturbed_two_state(a, eps))
        gap = max(gap, abs(tv_distance(pi, pi_eps) - eps / (2.0 * a)))
        params = ErgodicityParams(2.0 * a, eps)
        shifted = shifted_two_state(a, eps)
        alpha_shift = max(alpha_shift, abs(doeblin_alpha(shifted) - params.alpha_eps))
        series = cesaro_series(start, shifted, t_max)
        tv0_eps = tv_distance(invariant_measure(shifted), start)
        second = np.array([tv_bound_approx(params, int(t), tv0_eps) - stationary_bias_bound(params) for t in ts])
        shift = max(shift, float(np.abs(series - second).max()))
    _record("stationary_gap_attained", gap)
    _record("shifted_doeblin_constant", alpha_shift)
    _record("shifted_cesaro_term_attained", shift)

    worst = 0.0
    for alpha in VARIANCE_ALPHAS:
        for t in range(1, 501):
            worst = max(worst, abs(variance_factor(t, alpha) - _brute_variance_factor(t, alpha)))
    _record("variance_factor_closed_form", worst)

    P = symmetric_two_state(a)
    f = np.array([-1.0, 1.0])
    excess = -np.inf
    for t in range(1, MAX_DP_STEPS + 1):
        mse = ergodic_average_law(P, f, start, t).mean_squared_error(0.0)
        excess = max(excess, mse - l2_bound_exact(2.0 * a, BoundInputs(t, 0.5, 1.0)))
    _record("l2_bound_dominates_exact_error", max(excess, 0.0))

    worst = 0.0
    for k in range(0, 21):
        worst = max(worst, abs(exact_autocovariance(P, f, pi, k) - covariance_bound(2.0 * a, k, 1.0, 1.0)))
    _record("covariance_bound_attained", worst)

    rng = SeededRng(seed).generator()
    excess = 0.0
    for _ in range(int(random_kernels)):
        size = int(rng.integers(3, 6))
        Q = FiniteKernel(rng.dirichlet(np.ones(size), size=size))
        alpha = doeblin_alpha(Q)
        g = rng.standard_normal(size)
        pi_q = invariant_measure(Q)
        for k in range(0, 11):
            cov = abs(exact_autocovariance(Q, g, pi_q, k))
            excess = max(excess, cov - covariance_bound(alpha, k, seminorm(g), seminorm(g)))
    _record("covariance_bound_random_kernels", excess)

    report = pd.DataFrame(rows, columns=["check", "passed", "worst", "tol"])
    failed = report.loc[~report["passed"], "check"].tolist()
    if failed:
        logger.warning("sharpness checks failed: %s", ", ".join(failed))
    return report
