"""
Closed-form error bounds for ergodic averages of exact and approximate chains.

All bounds are raw real values. Nothing here clamps to [0, 1]; use
clamp_for_report() when presenting TV values to a reader.

The exact TV bound is (1 - (1-alpha)^t) * tv0 / (alpha t), with tv0 outside the
power term. This is the form the derivation supports and the one attained by
the symmetric two-state chain (see finite_chain).
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import pandas as pd

from .errors import DomainError

logger = logging.getLogger(__name__)

SERIES_CUTOFF = 0.05


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0) or math.isnan(alpha):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def _check_t(t: int) -> int:
    if int(t) != t or t < 1:
        raise DomainError(f"path length t must be a positive integer, got {t}")
    return int(t)


def _check_tv(tv0: float) -> float:
    tv0 = float(tv0)
    if not (0.0 <= tv0 <= 1.0):
        raise DomainError(f"initial TV distance must lie in [0, 1], got {tv0}")
    return tv0


def _check_fstar(fstar: float) -> float:
    fstar = float(fstar)
    if not fstar >= 0.0:
        raise DomainError(f"function seminorm must be nonnegative, got {fstar}")
    return fstar


@dataclass(frozen=True)
class ErgodicityParams:
    """Doeblin constant of the exact kernel and its approximation error.

    Args:
        alpha: Doeblin constant, 0 < alpha < 1.
        epsilon: Uniform TV distance between the exact and approximating
            kernels, 0 <= epsilon < alpha / 2.
    """

    alpha: float
    epsilon: float = 0.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not (0.0 <= self.epsilon < self.alpha / 2.0):
            raise DomainError(
                f"epsilon must lie in [0, alpha/2) = [0, {self.alpha / 2.0}), got {self.epsilon}"
            )

    @property
    def alpha_eps(self) -> float:
        """Doeblin constant guaranteed for the approximating kernel."""
        return self.alpha - 2.0 * self.epsilon


@dataclass(frozen=True)
class BoundInputs:
    """Path length, initial distance to stationarity and function scale."""

    t: int
    tv0: float = 1.0
    fstar: float = 1.0

    def __post_init__(self):
        _check_t(self.t)
        _check_tv(self.tv0)
        _check_fstar(self.fstar)


def _contraction(alpha: float, t: float) -> float:
    """(1 - alpha)^t evaluated through log1p."""
    return math.exp(t * math.log1p(-alpha))


def _cesaro_term(alpha: float, t: int, tv0: float) -> float:
    # (1 - (1-alpha)^t) * tv0 / (alpha t)
    return -math.expm1(t * math.log1p(-alpha)) * tv0 / (alpha * t)


def _log1p_gap(alpha: float) -> float:
    """alpha + log(1 - alpha), by its series when alpha is small."""
    if alpha >= SERIES_CUTOFF:
        return alpha + math.log1p(-alpha)
    total, power = 0.0, alpha
    for k in range(2, 60):
        power *= alpha
        total -= power / k
        if power < 1e-17 * -total:
            break
    return total


def _expm1_gap(y: float) -> float:
    """y - 1 + exp(-y), by its series when y is small."""
    if y >= SERIES_CUTOFF:
        return y + math.expm1(-y)
    total, term = 0.0, -y
    for k in range(2, 30):
        term *= -y / k
        total += term
        if abs(term) < 1e-17 * total:
            break
    return total


def variance_factor(t: int, alpha: float) -> float:
    """
    Normalized double sum (1/t^2) sum_{j,k<t} (1-alpha)^|j-k| in closed form.

    Args:
        t: Path length, t >= 1.
        alpha: Doeblin constant in (0, 1).

    Returns:
        float: 2/(a t) + 2/(a t^2) + 2(1-a)^(t+1)/(a t)^2 - 1/t - 2/(a t)^2.
    """
    t = _check_t(t)
    alpha = _check_alpha(alpha)
    # rearranged as 1/t + 2(1-a)(t a - 1 + (1-a)^t)/(a t)^2; with L = -log(1-a) the
    # bracket is t(a - L) + (tL - 1 + e^-tL), both parts free of cancellation
    L = -math.log1p(-alpha)
    bracket = t * _log1p_gap(alpha) + _expm1_gap(t * L)
    return 1.0 / t + 2.0 * (1.0 - alpha) * bracket / (alpha * alpha * t * t)


def _tv_bound(alpha: float, t: int, tv0: float, epsilon: float) -> float:
    """Shared path for the exact (epsilon=0) and approximate TV bounds."""
    alpha_eps = alpha - 2.0 * epsilon
    return epsilon / alpha + _cesaro_term(alpha_eps, t, tv0)


def _l2_bound(alpha: float, t: int, tv0: float, fstar: float, epsilon: float) -> float:
    """Shared path for the exact (epsilon=0) and approximate L2 bounds."""
    alpha_eps = alpha - 2.0 * epsilon
    f2 = fstar * fstar
    one_minus_decay = -math.expm1(t * math.log1p(-alpha_eps))
    return (
        4.0 * f2 * _cesaro_term(alpha_eps, t, tv0)
        + f2 * variance_factor(t, alpha_eps)
        + 8.0 * f2 * epsilon * one_minus_decay / (t * alpha * alpha_eps)
        + 4.0 * epsilon * epsilon * f2 / (alpha * alpha)
    )


def tv_bound_exact(alpha: float, inputs: BoundInputs) -> float:
    """TV distance between the stationary law and the Cesaro average of the exact chain."""
    alpha = _check_alpha(alpha)
    return _tv_bound(alpha, inputs.t, inputs.tv0, 0.0)


def tv_bound_approx(params: ErgodicityParams, t: int, tv0_eps: float) -> float:
    """
    TV bound for the approximating chain measured against the exact target.

    Args:
        params: Doeblin constant and approximation error.
        t: Path length.
        tv0_eps: TV distance between the approximate stationary law and the
            initial law.

    Returns:
        float: epsilon/alpha + (1 - (1-alpha_eps)^t) tv0_eps / (t alpha_eps).
    """
    t = _check_t(t)
    tv0_eps = _check_tv(tv0_eps)
    return _tv_bound(params.alpha, t, tv0_eps, params.epsilon)


def l2_bound_exact(alpha: float, inputs: BoundInputs) -> float:
    """Mean squared error bound for an exact-chain ergodic average."""
    alpha = _check_alpha(alpha)
    return _l2_bound(alpha, inputs.t, inputs.tv0, inputs.fstar, 0.0)


def l2_bound_approx(params: ErgodicityParams, t: int, tv0_eps: float, fstar: float = 1.0) -> float:
    """
    Mean squared error bound for an approximate-chain ergodic average.

    The four terms are the burn-in term, the variance term at alpha_eps, the
    cross term and the squared stationary bias 4 eps^2 ||f||^2 / alpha^2.
    """
    t = _check_t(t)
    tv0_eps = _check_tv(tv0_eps)
    fstar = _check_fstar(fstar)
    return _l2_bound(params.alpha, t, tv0_eps, fstar, params.epsilon)


def stationary_bias_bound(params: ErgodicityParams) -> float:
    """Upper bound epsilon/alpha on TV between exact and approximate stationary laws."""
    return params.epsilon / params.alpha


def covariance_bound(alpha: float, lag: int, fstar: float, gstar: float) -> float:
    """Bound (1-alpha)^|lag| ||f||_* ||g||_* on stationary lagged covariances."""
    alpha = _check_alpha(alpha)
    return _contraction(alpha, abs(int(lag))) * _check_fstar(fstar) * _check_fstar(gstar)


def mixing_time_bound(alpha: float, delta: float) -> float:
    """
    Worst-case number of steps for the TV distance to fall below delta.

    Args:
        alpha: Doeblin constant in (0, 1).
        delta: Target TV distance in (0, 1).

    Returns:
        float: log(delta) / log(1 - alpha), not rounded.
    """
    alpha = _check_alpha(alpha)
    delta = float(delta)
    if not (0.0 < delta < 1.0):
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    return math.log(delta) / math.log1p(-alpha)


def mixing_time_table(alphas: Iterable[float], deltas: Iterable[float]) -> pd.DataFrame:
    """One row per (alpha, delta) with the real-valued and rounded-up mixing time."""
    rows = []
    for alpha in alphas:
        for delta in deltas:
            steps = mixing_time_bound(alpha, delta)
            rows.append({"alpha": float(alpha), "delta": float(delta),
                         "mixing_time": steps, "steps": int(math.ceil(steps))})
    return pd.DataFrame(rows, columns=["alpha", "delta", "mixing_time", "steps"])


def bounds_table(alpha: float, epsilon: float, ts: Iterable[int], tv0: float = 1.0,
                 fstar: float = 1.0) -> pd.DataFrame:
    """Tabulate every bound over a set of path lengths for one (alpha, epsilon)."""
    params = ErgodicityParams(alpha, epsilon)
    rows = []
    for t in ts:
        inputs = BoundInputs(int(t), tv0, fstar)
        rows.append({
            "alpha": params.alpha,
            "epsilon": params.epsilon,
            "t": inputs.t,
            "tv_exact": tv_bound_exact(params.alpha, inputs),
            "tv_approx": tv_bound_approx(params, inputs.t, tv0),
            "l2_exact": l2_bound_exact(params.alpha, inputs),
            "l2_approx": l2_bound_approx(params, inputs.t, tv0, fstar),
            "variance_factor": variance_factor(inputs.t, params.alpha),
        })
    logger.debug("tabulated %d bound rows for alpha=%g epsilon=%g", len(rows), alpha, epsilon)
    return pd.DataFrame(rows)


def clamp_for_report(value: float) -> float:
    """Clip a TV bound into [0, 1] for display."""
    return float(np.clip(value, 0.0, 1.0))
