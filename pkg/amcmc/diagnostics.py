"""
Empirical convergence and approximation diagnostics for a single chain.

  phi_max                 autocorrelation-based lower estimate of the geometric rate
  w1_kernel_distance      RKHS distance between kernel mean embeddings of two samples
  geweke_z                early/late window mean comparison
  effective_sample_size   Geyer initial positive sequence, through arviz
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import arviz as az
import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from scipy.stats import norm

from .errors import ConstantTraceError, DomainError
from .tables import numeric_columns, read_csv_frame

logger = logging.getLogger(__name__)

KERNEL_BLOCK = 1024


@dataclass(frozen=True, eq=False)
class Trace:
    """
    Draws from one chain in order.

    Args:
        samples: t x p matrix, one row per step.
        seed: Seed of the run that produced it.
        step_seconds: Optional wall time per step.
        names: Coordinate names; defaults to x0, x1, ...
    """

    samples: np.ndarray
    seed: Optional[int] = None
    step_seconds: Optional[np.ndarray] = None
    names: List[str] = field(default_factory=list)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2 or samples.shape[0] < 2:
            raise DomainError(f"a trace needs at least two steps, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise DomainError("trace contains non-finite values")
        object.__setattr__(self, "samples", samples)
        names = list(self.names) or [f"x{j}" for j in range(samples.shape[1])]
        if len(names) != samples.shape[1]:
            raise DomainError(f"{len(names)} names for {samples.shape[1]} coordinates")
        object.__setattr__(self, "names", names)
        if self.step_seconds is not None:
            seconds = np.asarray(self.step_seconds, dtype=float)
            if seconds.shape != (samples.shape[0],):
                raise DomainError("step_seconds needs one entry per step")
            object.__setattr__(self, "step_seconds", seconds)

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class PhiMaxReport:
    """Result of phi_max; phi_max is None when no (coordinate, lag) passed."""

    phi_max: Optional[float]
    lag_table: np.ndarray
    threshold: float
    excluded: List[int] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class EssReport:
    ess: np.ndarray
    flagged: np.ndarray


def autocorrelation(x, max_lag: Optional[int] = None) -> np.ndarray:
    """Sample autocorrelations at lags 0..max_lag, normalized by the lag-0 term."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2 or np.ptp(x) == 0.0:
        raise ConstantTraceError("autocorrelation of a constant series is undefined")
    acf = az.autocorr(x)
    return acf if max_lag is None else acf[: int(max_lag) + 1]


def phi_max(trace: Trace, k_max: int) -> PhiMaxReport:
    """
    Largest retained phi_{j,k}^{1/k} over coordinates j and lags k <= k_max.

    A lag-k autocorrelation is retained only if it exceeds
    Phi^{-1}(0.95^{1/k_max}) / sqrt(t - k_max), the per-lag threshold that keeps
    the family-wise level at 0.95 for an uncorrelated chain.

    Args:
        trace: Chain draws.
        k_max: Largest lag, at most t/10.

    Returns:
        PhiMaxReport: estimate (or None), the p x k_max autocorrelation table
        with NaN rows for excluded constant coordinates, and the threshold.
    """
    t = trace.length
    if k_max < 1 or k_max > t / 10:
        raise DomainError(f"k_max must lie in [1, t/10] = [1, {t / 10:g}], got {k_max}")
    threshold = float(norm.ppf(0.95 ** (1.0 / k_max)) / math.sqrt(t - k_max))
    table = np.full((trace.dim, k_max), np.nan)
    excluded = []
    best: Optional[float] = None
    lags = np.arange(1, k_max + 1)
    for j in range(trace.dim):
        try:
            acf = autocorrelation(trace.samples[:, j], k_max)[1:]
        except ConstantTraceError:
            logger.warning("coordinate %s is constant and is excluded from phi_max", trace.names[j])
            excluded.append(j)
            continue
        table[j] = acf
        passed = acf > threshold
        if np.any(passed):
            rates = acf[passed] ** (1.0 / lags[passed])
            candidate = float(rates.max())
            best = candidate if best is None else max(best, candidate)
    return PhiMaxReport(best, table, threshold, excluded)


def _kernel_sum(xs: np.ndarray, ys: np.ndarray, phi: float) -> float:
    """sum_{i,j} exp(-phi |x_i - y_j|^2), accumulated over fixed row blocks."""
    total = 0.0
    for start in range(0, xs.shape[0], KERNEL_BLOCK):
        block = xs[start:start + KERNEL_BLOCK]
        total += float(np.exp(-phi * cdist(block, ys, "sqeuclidean")).sum())
    return total


def w1_kernel_distance(xs, ys, phi: float = 1.0, sigma: float = 1.0) -> float:
    """
    Norm of the difference of empirical kernel mean embeddings (V-statistic).

    The kernel is K(u, v) = exp(-phi |u - v|^2) / sigma.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if ys.ndim == 1:
        ys = ys[:, None]
    if xs.shape[0] == 0 or ys.shape[0] == 0:
        raise DomainError("both sample sets must be nonempty")
    if xs.shape[1] != ys.shape[1]:
        raise DomainError(f"dimension mismatch: {xs.shape[1]} vs {ys.shape[1]}")
    if not (phi >= 0.0 and sigma > 0.0):
        raise DomainError(f"kernel needs phi >= 0 and sigma > 0, got {phi}, {sigma}")
    m, n = xs.shape[0], ys.shape[0]
    kxx = _kernel_sum(xs, xs, phi) / (m * m)
    kyy = _kernel_sum(ys, ys, phi) / (n * n)
    kxy = _kernel_sum(xs, ys, phi) / (m * n)
    return math.sqrt(max(0.0, (kxx + kyy - 2.0 * kxy) / sigma))


def _spectral_variance_at_zero(x: np.ndarray) -> float:
    """Bartlett lag-window estimate of the spectral density at frequency zero."""
    n = x.shape[0]
    acov = az.autocov(x)
    bandwidth = max(1, int(math.floor(math.sqrt(n))))
    lags = np.arange(1, min(bandwidth, n - 1) + 1)
    weights = 1.0 - lags / (bandwidth + 1.0)
    return float(acov[0] + 2.0 * np.sum(weights * acov[lags]))


def geweke_z(trace: Trace, first: float = 0.1, last: float = 0.5) -> np.ndarray:
    """
    Geweke z-score per coordinate comparing the first and last windows.

    The variance of each window mean uses the spectral density at zero, so
    autocorrelation within a window does not inflate the score.
    """
    for frac in (first, last):
        if frac <= 0 or frac >= 1:
            raise DomainError(f"invalid Geweke window fractions {(first, last)}")
    if first + last > 1:
        raise DomainError(f"Geweke windows overlap: {(first, last)}")
    t = trace.length
    n_first = int(math.floor(first * t))
    n_last = int(math.floor(last * t))
    if n_first < 10 or n_last < 10:
        raise DomainError(f"trace of length {t} is too short for Geweke windows {(first, last)}")
    scores = np.empty(trace.dim)
    for j in range(trace.dim):
        head = trace.samples[:n_first, j]
        tail = trace.samples[t - n_last:, j]
        s_head = _spectral_variance_at_zero(head)
        s_tail = _spectral_variance_at_zero(tail)
        if np.ptp(head) == 0.0 or np.ptp(tail) == 0.0:
            raise ConstantTraceError(f"coordinate {trace.names[j]} has a constant Geweke window")
        variance = max(s_head, 0.0) / n_first + max(s_tail, 0.0) / n_last
        if variance <= 0.0:
            raise ConstantTraceError(f"coordinate {trace.names[j]} has zero spectral variance")
        scores[j] = (head.mean() - tail.mean()) / math.sqrt(variance)
    return scores


def effective_sample_size(trace: Trace) -> EssReport:
    """ESS per coordinate; constant coordinates report t and are flagged."""
    if trace.length < 4:
        raise DomainError("effective sample size needs at least four steps")
    ess = np.empty(trace.dim)
    flagged = np.zeros(trace.dim, dtype=bool)
    for j in range(trace.dim):
        x = trace.samples[:, j]
        if np.ptp(x) == 0.0:
            ess[j] = float(trace.length)
            flagged[j] = True
            continue
        ess[j] = float(az.ess(x[None, :], method="mean"))
    return EssReport(ess, flagged)


def effective_samples_per_second(trace: Trace) -> np.ndarray:
    """ESS divided by total wall time of the trace."""
    if trace.step_seconds is None:
        raise DomainError("trace carries no step timings")
    total = float(trace.step_seconds.sum())
    if total <= 0.0:
        raise DomainError("trace timings sum to zero")
    return effective_sample_size(trace).ess / total


def diagnostics_report(trace: Trace, k_max: int = 10, first: float = 0.1,
                       last: float = 0.5) -> pd.DataFrame:
    """Flat per-coordinate table of ESS, Geweke z and the lag-1 autocorrelation, plus phi_max."""
    ess = effective_sample_size(trace)
    phi = phi_max(trace, k_max)
    try:
        z = geweke_z(trace, first, last)
    except ConstantTraceError as exc:
        logger.warning("Geweke scores skipped: %s", exc)
        z = np.full(trace.dim, np.nan)
    rows = []
    for j, name in enumerate(trace.names):
        rows.append({
            "coordinate": name,
            "ess": ess.ess[j],
            "ess_flagged": bool(ess.flagged[j]),
            "geweke_z": z[j],
            "lag1_autocorrelation": phi.lag_table[j, 0],
            "phi_max": phi.phi_max if phi.phi_max is not None else np.nan,
            "phi_threshold": phi.threshold,
        })
    return pd.DataFrame(rows)


def write_trace_csv(trace: Trace, path: Union[str, Path]) -> None:
    """One header row of coordinate names, one row per step; timings as a trailing column."""
    frame = pd.DataFrame(trace.samples, columns=trace.names)
    if trace.step_seconds is not None:
        frame["step_seconds"] = trace.step_seconds
    frame.to_csv(path, index=False)


def read_trace_csv(path: Union[str, Path], seed: Optional[int] = None,
                   columns: Optional[Sequence[str]] = None) -> Trace:
    frame = read_csv_frame(path)
    seconds = None
    if "step_seconds" in frame.columns:
        seconds = numeric_columns(frame, ["step_seconds"], path)[:, 0]
        frame = frame.drop(columns="step_seconds")
    names = [str(c) for c in frame.columns] if columns is None else [str(c) for c in columns]
    return Trace(numeric_columns(frame, names, path), seed=seed, step_seconds=seconds, names=names)
