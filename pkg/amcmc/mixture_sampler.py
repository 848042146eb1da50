"""
Latent-class model for sparse multiway contingency tables.

pi_c = sum_h nu_h prod_j lambda^{(j)}_{h, c_j}. The Gibbs sampler visits the
latent class counts Z(c) of every occupied cell, then each lambda^{(j)}_h, then
nu. The approximate variant replaces the Z(c) multinomial by a rounded
Gaussian on the classes whose expected count exceeds n_min.
"""

import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import ndtr, roots_legendre
from scipy.stats import multinomial

from .diagnostics import Trace
from .distributions import mvn_root, sample_dirichlet, sample_multinomial
from .errors import DataError, DomainError, SizeError
from .tables import numeric_columns, read_csv_frame

logger = logging.getLogger(__name__)

MAX_DENSE_CELLS = 10_000_000
TV_MAX_CLASSES = 3
TV_MAX_TRIALS = 200
QUAD_NODES = 16


@dataclass(frozen=True, eq=False)
class ContingencyData:
    """
    Occupied cells of a p-way table with d categories per variable.

    Args:
        cells: |C+| x p integer array of 0-based category indices.
        counts: Positive count per listed cell.
        p: Number of variables.
        d: Categories per variable.
        K: Number of latent classes.
    """

    cells: np.ndarray
    counts: np.ndarray
    p: int
    d: int
    K: int

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, int(self.p))
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if cells.shape[0] != counts.shape[0]:
            raise DomainError(f"{cells.shape[0]} cells but {counts.shape[0]} counts")
        if np.any(counts <= 0):
            raise DomainError("listed cells must have positive counts")
        if cells.size and (cells.min() < 0 or cells.max() >= self.d):
            raise DomainError(f"cell categories must lie in [0, {self.d})")
        if self.K < 1 or self.d < 1 or self.p < 1:
            raise DomainError("p, d and K must be positive")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "counts", counts)

    @property
    def n_cells(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MixturePriors:
    """Dirichlet concentrations: lambda_conc for every lambda^{(j)}_h, nu_conc for nu."""

    lambda_conc: float
    nu_conc: float = 1.0

    def __post_init__(self):
        if not (self.lambda_conc > 0.0 and self.nu_conc > 0.0):
            raise DomainError("prior concentrations must be positive")

    @classmethod
    def default(cls, d: int) -> "MixturePriors":
        return cls(lambda_conc=1.0 / d, nu_conc=1.0)


@dataclass(frozen=True, eq=False)
class MixtureState:
    nu: np.ndarray
    lam: np.ndarray
    Z: np.ndarray


def _log_class_weights(state: MixtureState, cells: np.ndarray) -> np.ndarray:
    """log nu_h + sum_j log lambda^{(j)}_{h, c_j}, one row per cell."""
    with np.errstate(divide="ignore"):
        out = np.broadcast_to(np.log(state.nu), (cells.shape[0], state.nu.size)).copy()
        for j in range(cells.shape[1]):
            out += np.log(state.lam[j][:, cells[:, j]]).T
    return out


def _normalize_log(log_w: np.ndarray) -> np.ndarray:
    shifted = log_w - log_w.max(axis=-1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=-1, keepdims=True)


def latent_class_probs(state: MixtureState, cell: Sequence[int]) -> np.ndarray:
    """Posterior class-membership probabilities for one cell, computed in log space."""
    cell = np.asarray(cell, dtype=np.int64).reshape(1, -1)
    return _normalize_log(_log_class_weights(state, cell))[0]


def approx_multinomial_draw(rng: np.random.Generator, n_c: int, nu_tilde, n_min: float) -> np.ndarray:
    """
    Class counts for one cell, Gaussian on the heavy classes.

    H = {h : n_c nu_h > n_min}. Counts on H come from
    N(n_c nu_H, n_c (diag(nu_H) - nu_H nu_H')) rounded to integers with
    negatives set to zero; the rest of the n_c trials go to the other classes
    by an exact multinomial. With H empty the whole draw is the exact
    multinomial. When H holds every class, the heaviest class takes whatever
    remains so the total stays n_c.
    """
    nu_tilde = np.asarray(nu_tilde, dtype=float)
    n_c = int(n_c)
    heavy = n_c * nu_tilde > n_min
    if not np.any(heavy):
        return sample_multinomial(rng, n_c, nu_tilde)

    k = nu_tilde.size
    counts = np.zeros(k, dtype=np.int64)
    idx_heavy = np.flatnonzero(heavy)
    all_heavy = idx_heavy.size == k
    if all_heavy:
        anchor = int(idx_heavy[np.argmax(nu_tilde[idx_heavy])])
        gauss_idx = idx_heavy[idx_heavy != anchor]
    else:
        anchor = -1
        gauss_idx = idx_heavy

    if gauss_idx.size:
        p_h = nu_tilde[gauss_idx]
        cov = n_c * (np.diag(p_h) - np.outer(p_h, p_h))
        root = mvn_root(0.5 * (cov + cov.T))
        w = n_c * p_h + root @ rng.standard_normal(root.shape[1])
        counts[gauss_idx] = np.clip(np.rint(w), 0, None).astype(np.int64)

    excess = int(counts.sum()) - n_c
    while excess > 0:
        top = int(np.argmax(counts))
        take = min(excess, int(counts[top]))
        counts[top] -= take
        excess -= take

    remainder = n_c - int(counts.sum())
    if all_heavy:
        counts[anchor] = remainder
    elif remainder > 0:
        light = np.flatnonzero(~heavy)
        counts[light] = sample_multinomial(rng, remainder, nu_tilde[light])
    return counts


def _sweep_counts(rng: np.random.Generator, state: MixtureState, data: ContingencyData,
                  n_min: float, counts: np.ndarray) -> np.ndarray:
    probs = _normalize_log(_log_class_weights(state, data.cells))
    Z = np.zeros((data.n_cells, data.K), dtype=np.int64)
    for c in range(data.n_cells):
        Z[c] = approx_multinomial_draw(rng, int(counts[c]), probs[c], n_min)
    return Z


def gibbs_step(rng: np.random.Generator, state: MixtureState, data: ContingencyData,
               priors: MixturePriors, n_min: float = math.inf,
               counts: Optional[np.ndarray] = None) -> MixtureState:
    """
    One sweep Z, then lambda, then nu.

    Args:
        rng: Generator.
        state: Current state.
        data: Occupied cells.
        priors: Dirichlet hyperparameters.
        n_min: Gaussian threshold; infinity gives the exact sampler.
        counts: Optional per-cell counts replacing data.counts (burn-in ramp).

    Returns:
        MixtureState: The next state.
    """
    counts = data.counts if counts is None else np.asarray(counts, dtype=np.int64)
    Z = _sweep_counts(rng, state, data, n_min, counts)
    lam = np.empty_like(state.lam)
    for j in range(data.p):
        margins = np.zeros((data.d, data.K))
        np.add.at(margins, data.cells[:, j], Z)
        for h in range(data.K):
            lam[j, h] = sample_dirichlet(rng, priors.lambda_conc + margins[:, h])
    nu = sample_dirichlet(rng, priors.nu_conc + Z.sum(axis=0))
    return MixtureState(nu, lam, Z)


def gibbs_step_exact(rng: np.random.Generator, state: MixtureState, data: ContingencyData,
                     priors: MixturePriors) -> MixtureState:
    return gibbs_step(rng, state, data, priors, math.inf)


def gibbs_step_approx(rng: np.random.Generator, state: MixtureState, data: ContingencyData,
                      priors: MixturePriors, n_min: float) -> MixtureState:
    if n_min < 0:
        raise DomainError(f"n_min must be nonnegative, got {n_min}")
    return gibbs_step(rng, state, data, priors, n_min)


def initial_state(rng: np.random.Generator, data: ContingencyData, priors: MixturePriors) -> MixtureState:
    """Uniform nu, prior draws for lambda, and Z drawn from the resulting conditionals."""
    nu = np.full(data.K, 1.0 / data.K)
    lam = np.empty((data.p, data.K, data.d))
    for j in range(data.p):
        for h in range(data.K):
            lam[j, h] = sample_dirichlet(rng, np.full(data.d, priors.lambda_conc))
    start = MixtureState(nu, lam, np.zeros((data.n_cells, data.K), dtype=np.int64))
    Z = _sweep_counts(rng, start, data, math.inf, data.counts)
    return replace(start, Z=Z)


def ramp_counts(data: ContingencyData, burn_in: int, step: int) -> np.ndarray:
    """Cell counts during burn-in: 10% more of every cell per tenth of burn-in."""
    if burn_in <= 0 or step >= burn_in:
        return data.counts
    fraction = min(1.0, 0.1 * (1 + math.floor(10 * step / burn_in)))
    return np.floor(data.counts * fraction).astype(np.int64)


def _rounded_gaussian_cell_probs_1d(n: int, p: float) -> Tuple[np.ndarray, float]:
    """Masses of N(n p, n p (1-p)) on [m - 1/2, m + 1/2) for m = 0..n, and the mass outside."""
    sd = math.sqrt(n * p * (1.0 - p))
    edges = (np.arange(n + 2) - 0.5 - n * p) / sd
    cdf = ndtr(edges)
    cells = np.diff(cdf)
    return cells, float(1.0 - cells.sum())


def _rounded_gaussian_cell_probs_2d(n: int, p: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Masses of the bivariate Gaussian on unit squares [m1 +- 1/2) x [m2 +- 1/2), 0 <= m <= n.

    The first coordinate is integrated by Gauss-Legendre quadrature on each unit
    interval; the second uses the exact conditional normal CDF.
    """
    mean = n * p
    cov = n * (np.diag(p) - np.outer(p, p))
    s1 = math.sqrt(cov[0, 0])
    slope = cov[0, 1] / cov[0, 0]
    s_cond = math.sqrt(cov[1, 1] - cov[0, 1] ** 2 / cov[0, 0])

    nodes, weights = roots_legendre(QUAD_NODES)
    centers = np.arange(n + 1, dtype=float)
    # w1 nodes for every unit interval, shape (n+1, QUAD_NODES)
    w1 = centers[:, None] + 0.5 * nodes[None, :]
    dens = np.exp(-0.5 * ((w1 - mean[0]) / s1) ** 2) / (s1 * math.sqrt(2.0 * math.pi))
    quad_w = 0.5 * weights[None, :] * dens

    edges2 = np.arange(n + 2) - 0.5
    cond_mean = mean[1] + slope * (w1 - mean[0])
    z = (edges2[None, None, :] - cond_mean[:, :, None]) / s_cond
    cond_cell = np.diff(ndtr(z), axis=2)
    cells = np.einsum("iq,iqj->ij", quad_w, cond_cell)
    return cells, float(1.0 - cells.sum())


def tv_multinomial_vs_rounded_gaussian(n: int, probs) -> float:
    """
    Exact TV between Multinomial(n, probs) and its rounded Gaussian approximation.

    The Gaussian covers the first K-1 coordinates and the last is fixed by the
    sum constraint, so rounded-Gaussian mass on integer points outside the
    multinomial support (negative or over-full) counts fully toward the TV.

    Args:
        n: Trials, 1 <= n <= 200.
        probs: K <= 3 probabilities, each strictly inside (0, 1).

    Returns:
        float: The total variation distance.
    """
    probs = np.asarray(probs, dtype=float)
    n = int(n)
    k = probs.size
    if k < 2 or k > TV_MAX_CLASSES or n < 1 or n > TV_MAX_TRIALS:
        raise SizeError(f"exact TV supports 2 <= K <= {TV_MAX_CLASSES} and 1 <= n <= {TV_MAX_TRIALS}")
    if np.any(probs <= 0.0) or np.any(probs >= 1.0) or abs(probs.sum() - 1.0) > 1e-12:
        raise DomainError("probabilities must lie strictly inside (0, 1) and sum to 1")

    if k == 2:
        gauss, outside = _rounded_gaussian_cell_probs_1d(n, float(probs[0]))
        m = np.arange(n + 1)
        exact = multinomial.pmf(np.stack([m, n - m], axis=1), n, probs)
        return 0.5 * (float(np.abs(exact - gauss).sum()) + outside)

    gauss, outside = _rounded_gaussian_cell_probs_2d(n, probs[:2])
    m1, m2 = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    inside = m1 + m2 <= n
    exact = np.zeros_like(gauss)
    x = np.stack([m1[inside], m2[inside], n - m1[inside] - m2[inside]], axis=1)
    exact[inside] = multinomial.pmf(x, n, probs)
    return 0.5 * (float(np.abs(exact - gauss).sum()) + outside)


def gaussnmin_threshold(nu_tilde, H, epsilon: float, n_cells: int, C_const: float = 1.0) -> float:
    """
    Per-cell count above which the Gaussian step keeps the kernel error below epsilon.

    (C^2 / (|C+| eps^2)) (sum_{h in H} (1-nu_h)(1-2nu_h+2nu_h^2)(1+P_h/nu_K) / sqrt(nu_h(1-nu_h)))^2
    with P_h = sum over classes h' with nu_h' > nu_h of nu_h, and nu_K the last
    entry of nu_tilde. The constant C is unknown in general; the value is advisory.
    """
    nu = np.asarray(nu_tilde, dtype=float)
    if np.any(nu <= 0.0) or np.any(nu >= 1.0):
        raise DomainError("class probabilities must lie strictly inside (0, 1)")
    if not (epsilon > 0.0 and n_cells > 0 and C_const > 0.0):
        raise DomainError("epsilon, n_cells and C_const must be positive")
    H = np.asarray(H, dtype=np.int64).reshape(-1)
    total = 0.0
    for h in H:
        v = nu[h]
        p_h = float(np.sum(nu > v)) * v
        total += (1.0 - v) * (1.0 - 2.0 * v + 2.0 * v * v) * (1.0 + p_h / nu[-1]) / math.sqrt(v * (1.0 - v))
    return C_const ** 2 / (n_cells * epsilon ** 2) * total ** 2


def cell_probabilities(nu, lam, cells) -> np.ndarray:
    """pi_c for each listed cell."""
    state = MixtureState(np.asarray(nu, float), np.asarray(lam, float), np.zeros((0, 0)))
    cells = np.asarray(cells, dtype=np.int64)
    with np.errstate(divide="ignore"):
        return np.exp(_log_class_weights(state, cells)).sum(axis=1)


def top_cells(nu, lam, m: int) -> np.ndarray:
    """The m cells of largest pi; enumerates the d^p table, refusing past MAX_DENSE_CELLS."""
    lam = np.asarray(lam, float)
    p, _, d = lam.shape
    if d ** p > MAX_DENSE_CELLS:
        raise SizeError(f"d^p = {d ** p} cells exceeds the dense enumeration cap {MAX_DENSE_CELLS}")
    grid = np.stack(np.unravel_index(np.arange(d ** p), (d,) * p), axis=1)
    pi = cell_probabilities(nu, lam, grid)
    order = np.argsort(-pi, kind="stable")[: int(m)]
    return grid[order]


def simulate_contingency(rng: np.random.Generator, p: int, d: int, K: int, N: int,
                         priors: MixturePriors) -> Tuple[ContingencyData, np.ndarray, np.ndarray]:
    """
    Draw nu and lambda from the priors, then N observations ancestrally.

    Returns:
        tuple: (data, nu, lam). Cell probabilities for any queried cells follow
        from cell_probabilities(nu, lam, cells).
    """
    if N < 0:
        raise DomainError(f"N must be nonnegative, got {N}")
    nu = sample_dirichlet(rng, np.full(K, priors.nu_conc))
    lam = np.empty((p, K, d))
    for j in range(p):
        for h in range(K):
            lam[j, h] = sample_dirichlet(rng, np.full(d, priors.lambda_conc))
    class_sizes = sample_multinomial(rng, N, nu)
    blocks = []
    for h in range(K):
        n_h = int(class_sizes[h])
        if n_h == 0:
            continue
        cols = [rng.choice(d, size=n_h, p=lam[j, h]) for j in range(p)]
        blocks.append(np.stack(cols, axis=1))
    if not blocks:
        data = ContingencyData(np.zeros((0, p), dtype=np.int64), np.zeros(0, dtype=np.int64), p, d, K)
        return data, nu, lam
    obs = np.concatenate(blocks, axis=0)
    cells, counts = np.unique(obs, axis=0, return_counts=True)
    return ContingencyData(cells, counts, p, d, K), nu, lam


@dataclass(frozen=True, eq=False)
class MixtureRun:
    trace: Trace
    tracked_cells: np.ndarray
    final_state: MixtureState


def run_mixture_chain(rng: np.random.Generator, data: ContingencyData, priors: MixturePriors,
                      tracked_cells, n_iter: int, burn_in: int = 0, n_min: float = math.inf,
                      ramp: bool = True, seed: Optional[int] = None) -> MixtureRun:
    """
    Run the Gibbs sampler and record pi on the tracked cells after burn-in.

    Args:
        rng: Generator.
        data: Occupied cells.
        priors: Dirichlet hyperparameters.
        tracked_cells: m x p cells whose probabilities are traced.
        n_iter: Recorded iterations.
        burn_in: Discarded iterations, during which data are ramped in if ramp.
        n_min: Gaussian threshold; infinity runs the exact sampler.

    Returns:
        MixtureRun: pi-trace with per-step timings and the final state.
    """
    tracked_cells = np.asarray(tracked_cells, dtype=np.int64)
    state = initial_state(rng, data, priors)
    for step in range(burn_in):
        counts = ramp_counts(data, burn_in, step) if ramp else None
        state = gibbs_step(rng, state, data, priors, n_min, counts)
    draws = np.empty((n_iter, tracked_cells.shape[0]))
    seconds = np.empty(n_iter)
    for i in range(n_iter):
        tic = time.perf_counter()
        state = gibbs_step(rng, state, data, priors, n_min)
        seconds[i] = time.perf_counter() - tic
        draws[i] = cell_probabilities(state.nu, state.lam, tracked_cells)
        if (i + 1) % 100 == 0:
            logger.debug("mixture chain step %d/%d", i + 1, n_iter)
    names = ["pi_" + "_".join(str(v) for v in cell) for cell in tracked_cells]
    return MixtureRun(Trace(draws, seed=seed, step_seconds=seconds, names=names), tracked_cells, state)


def posterior_loss(trace: Trace, truth) -> Tuple[float, float]:
    """(RMSE, MAE) of the trace's posterior mean against the true cell probabilities."""
    err = trace.samples.mean(axis=0) - np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean(err ** 2))), float(np.mean(np.abs(err)))


def read_contingency_csv(path: Union[str, Path], d: int, K: int) -> ContingencyData:
    """CSV of c_1..c_p, count with a header row."""
    values = numeric_columns(read_csv_frame(path), None, path, dtype=np.int64)
    if values.shape[1] < 2:
        raise DataError(f"{path}: needs at least one category column and a count column")
    cells, counts = values[:, :-1], values[:, -1]
    return ContingencyData(cells, counts, cells.shape[1], d, K)


def write_contingency_csv(data: ContingencyData, path: Union[str, Path]) -> None:
    frame = pd.DataFrame(data.cells, columns=[f"c{j + 1}" for j in range(data.p)])
    frame["count"] = data.counts
    frame.to_csv(path, index=False)
