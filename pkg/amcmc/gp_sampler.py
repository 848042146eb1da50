"""
Marginal sampler for squared-exponential Gaussian process regression.

y_i = f(x_i) + noise with f ~ GP(0, tau2 exp(-phi ||x - x'||^2)) and noise
variance sigma2. (sigma2, tau2) move jointly by a random walk on the log scale
and phi is drawn by griddy Gibbs over a fixed grid. The covariance for every
grid point is replaced once by a randomized low-rank factor, and every solve
and determinant goes through the eigen-identity

    (tau2 U diag(lam) U' + sigma2 I)^-1 = U diag(1/(tau2 lam + sigma2)) U' + (I - U U') / sigma2.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist, pdist

from .diagnostics import Trace
from .distributions import SeededRng, mvn_root, sample_discrete
from .errors import DataError, DomainError, SizeError
from .lowrank import LowRankFactor, randomized_partial_eig
from .tables import numeric_columns, read_csv_frame

logger = logging.getLogger(__name__)

DEFAULT_SCALE = 0.2
TARGET_ACCEPT = 0.3
DELTA_FORMS = ("scaled", "unscaled")
LOG_2PI = math.log(2.0 * math.pi)


def _as_inputs(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


@dataclass(frozen=True, eq=False)
class GPModel:
    """
    Data, phi grid and the gamma priors on 1/tau2 and 1/sigma2 (shape, rate).
    """

    X: np.ndarray
    y: np.ndarray
    phi_grid: np.ndarray
    a_tau: float = 1.0
    b_tau: float = 1.0
    a_sigma: float = 1.0
    b_sigma: float = 1.0

    def __post_init__(self):
        X = _as_inputs(self.X)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        grid = np.asarray(self.phi_grid, dtype=float).reshape(-1)
        if X.shape[0] != y.size:
            raise DomainError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if y.size < 2:
            raise SizeError("a GP model needs at least two observations")
        if grid.size == 0 or np.any(grid <= 0.0) or np.any(np.diff(grid) <= 0.0):
            raise DomainError("phi_grid must be positive and strictly increasing")
        if min(self.a_tau, self.b_tau, self.a_sigma, self.b_sigma) <= 0.0:
            raise DomainError("prior shapes and rates must be positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "phi_grid", grid)

    @property
    def n(self) -> int:
        return int(self.y.size)


@dataclass(frozen=True, eq=False)
class GPState:
    sigma2: float
    tau2: float
    phi_index: int
    factor: LowRankFactor
    accepted: bool = False

    def __post_init__(self):
        if not (self.sigma2 > 0.0 and self.tau2 >= 0.0):
            raise DomainError(f"need sigma2 > 0 and tau2 >= 0, got {self.sigma2}, {self.tau2}")


def se_covariance(X, phi: float) -> np.ndarray:
    """Unit-scale squared-exponential covariance exp(-phi ||x_i - x_j||^2)."""
    X = _as_inputs(X)
    if phi < 0.0:
        raise DomainError(f"phi must be nonnegative, got {phi}")
    return np.exp(-phi * cdist(X, X, "sqeuclidean"))


def cross_covariance(X_new, X, phi: float) -> np.ndarray:
    return np.exp(-phi * cdist(_as_inputs(X_new), _as_inputs(X), "sqeuclidean"))


def grid_design(n: int, low: float = 0.001, high: float = 1.0) -> np.ndarray:
    """n equispaced 1-d inputs on [low, high]."""
    return np.linspace(low, high, int(n))[:, None]


def normal_design(rng: np.random.Generator, n: int, q: int = 5) -> np.ndarray:
    return rng.standard_normal((int(n), int(q)))


def uniform_design(rng: np.random.Generator, n: int, q: int = 5) -> np.ndarray:
    return rng.random((int(n), int(q)))


def gamma_design(rng: np.random.Generator, n: int, q: int = 5, shape: float = 1.0) -> np.ndarray:
    return rng.gamma(shape, 1.0, size=(int(n), int(q)))


def phi_grid_from_distances(X, size: int = 20, high_corr: float = 0.99, low_corr: float = 0.01) -> np.ndarray:
    """
    Geometric phi grid whose ends give correlations high_corr and low_corr at the
    largest inter-point distance.
    """
    if size < 1:
        raise DomainError(f"grid size must be positive, got {size}")
    if not (0.0 < low_corr < high_corr < 1.0):
        raise DomainError("need 0 < low_corr < high_corr < 1")
    d2 = float(pdist(_as_inputs(X), "sqeuclidean").max(initial=0.0))
    if d2 <= 0.0:
        raise DomainError("inputs must contain at least two distinct points")
    lo = -math.log(high_corr) / d2
    hi = -math.log(low_corr) / d2
    return np.geomspace(lo, hi, int(size)) if size > 1 else np.array([lo])


def simulate_gp(rng: np.random.Generator, X, sigma2: float, tau2: float, phi: float) -> Tuple[np.ndarray, np.ndarray]:
    """Draw (y, f): f ~ N(0, tau2 Sigma) on the inputs and y = f + N(0, sigma2)."""
    sigma = se_covariance(X, phi)
    f = math.sqrt(tau2) * (mvn_root(sigma + 1e-10 * np.eye(sigma.shape[0])) @ rng.standard_normal(sigma.shape[0]))
    y = f + math.sqrt(sigma2) * rng.standard_normal(f.size)
    return y, f


def _precision_weights(factor: LowRankFactor, sigma2: float, tau2: float) -> np.ndarray:
    return tau2 * factor.lam + sigma2


def marginal_loglik(y, factor: LowRankFactor, sigma2: float, tau2: float) -> float:
    """
    log N(y; 0, tau2 U diag(lam) U' + sigma2 I) via the eigen-identity, O(n r).
    """
    if not sigma2 > 0.0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    if tau2 < 0.0:
        raise DomainError(f"tau2 must be nonnegative, got {tau2}")
    y = np.asarray(y, dtype=float)
    n = y.size
    d = _precision_weights(factor, sigma2, tau2)
    y_u = factor.U.T @ y
    logdet = float(np.sum(np.log(d))) + (n - factor.rank) * math.log(sigma2)
    outside = max(float(y @ y) - float(y_u @ y_u), 0.0)
    quad = float(np.sum(y_u * y_u / d)) + outside / sigma2
    return -0.5 * (n * LOG_2PI + logdet + quad)


def _log_inverse_gamma_scale(s: float, shape: float, rate: float) -> float:
    """Log density of s = log(v) when 1/v ~ Gamma(shape, rate), up to a constant."""
    return -shape * s - rate * math.exp(-s)


def _log_target(model: GPModel, factor: LowRankFactor, s_sigma: float, s_tau: float) -> float:
    return (marginal_loglik(model.y, factor, math.exp(s_sigma), math.exp(s_tau))
            + _log_inverse_gamma_scale(s_sigma, model.a_sigma, model.b_sigma)
            + _log_inverse_gamma_scale(s_tau, model.a_tau, model.b_tau))


def phi_conditional(state: GPState, model: GPModel, factors: Sequence[LowRankFactor]) -> np.ndarray:
    """Normalized griddy-Gibbs probabilities of every phi grid point."""
    logp = np.array([marginal_loglik(model.y, f, state.sigma2, state.tau2) for f in factors])
    logp -= logp.max()
    probs = np.exp(logp)
    return probs / probs.sum()


def mh_griddy_step(rng: np.random.Generator, state: GPState, model: GPModel,
                   factors: Sequence[LowRankFactor], scale: float = DEFAULT_SCALE) -> GPState:
    """
    Joint log-scale random walk on (sigma2, tau2), then a griddy-Gibbs phi draw.

    Args:
        rng: Generator.
        state: Current state; its factor must be factors[state.phi_index].
        model: Data and priors.
        factors: One cached LowRankFactor per phi grid point.
        scale: Standard deviation of the random walk on both log scales.

    Returns:
        GPState: accepted records whether the (sigma2, tau2) proposal was taken.
    """
    if len(factors) != model.phi_grid.size:
        raise DomainError(f"expected {model.phi_grid.size} factors, got {len(factors)}")
    if state.tau2 <= 0.0:
        raise DomainError("the random walk on log tau2 needs tau2 > 0")
    s_sigma, s_tau = math.log(state.sigma2), math.log(state.tau2)
    step = scale * rng.standard_normal(2)
    prop_sigma, prop_tau = s_sigma + step[0], s_tau + step[1]
    log_ratio = (_log_target(model, state.factor, prop_sigma, prop_tau)
                 - _log_target(model, state.factor, s_sigma, s_tau))
    accepted = True if log_ratio >= 0.0 else bool(rng.random() < math.exp(log_ratio))
    if accepted:
        state = replace(state, sigma2=math.exp(prop_sigma), tau2=math.exp(prop_tau))

    index = sample_discrete(rng, phi_conditional(state, model, factors))
    return replace(state, phi_index=index, factor=factors[index], accepted=accepted)


def _psi_apply(factor: LowRankFactor, sigma2: float, tau2: float, v: np.ndarray, power: float) -> np.ndarray:
    """Psi^power v for power 1 or 1/2."""
    d = _precision_weights(factor, sigma2, tau2) ** power
    v_u = factor.U.T @ v
    return factor.U @ (v_u / d) + (v - factor.U @ v_u) / sigma2 ** power


def predictive_f_draw(rng: np.random.Generator, state: GPState, y) -> np.ndarray:
    """
    One draw of f from N(Psi y, Psi) with Psi = (tau2 Sigma_eps + sigma2 I)^-1.
    """
    y = np.asarray(y, dtype=float)
    mean = _psi_apply(state.factor, state.sigma2, state.tau2, y, 1.0)
    z = rng.standard_normal(y.size)
    return mean + _psi_apply(state.factor, state.sigma2, state.tau2, z, 0.5)


def predictive_mean_at(X_new, state: GPState, model: GPModel, cross: Optional[np.ndarray] = None) -> np.ndarray:
    """Posterior mean tau2 K(X_new, X) (tau2 Sigma_eps + sigma2 I)^-1 y at new inputs."""
    if cross is None:
        cross = cross_covariance(X_new, model.X, float(model.phi_grid[state.phi_index]))
    return state.tau2 * (cross @ _psi_apply(state.factor, state.sigma2, state.tau2, model.y, 1.0))


def delta_for_epsilon(state: GPState, epsilon: float, n: int, form: str = "scaled") -> float:
    """
    Frobenius accuracy for the covariance factor that keeps the predictive
    law within epsilon in TV.

    The first branch is eps^2 sigma2^2 / (tau2 sqrt(n (tau2 lam_max + sigma2))).
    The second is eps^2 sigma2 / (n tau2) in the "scaled" form and
    eps^2 sigma2 / tau2 in the "unscaled" form.
    """
    if form not in DELTA_FORMS:
        raise DomainError(f"form must be one of {DELTA_FORMS}, got {form!r}")
    if not epsilon > 0.0 or n < 1:
        raise DomainError(f"need epsilon > 0 and n >= 1, got {epsilon}, {n}")
    if state.tau2 == 0.0:
        return math.inf
    sigma2, tau2 = state.sigma2, state.tau2
    eps2 = epsilon * epsilon
    first = eps2 * sigma2 * sigma2 / (tau2 * math.sqrt(n * (tau2 * state.factor.lam_max + sigma2)))
    second = eps2 * sigma2 / tau2
    if form == "scaled":
        second /= n
    return min(first, second)


def precompute_factors(seeded: SeededRng, X, phi_grid, delta: float, d_prob: int = 3,
                       workers: int = 1) -> List[LowRankFactor]:
    """
    Randomized factor of se_covariance(X, phi) for every grid point.

    Grid point k draws from seeded.substream(k), so the factors do not depend
    on scheduling.
    """
    X = _as_inputs(X)
    grid = [float(phi) for phi in np.asarray(phi_grid).reshape(-1)]

    def _factor(k: int):
        rng = seeded.substream(k).generator()
        return k, randomized_partial_eig(rng, se_covariance(X, grid[k]), delta, d_prob)

    success_map: Dict[int, LowRankFactor] = {}
    error_map: Dict[int, Exception] = {}
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as executor:
        futures = {executor.submit(_factor, k): k for k in range(len(grid))}
        for future in as_completed(futures):
            k = futures[future]
            try:
                idx, factor = future.result()
                success_map[idx] = factor
            except Exception as exc:
                error_map[k] = exc
    if error_map:
        raise error_map[min(error_map)]
    factors = [success_map[k] for k in range(len(grid))]
    logger.debug("factor ranks over the phi grid: %s", [f.rank for f in factors])
    return factors


@dataclass(frozen=True, eq=False)
class GPRun:
    trace: Trace
    phi_indices: np.ndarray
    ranks: np.ndarray
    accept_rate: float
    scale: float
    predictions: Optional[np.ndarray] = None
    refactored: List[int] = field(default_factory=list)


def run_gp_chain(rng: np.random.Generator, model: GPModel, factors: Sequence[LowRankFactor],
                 n_iter: int, burn_in: int = 0, scale: float = DEFAULT_SCALE, adapt: bool = True,
                 init: Tuple[float, float] = (1.0, 1.0), X_test=None,
                 adaptive_epsilon: Optional[float] = None, factor_rng: Optional[np.random.Generator] = None,
                 delta_form: str = "scaled", seed: Optional[int] = None) -> GPRun:
    """
    Run the marginal sampler and keep the post-burn-in (sigma2, tau2, phi) draws.

    Args:
        rng: Chain generator.
        model: Data, grid and priors.
        factors: Cached factor per grid point.
        n_iter: Recorded steps.
        burn_in: Discarded steps; the proposal scale adapts toward 0.3
            acceptance here when adapt is set and is frozen afterwards.
        scale: Initial proposal scale.
        init: Starting (sigma2, tau2).
        X_test: Held-out inputs; when given the predictive mean there is
            stored for every recorded step.
        adaptive_epsilon: When set, the factor for the current phi is rebuilt
            whenever delta_for_epsilon asks for a tighter delta than it has.
        factor_rng: Generator for those rebuilds.
        delta_form: Second branch of delta_for_epsilon.

    Returns:
        GPRun: trace, phi indices, factor ranks used and the acceptance rate.
    """
    if adaptive_epsilon is not None and factor_rng is None:
        raise DomainError("adaptive accuracy needs a generator for rebuilding factors")
    factors = list(factors)
    middle = model.phi_grid.size // 2
    state = GPState(float(init[0]), float(init[1]), middle, factors[middle])
    log_scale = math.log(scale) if scale > 0.0 else -math.inf

    for i in range(burn_in):
        state = mh_griddy_step(rng, state, model, factors, math.exp(log_scale))
        if adapt and scale > 0.0:
            log_scale += (float(state.accepted) - TARGET_ACCEPT) / (i + 1) ** 0.6
    frozen = math.exp(log_scale)
    logger.debug("gp chain: proposal scale %.4g after %d burn-in steps", frozen, burn_in)

    crosses: Dict[int, np.ndarray] = {}
    predictions = None
    if X_test is not None:
        predictions = np.empty((n_iter, _as_inputs(X_test).shape[0]))
    draws = np.empty((n_iter, 3))
    seconds = np.empty(n_iter)
    indices = np.empty(n_iter, dtype=np.int64)
    ranks = np.empty(n_iter, dtype=np.int64)
    refactored: List[int] = []
    accepts = 0
    for i in range(n_iter):
        tic = time.perf_counter()
        state = mh_griddy_step(rng, state, model, factors, frozen)
        if adaptive_epsilon is not None:
            needed = delta_for_epsilon(state, adaptive_epsilon, model.n, delta_form)
            if needed < state.factor.delta:
                k = state.phi_index
                sigma = se_covariance(model.X, float(model.phi_grid[k]))
                factors[k] = randomized_partial_eig(factor_rng, sigma, 0.5 * needed,  # type: ignore[arg-type]
                                                    state.factor.d_prob or 3)
                state = replace(state, factor=factors[k])
                refactored.append(i)
        seconds[i] = time.perf_counter() - tic
        accepts += int(state.accepted)
        draws[i] = (state.sigma2, state.tau2, model.phi_grid[state.phi_index])
        indices[i] = state.phi_index
        ranks[i] = state.factor.rank
        if predictions is not None:
            k = state.phi_index
            if k not in crosses:
                crosses[k] = cross_covariance(X_test, model.X, float(model.phi_grid[k]))
            predictions[i] = predictive_mean_at(X_test, state, model, crosses[k])
    if refactored:
        logger.info("gp chain: rebuilt %d factors for adaptive accuracy", len(refactored))
    trace = Trace(draws, seed=seed, step_seconds=seconds, names=["sigma2", "tau2", "phi"])
    rate = accepts / n_iter if n_iter else 0.0
    return GPRun(trace, indices, ranks, rate, frozen, predictions, refactored)


def prediction_risk_curve(run: GPRun, f_test, checkpoints: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    RMSE of the running-average predictive mean against held-out truth.

    Cost is counted in steps times factor rank, the dominant per-step work.

    Returns:
        DataFrame: columns steps, cost, rmse, one row per checkpoint.
    """
    if run.predictions is None:
        raise DomainError("the run did not record held-out predictions")
    f_test = np.asarray(f_test, dtype=float)
    n_iter = run.predictions.shape[0]
    if checkpoints is None:
        checkpoints = range(1, n_iter + 1)
    running = np.cumsum(run.predictions, axis=0)
    cost = np.cumsum(np.maximum(run.ranks, 1))
    rows = []
    for k in checkpoints:
        if not 1 <= k <= n_iter:
            raise DomainError(f"checkpoint {k} outside 1..{n_iter}")
        mean = running[k - 1] / k
        rows.append({"steps": int(k), "cost": float(cost[k - 1]),
                     "rmse": float(np.sqrt(np.mean((mean - f_test) ** 2)))})
    return pd.DataFrame(rows, columns=["steps", "cost", "rmse"])


def read_gp_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    """Features first, y in the last column."""
    values = numeric_columns(read_csv_frame(path), None, path)
    if values.shape[1] < 2:
        raise DataError(f"{path}: needs at least one feature column and a response column")
    return values[:, :-1], values[:, -1]
