"""
Optimal approximation error under a fixed computational budget.

A speedup function s(eps) says how many more steps the approximate kernel
produces per unit of exact-kernel time. For a budget tau_max the approximate
chain runs t = floor(s(eps) * tau_max) steps, and the optimizer picks the grid
point eps minimizing the chosen TV or L2 bound at that t.
"""

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .ergodic_bounds import (
    BoundInputs,
    ErgodicityParams,
    l2_bound_approx,
    l2_bound_exact,
    tv_bound_approx,
    tv_bound_exact,
)
from .errors import DomainError

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["tau_max", "form", "alpha", "eps_c", "t_opt", "bound_at_opt"]
GRID_SIZE = 2000
MAX_SPEEDUP = 100.0


class SpeedupForm(str, enum.Enum):
    LOGARITHMIC = "logarithmic"
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    EXPONENTIAL = "exponential"
    # degenerate s == 1, only used to check that approximation never helps without a speedup
    CONSTANT = "constant"


class Discrepancy(str, enum.Enum):
    TV = "D_TV"
    L2 = "D_L2"


@dataclass(frozen=True)
class SpeedupFn:
    """Speedup curve on [0, alpha/2] with s(0) = 1 and s(alpha/2) = 100."""

    form: SpeedupForm
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "form", SpeedupForm(self.form))
        ErgodicityParams(self.alpha)

    def __call__(self, eps: float) -> float:
        return speedup_eval(self, eps)


def speedup_eval(fn: SpeedupFn, eps: float) -> float:
    """
    Evaluate a speedup curve.

    Args:
        fn: The speedup curve.
        eps: Approximation error in [0, alpha/2].

    Returns:
        float: s(eps) with u = 2 eps / alpha mapped through the curve's form.
    """
    half = fn.alpha / 2.0
    if not (0.0 <= eps <= half):
        raise DomainError(f"eps must lie in [0, {half}], got {eps}")
    u = 2.0 * eps / fn.alpha
    growth = MAX_SPEEDUP - 1.0
    if fn.form is SpeedupForm.LINEAR:
        return 1.0 + growth * u
    if fn.form is SpeedupForm.QUADRATIC:
        return 1.0 + growth * u * u
    if fn.form is SpeedupForm.LOGARITHMIC:
        return 1.0 + growth * math.log2(1.0 + u)
    if fn.form is SpeedupForm.EXPONENTIAL:
        return MAX_SPEEDUP ** u
    return 1.0


@dataclass(frozen=True)
class CompminimaxProblem:
    """
    One budget-constrained bound minimization.

    tv0 defaults to 1 (worst case) for D_TV and to 1e-4 (after burn-in) for
    D_L2 when left as None.
    """

    discrepancy: Discrepancy
    alpha: float
    tau_max: float
    tv0: Optional[float] = None
    fstar: float = 1.0
    grid_size: int = GRID_SIZE

    def __post_init__(self):
        object.__setattr__(self, "discrepancy", Discrepancy(self.discrepancy))
        ErgodicityParams(self.alpha)
        if not self.tau_max >= 1:
            raise DomainError(f"tau_max must be at least 1, got {self.tau_max}")
        if self.grid_size < 2:
            raise DomainError(f"grid_size must be at least 2, got {self.grid_size}")

    @property
    def initial_tv(self) -> float:
        if self.tv0 is not None:
            return float(self.tv0)
        return 1.0 if self.discrepancy is Discrepancy.TV else 1e-4


@dataclass(frozen=True)
class CompminimaxResult:
    eps_c: float
    t_opt: int
    bound_at_opt: float


def epsilon_grid(alpha: float, size: int = GRID_SIZE) -> np.ndarray:
    """Evenly spaced grid on [0, alpha/2 (1 - 1e-9)], starting exactly at 0."""
    return np.linspace(0.0, alpha / 2.0 * (1.0 - 1e-9), int(size))


def path_length(fn: SpeedupFn, eps: float, tau_max: float) -> int:
    """Steps the approximate chain completes within the budget, at least one."""
    return max(1, int(math.floor(speedup_eval(fn, eps) * tau_max)))


def bound_at(problem: CompminimaxProblem, eps: float, t: int) -> float:
    """The problem's bound at error eps and path length t; eps = 0 uses the exact chain."""
    tv0 = problem.initial_tv
    if eps == 0.0:
        inputs = BoundInputs(t, tv0, problem.fstar)
        if problem.discrepancy is Discrepancy.TV:
            return tv_bound_exact(problem.alpha, inputs)
        return l2_bound_exact(problem.alpha, inputs)
    params = ErgodicityParams(problem.alpha, float(eps))
    if problem.discrepancy is Discrepancy.TV:
        return tv_bound_approx(params, t, tv0)
    return l2_bound_approx(params, t, tv0, problem.fstar)


def epsilon_compminimax(problem: CompminimaxProblem, fn: SpeedupFn) -> CompminimaxResult:
    """
    Grid argmin of the bound over eps at t = floor(s(eps) tau_max).

    Ties resolve to the smallest eps because the scan is ascending and only a
    strictly smaller bound replaces the incumbent.
    """
    if fn.alpha != problem.alpha:
        raise DomainError(f"speedup alpha {fn.alpha} differs from problem alpha {problem.alpha}")
    best: Optional[CompminimaxResult] = None
    for eps in epsilon_grid(problem.alpha, problem.grid_size):
        eps = float(eps)
        t = path_length(fn, eps, problem.tau_max)
        value = bound_at(problem, eps, t)
        if best is None or value < best.bound_at_opt:
            best = CompminimaxResult(eps, t, value)
    assert best is not None
    return best


def curve_epsilon_vs_budget(template: CompminimaxProblem, fn: SpeedupFn,
                            tau_grid: Sequence[float], workers: int = 1) -> pd.DataFrame:
    """
    One compminimax row per budget in tau_grid.

    Args:
        template: Problem whose tau_max is replaced by each grid value.
        fn: Speedup curve.
        tau_grid: Budgets, ascending.
        workers: Thread count for evaluating budgets concurrently.

    Returns:
        DataFrame: columns tau_max, form, alpha, eps_c, t_opt, bound_at_opt,
        in tau_grid order.
    """
    taus = [float(tau) for tau in tau_grid]
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise DomainError("tau_grid must be sorted ascending")

    def _solve(i: int):
        return i, epsilon_compminimax(replace(template, tau_max=taus[i]), fn)

    success_map: Dict[int, CompminimaxResult] = {}
    error_map: Dict[int, Exception] = {}
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as executor:
        futures = {executor.submit(_solve, i): i for i in range(len(taus))}
        for future in as_completed(futures):
            i = futures[future]
            try:
                idx, result = future.result()
                success_map[idx] = result
            except Exception as exc:
                error_map[i] = exc
    if error_map:
        first = min(error_map)
        raise error_map[first]

    rows = []
    for i in sorted(success_map):
        result = success_map[i]
        rows.append({
            "tau_max": taus[i],
            "form": fn.form.value,
            "alpha": fn.alpha,
            "eps_c": result.eps_c,
            "t_opt": result.t_opt,
            "bound_at_opt": result.bound_at_opt,
        })
    logger.debug("computed %d compminimax rows for form=%s", len(rows), fn.form.value)
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def exact_wins_budget(curve: pd.DataFrame) -> Optional[float]:
    """First budget after the peak of eps_c at which the exact chain is optimal again."""
    eps = curve["eps_c"].to_numpy()
    taus = curve["tau_max"].to_numpy()
    if len(eps) == 0:
        return None
    peak = int(np.argmax(eps))
    for i in range(peak, len(eps)):
        if eps[i] == 0.0:
            return float(taus[i])
    return None


def budget_grid(low: float, high: float, points: int) -> List[float]:
    """Log-spaced integer budgets from low to high, deduplicated."""
    raw = np.unique(np.floor(np.logspace(math.log10(low), math.log10(high), int(points))))
    return [float(v) for v in raw if v >= 1]
