"""
Experiment runners behind the command-line subcommands.

Each runner takes a merged ExperimentConfig and returns a RunResult of named
tables. write_artifacts() saves every table as <name>.csv next to a
manifest.json recording the config hash, seed and package versions. Chains
that belong to one experiment run concurrently on a thread pool, each on its
own Philox substream, so results do not depend on scheduling.
"""

import json
import logging
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import arviz as az
import numpy as np
import pandas as pd
import scipy

from . import __version__
from .compminimax import (CompminimaxProblem, Discrepancy, SpeedupFn, SpeedupForm, budget_grid,
                          curve_epsilon_vs_budget, exact_wins_budget)
from .config import ExperimentConfig, config_hash, config_to_toml, require_seed
from .diagnostics import (Trace, diagnostics_report, effective_sample_size, effective_samples_per_second,
                          read_trace_csv, w1_kernel_distance)
from .distributions import SeededRng
from .ergodic_bounds import bounds_table, clamp_for_report, mixing_time_table
from .errors import ConfigError
from .finite_chain import doeblin_alpha, invariant_measure, load_kernel, run_sharpness_suite
from .gp_sampler import (GPModel, gamma_design, grid_design, normal_design, phi_grid_from_distances,
                         precompute_factors, prediction_risk_curve, read_gp_csv, run_gp_chain, simulate_gp,
                         uniform_design)
from .logistic_sampler import (GaussianPrior, SubsetPolicy, empirical_epsilon_trace, read_logistic_csv,
                               run_logistic_chain, simulate_logistic)
from .mixture_sampler import (MixturePriors, cell_probabilities, posterior_loss, read_contingency_csv,
                              run_mixture_chain, simulate_contingency, top_cells)

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 1000
PILOT_STEPS = 20


@dataclass
class RunResult:
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    passed: bool = True


def resolve_steps(config: ExperimentConfig, pilot: Optional[Callable[[int], Trace]] = None) -> int:
    """
    Recorded chain length for the run.

    budget_steps wins when set. A wall-time budget is converted to steps from
    a short pilot chain timed on the monotonic clock.
    """
    if config.budget_steps is not None:
        if config.budget_steps < 2:
            raise ConfigError(f"budget_steps must be at least 2, got {config.budget_steps}")
        return int(config.budget_steps)
    if config.budget_seconds is not None and pilot is not None:
        tic = time.monotonic()
        pilot(PILOT_STEPS)
        per_step = max((time.monotonic() - tic) / PILOT_STEPS, 1e-9)
        steps = max(2, int(config.budget_seconds / per_step))
        logger.info("wall budget %.3gs at %.3gs/step -> %d steps", config.budget_seconds, per_step, steps)
        return steps
    return DEFAULT_STEPS


def _run_cells(cells: Dict[str, Callable[[], object]], workers: int) -> Dict[str, object]:
    """Run independent named jobs on a thread pool, re-raising the first failure by name."""
    success_map: Dict[str, object] = {}
    error_map: Dict[str, Exception] = {}
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as executor:
        futures = {executor.submit(job): name for name, job in cells.items()}
        for future in as_completed(futures):
            name = futures[future]
            try:
                success_map[name] = future.result()
            except Exception as exc:
                error_map[name] = exc
    if error_map:
        first = sorted(error_map)[0]
        logger.error("%d of %d cells failed; first: %s", len(error_map), len(cells), first)
        raise error_map[first]
    return {name: success_map[name] for name in cells}


def _trace_table(trace: Trace) -> pd.DataFrame:
    frame = pd.DataFrame(trace.samples, columns=trace.names)
    if trace.step_seconds is not None:
        frame["step_seconds"] = trace.step_seconds
    return frame


def run_bounds(config: ExperimentConfig) -> RunResult:
    block = config.bounds
    table = bounds_table(block.alpha, block.epsilon, block.ts, block.tv0, block.fstar)
    table["tv_exact_report"] = [clamp_for_report(v) for v in table["tv_exact"]]
    table["tv_approx_report"] = [clamp_for_report(v) for v in table["tv_approx"]]
    return RunResult({"bounds": table})


def run_mixtimes(config: ExperimentConfig) -> RunResult:
    return RunResult({"mixtimes": mixing_time_table(config.mixtimes.alphas, config.mixtimes.deltas)})


def run_compminimax(config: ExperimentConfig) -> RunResult:
    block = config.compminimax
    taus = budget_grid(block.tau_low, block.tau_high, block.points)
    curves: List[pd.DataFrame] = []
    summary = []
    for disc in block.discrepancies:
        template = CompminimaxProblem(Discrepancy(disc), block.alpha, taus[0], block.tv0,
                                      block.fstar, block.grid_size)
        for form in block.forms:
            curve = curve_epsilon_vs_budget(template, SpeedupFn(SpeedupForm(form), block.alpha),
                                            taus, workers=config.threads)
            curve.insert(0, "discrepancy", disc)
            curves.append(curve)
            peak = int(np.argmax(curve["eps_c"].to_numpy()))
            summary.append({
                "discrepancy": disc,
                "form": form,
                "peak_eps_c": float(curve["eps_c"].iloc[peak]),
                "peak_tau_max": float(curve["tau_max"].iloc[peak]),
                "exact_wins_tau_max": exact_wins_budget(curve),
            })
    return RunResult({"compminimax_curves": pd.concat(curves, ignore_index=True),
                      "compminimax_summary": pd.DataFrame(summary)})


def run_verify_finite(config: ExperimentConfig) -> RunResult:
    block = config.verify_finite
    report = run_sharpness_suite(block.t_max, require_seed(config, "verify-finite"), block.random_kernels)
    tables = {"verify_finite": report}
    if block.kernel:
        P = load_kernel(block.kernel)
        pi = invariant_measure(P)
        tables["kernel"] = pd.DataFrame({
            "state": np.arange(P.size),
            "stationary": pi.weights,
            "doeblin_alpha": doeblin_alpha(P),
        })
    return RunResult(tables, passed=bool(report["passed"].all()))


def run_mixture(config: ExperimentConfig) -> RunResult:
    block = config.mixture
    seeded = SeededRng(require_seed(config, "mixture"))
    priors = MixturePriors(block.lambda_conc if block.lambda_conc is not None else 1.0 / block.d)
    truth = None
    if block.data:
        data = read_contingency_csv(block.data, block.d, block.K)
        order = np.argsort(-data.counts, kind="stable")[: block.tracked]
        tracked = data.cells[order]
    else:
        data, nu, lam = simulate_contingency(seeded.substream(0).generator(), block.p, block.d,
                                             block.K, block.N, priors)
        tracked = top_cells(nu, lam, block.tracked)
        truth = cell_probabilities(nu, lam, tracked)

    chains = {"exact": math.inf}
    chains.update({f"nmin_{t:g}": float(t) for t in block.thresholds})

    def _pilot(n: int) -> Trace:
        return run_mixture_chain(seeded.substream(99).generator(), data, priors, tracked, n).trace

    steps = resolve_steps(config, _pilot)
    jobs = {}
    for i, (name, n_min) in enumerate(chains.items()):
        def _job(i=i, n_min=n_min):
            return run_mixture_chain(seeded.substream(1 + i).generator(), data, priors, tracked,
                                     steps, block.burn_in, n_min, seed=seeded.seed).trace
        jobs[name] = _job
    traces = _run_cells(jobs, config.threads)

    reference = traces["exact"]
    rows = []
    tables: Dict[str, pd.DataFrame] = {}
    for name, trace in traces.items():
        tables[f"mixture_trace_{name}"] = _trace_table(trace)  # type: ignore[arg-type]
        row = {"chain": name, "n_min": chains[name], "steps": trace.length,  # type: ignore[union-attr]
               "seconds": float(trace.step_seconds.sum()),  # type: ignore[union-attr]
               "mean_ess": float(np.mean(effective_sample_size(trace).ess)),  # type: ignore[arg-type]
               "mean_es_per_sec": float(np.mean(effective_samples_per_second(trace))),  # type: ignore[arg-type]
               "w1_to_exact": w1_kernel_distance(trace.samples, reference.samples)}  # type: ignore[union-attr]
        if truth is not None:
            row["rmse"], row["mae"] = posterior_loss(trace, truth)  # type: ignore[arg-type]
        rows.append(row)
    tables["mixture_summary"] = pd.DataFrame(rows)
    return RunResult(tables)


def run_logistic(config: ExperimentConfig) -> RunResult:
    block = config.logistic
    seeded = SeededRng(require_seed(config, "logistic"))
    if block.data:
        data = read_logistic_csv(block.data)
    else:
        beta = np.asarray(block.beta, dtype=float) if block.beta else np.linspace(-1.0, 1.0, block.p)
        data = simulate_logistic(seeded.substream(0).generator(), block.N, beta.size, beta)
    prior = GaussianPrior.isotropic(data.p)

    policies: Dict[str, Optional[SubsetPolicy]] = {"exact": None}
    for size in block.subset_sizes:
        policies[f"subset_{size}"] = SubsetPolicy("fixed", min(int(size), data.n))
    if block.adaptive_epsilon is not None:
        policies["adaptive"] = SubsetPolicy("adaptive", min(1000, data.n), block.adaptive_epsilon)

    def _pilot(n: int) -> Trace:
        return run_logistic_chain(seeded.substream(99).generator(), data, prior, None, n).trace

    steps = resolve_steps(config, _pilot)
    jobs = {}
    for name, policy in policies.items():
        # common random numbers: every chain replays the same stream
        def _job(policy=policy):
            return run_logistic_chain(seeded.substream(1).generator(), data, prior, policy, steps,
                                      block.burn_in, None if policy is None else block.audit_every,
                                      seeded.substream(2).generator(), seed=seeded.seed)
        jobs[name] = _job
    runs = _run_cells(jobs, config.threads)

    reference = runs["exact"].trace  # type: ignore[attr-defined]
    ref_mean = reference.samples.mean(axis=0)
    rows = []
    tables: Dict[str, pd.DataFrame] = {}
    for name, run in runs.items():
        trace = run.trace  # type: ignore[attr-defined]
        tables[f"logistic_trace_{name}"] = _trace_table(trace)
        if run.audit_disabled:  # type: ignore[attr-defined]
            eps = pd.Series(dtype=float)
        else:
            eps = empirical_epsilon_trace(run)  # type: ignore[arg-type]
            if eps.size:
                tables[f"logistic_audit_{name}"] = eps.reset_index()
        rows.append({
            "chain": name,
            "mean_subset_size": float(np.mean(run.subset_sizes)),  # type: ignore[attr-defined]
            "rmse_to_exact": float(np.sqrt(np.mean((trace.samples.mean(axis=0) - ref_mean) ** 2))),
            "w1_to_exact": w1_kernel_distance(trace.samples, reference.samples, block.kernel_phi),
            "mean_audit_tv": float(eps.mean()) if eps.size else float("nan"),
            "max_audit_tv": float(eps.max()) if eps.size else float("nan"),
            "mean_ess": float(np.mean(effective_sample_size(trace).ess)),
            "seconds": float(trace.step_seconds.sum()),
        })
    tables["logistic_summary"] = pd.DataFrame(rows)
    return RunResult(tables)


def _gp_design(block, rng: np.random.Generator, n: int) -> np.ndarray:
    if block.design == "grid":
        return grid_design(n)
    if block.design == "normal":
        return normal_design(rng, n, block.q)
    if block.design == "uniform":
        return uniform_design(rng, n, block.q)
    if block.design == "gamma":
        return gamma_design(rng, n, block.q)
    raise ConfigError(f"unknown GP design {block.design!r}")


def run_gp(config: ExperimentConfig) -> RunResult:
    block = config.gp
    if not block.deltas:
        raise ConfigError("[gp] deltas must name at least one accuracy level")
    seeded = SeededRng(require_seed(config, "gp"))
    data_rng = seeded.substream(0).generator()
    if block.data:
        X_all, y_all = read_gp_csv(block.data)
        holdout = min(block.test_points, X_all.shape[0] // 2)
        perm = data_rng.permutation(X_all.shape[0])
        test, train = perm[:holdout], perm[holdout:]
        X, y, X_test, f_test = X_all[train], y_all[train], X_all[test], y_all[test]
    else:
        X_all = _gp_design(block, data_rng, block.n + block.test_points)
        grid = phi_grid_from_distances(X_all, block.grid_size)
        phi_true = block.phi if block.phi is not None else float(grid[grid.size // 2])
        y_all, f_all = simulate_gp(data_rng, X_all, block.sigma2, block.tau2, phi_true)
        test = data_rng.permutation(X_all.shape[0])[: block.test_points]
        train = np.setdiff1d(np.arange(X_all.shape[0]), test)
        X, y, X_test, f_test = X_all[train], y_all[train], X_all[test], f_all[test]
    center, spread = float(y.mean()), float(y.std())
    y = (y - center) / spread
    f_test = (f_test - center) / spread
    model = GPModel(X, y, phi_grid_from_distances(X, block.grid_size))

    steps: Optional[int] = None
    summaries, curves, factor_rows = [], [], []
    tables: Dict[str, pd.DataFrame] = {}
    for k, delta in enumerate(block.deltas):
        factors = precompute_factors(seeded.substream(10 + k), X, model.phi_grid, delta, block.d_prob,
                                     config.threads)
        for j, factor in enumerate(factors):
            factor_rows.append({"delta": delta, "phi": float(model.phi_grid[j]), "rank": factor.rank,
                                "residual": factor.residual, "full_rank": factor.full_rank})
        if steps is None:
            # the wall budget is timed on the first accuracy level
            steps = resolve_steps(config, lambda n, factors=factors: run_gp_chain(
                seeded.substream(99).generator(), model, factors, n).trace)
        run = run_gp_chain(seeded.substream(1).generator(), model, factors, steps, block.burn_in,
                           block.scale, X_test=X_test, adaptive_epsilon=block.epsilon,
                           factor_rng=seeded.substream(20 + k).generator(), delta_form=block.delta_form,
                           seed=seeded.seed)
        curve = prediction_risk_curve(run, f_test)
        curve.insert(0, "delta", delta)
        curves.append(curve)
        tables[f"gp_trace_delta_{delta:g}"] = _trace_table(run.trace)
        medians = np.median(run.trace.samples, axis=0)
        summaries.append({
            "delta": delta,
            "mean_rank": float(np.mean(run.ranks)),
            "accept_rate": run.accept_rate,
            "scale": run.scale,
            "sigma2_median": float(medians[0] * spread ** 2),
            "tau2_median": float(medians[1] * spread ** 2),
            "phi_median": float(medians[2]),
            "final_rmse": float(curve["rmse"].iloc[-1]),
            "refactored": len(run.refactored),
        })
    tables["gp_summary"] = pd.DataFrame(summaries)
    tables["gp_risk"] = pd.concat(curves, ignore_index=True)
    tables["gp_factors"] = pd.DataFrame(factor_rows)
    return RunResult(tables)


def run_diagnose(config: ExperimentConfig) -> RunResult:
    block = config.diagnose
    if not block.trace:
        raise ConfigError("diagnose needs a trace CSV ([diagnose] trace = ...)")
    columns = block.columns or None
    trace = read_trace_csv(block.trace, config.seed, columns)
    tables = {"diagnostics": diagnostics_report(trace, block.k_max, block.first, block.last)}
    if block.reference:
        reference = read_trace_csv(block.reference, None, trace.names)
        tables["distance"] = pd.DataFrame([{
            "reference": block.reference,
            "w1_kernel_distance": w1_kernel_distance(trace.samples, reference.samples, block.kernel_phi),
        }])
    return RunResult(tables)


RUNNERS: Dict[str, Callable[[ExperimentConfig], RunResult]] = {
    "bounds": run_bounds,
    "mixtimes": run_mixtimes,
    "compminimax": run_compminimax,
    "verify-finite": run_verify_finite,
    "mixture": run_mixture,
    "logistic": run_logistic,
    "gp": run_gp,
    "diagnose": run_diagnose,
}


def run_subcommand(name: str, config: ExperimentConfig) -> RunResult:
    if name not in RUNNERS:
        raise ConfigError(f"unknown subcommand {name!r}")
    logger.info("running %s (experiment %s)", name, config.experiment)
    return RUNNERS[name](config)


def versions() -> Dict[str, str]:
    return {
        "amcmc": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "arviz": az.__version__,
        "python": platform.python_version(),
    }


def write_artifacts(out: Path, subcommand: str, config: ExperimentConfig, result: RunResult) -> List[Path]:
    """Write every table as CSV plus manifest.json; returns the CSV paths."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in result.tables.items():
        path = out / f"{name}.csv"
        table.to_csv(path, index=False, encoding="utf-8")
        written.append(path)
    (out / "config.toml").write_text(config_to_toml(config), encoding="utf-8")
    manifest = {
        "subcommand": subcommand,
        "experiment": config.experiment,
        "config_sha256": config_hash(config),
        "seed": config.seed,
        "versions": versions(),
        "files": [p.name for p in written],
        "passed": result.passed,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    logger.info("wrote %d tables to %s", len(written), out)
    return written
