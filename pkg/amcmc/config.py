"""
Experiment configuration: one TOML file, one typed block per subcommand.

Top-level keys set the run (experiment id, seed, output directory, thread
count, budget); each [block] holds the parameters of one subcommand. Unknown
keys are errors, values are coerced to the declared types, and command-line
flags override what the file says.
"""

import dataclasses
import hashlib
import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import toml

from .errors import ConfigError

logger = logging.getLogger(__name__)

STOCHASTIC = ("mixture", "logistic", "gp")


@dataclass
class BoundsBlock:
    alpha: float = 0.5
    epsilon: float = 0.1
    ts: List[int] = field(default_factory=lambda: [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000])
    tv0: float = 1.0
    fstar: float = 1.0


@dataclass
class MixtimesBlock:
    alphas: List[float] = field(default_factory=lambda: [0.1, 1e-4])
    deltas: List[float] = field(default_factory=lambda: [1e-2, 1e-4])


@dataclass
class CompminimaxBlock:
    alpha: float = 0.1
    forms: List[str] = field(default_factory=lambda: ["logarithmic", "linear", "quadratic", "exponential"])
    discrepancies: List[str] = field(default_factory=lambda: ["D_TV", "D_L2"])
    tau_low: float = 1.0
    tau_high: float = 1e5
    points: int = 61
    grid_size: int = 2000
    fstar: float = 1.0
    tv0: Optional[float] = None


@dataclass
class VerifyFiniteBlock:
    t_max: int = 200
    random_kernels: int = 100
    kernel: str = ""


@dataclass
class MixtureBlock:
    """Synthetic table unless data names a contingency CSV; thresholds are the Gaussian n_min values."""

    p: int = 10
    d: int = 4
    K: int = 3
    N: int = 5000
    thresholds: List[float] = field(default_factory=lambda: [50.0, 200.0])
    burn_in: int = 100
    tracked: int = 20
    lambda_conc: Optional[float] = None
    data: str = ""


@dataclass
class LogisticBlock:
    N: int = 2000
    p: int = 5
    beta: List[float] = field(default_factory=list)
    subset_sizes: List[int] = field(default_factory=lambda: [200, 1000, 2000])
    adaptive_epsilon: Optional[float] = None
    burn_in: int = 100
    audit_every: int = 10
    kernel_phi: float = 1.0
    data: str = ""

    def __post_init__(self):
        if self.audit_every < 1:
            raise ConfigError(f"[logistic].audit_every must be at least 1, got {self.audit_every}")


@dataclass
class GPBlock:
    n: int = 200
    design: str = "grid"
    q: int = 5
    sigma2: float = 0.1
    tau2: float = 1.0
    phi: Optional[float] = None
    grid_size: int = 20
    deltas: List[float] = field(default_factory=lambda: [0.05, 0.01, 0.001])
    d_prob: int = 3
    scale: float = 0.2
    burn_in: int = 200
    test_points: int = 50
    epsilon: Optional[float] = None
    delta_form: str = "scaled"
    data: str = ""


@dataclass
class DiagnoseBlock:
    trace: str = ""
    k_max: int = 10
    first: float = 0.1
    last: float = 0.5
    columns: List[str] = field(default_factory=list)
    reference: str = ""
    kernel_phi: float = 1.0


@dataclass
class ExperimentConfig:
    experiment: str = "amcmc"
    seed: Optional[int] = None
    out: str = "out"
    threads: int = 1
    budget_steps: Optional[int] = None
    budget_seconds: Optional[float] = None
    bounds: BoundsBlock = field(default_factory=BoundsBlock)
    mixtimes: MixtimesBlock = field(default_factory=MixtimesBlock)
    compminimax: CompminimaxBlock = field(default_factory=CompminimaxBlock)
    verify_finite: VerifyFiniteBlock = field(default_factory=VerifyFiniteBlock)
    mixture: MixtureBlock = field(default_factory=MixtureBlock)
    logistic: LogisticBlock = field(default_factory=LogisticBlock)
    gp: GPBlock = field(default_factory=GPBlock)
    diagnose: DiagnoseBlock = field(default_factory=DiagnoseBlock)


def _coerce(value: Any, tp: Any, where: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is Union:
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {type(value).__name__}")
        return [_coerce(v, args[0], where) for v in value]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    raise ConfigError(f"{where} has unsupported type {tp}")


def _build(cls, values: Dict[str, Any], where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            if not isinstance(value, dict):
                raise ConfigError(f"[{name}] must be a table")
            kwargs[name] = _build(tp, value, f"[{name}]")
        else:
            kwargs[name] = _coerce(value, tp, f"{where}.{name}" if where else name)
    return cls(**kwargs)


def config_from_dict(values: Dict[str, Any]) -> ExperimentConfig:
    return _build(ExperimentConfig, dict(values), "")


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a TOML experiment file."""
    try:
        values = toml.load(str(path))
    except toml.TomlDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    logger.debug("loaded config %s", path)
    return config_from_dict(values)


def apply_overrides(config: ExperimentConfig, **flags: Any) -> ExperimentConfig:
    """Replace top-level values with every flag that is not None."""
    changes = {k: v for k, v in flags.items() if v is not None}
    unknown = sorted(set(changes) - {f.name for f in dataclasses.fields(ExperimentConfig)})
    if unknown:
        raise ConfigError(f"unknown override(s): {', '.join(unknown)}")
    hints = typing.get_type_hints(ExperimentConfig)
    coerced = {k: _coerce(v, hints[k], k) for k, v in changes.items()}
    return dataclasses.replace(config, **coerced)


def _drop_none(values: Any) -> Any:
    if isinstance(values, dict):
        return {k: _drop_none(v) for k, v in values.items() if v is not None}
    return values


def config_to_toml(config: ExperimentConfig) -> str:
    """Canonical TOML text; None values are omitted since TOML has no null."""
    return toml.dumps(_drop_none(dataclasses.asdict(config)))


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(config_to_toml(config).encode("utf-8")).hexdigest()


def require_seed(config: ExperimentConfig, subcommand: str) -> int:
    """The run seed; stochastic subcommands refuse to run without one."""
    if config.seed is None:
        if subcommand in STOCHASTIC:
            raise ConfigError(f"'{subcommand}' is stochastic and needs a seed (--seed or seed = ...)")
        return 0
    if not 0 <= config.seed < 2 ** 64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {config.seed}")
    return int(config.seed)
