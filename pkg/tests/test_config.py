import pytest
import toml

from amcmc.config import (ExperimentConfig, apply_overrides, config_from_dict, config_hash, config_to_toml,
                          load_config, require_seed)
from amcmc.errors import ConfigError


def test_blocks_are_coerced():
    config = config_from_dict({"seed": 3, "gp": {"n": 50.0, "deltas": [1, 0.5]}, "mixture": {"thresholds": [10]}})
    assert config.seed == 3
    assert config.gp.n == 50 and isinstance(config.gp.n, int)
    assert config.gp.deltas == [1.0, 0.5]
    assert config.mixture.thresholds == [10.0]
    assert config.logistic == ExperimentConfig().logistic


@pytest.mark.parametrize("values", [
    {"bogus": 1},
    {"gp": {"bogus": 1}},
    {"gp": 3},
    {"gp": {"n": 50.5}},
    {"gp": {"n": True}},
    {"gp": {"sigma2": "0.1"}},
    {"mixtimes": {"alphas": 0.1}},
    {"experiment": 5},
    {"logistic": {"audit_every": 0}},
    {"logistic": {"audit_every": -3}},
])
def test_bad_values_are_rejected(values):
    with pytest.raises(ConfigError):
        config_from_dict(values)


def test_load_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('experiment = "small"\nseed = 11\n\n[compminimax]\npoints = 5\n', encoding="utf-8")
    config = load_config(path)
    assert config.experiment == "small"
    assert config.compminimax.points == 5
    assert config.compminimax.tv0 is None

    broken = tmp_path / "broken.toml"
    broken.write_text("seed = = 1\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)


def test_overrides_replace_only_given_flags():
    base = ExperimentConfig(out="runs")
    config = apply_overrides(base, seed=5, out=None, threads=2)
    assert (config.seed, config.out, config.threads) == (5, "runs", 2)
    assert base.seed is None
    with pytest.raises(ConfigError):
        apply_overrides(base, colour="red")
    with pytest.raises(ConfigError):
        apply_overrides(base, threads="two")


def test_canonical_text_reloads_to_the_same_config():
    config = config_from_dict({"seed": 8, "logistic": {"subset_sizes": [10, 20]}})
    assert config_from_dict(toml.loads(config_to_toml(config))) == config


def test_hash_tracks_content():
    assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig())
    assert len(config_hash(ExperimentConfig())) == 64
    assert config_hash(ExperimentConfig(seed=1)) != config_hash(ExperimentConfig(seed=2))


def test_require_seed():
    assert require_seed(ExperimentConfig(), "bounds") == 0
    assert require_seed(ExperimentConfig(seed=42), "gp") == 42
    for name in ("mixture", "logistic", "gp"):
        with pytest.raises(ConfigError):
            require_seed(ExperimentConfig(), name)
    with pytest.raises(ConfigError):
        require_seed(ExperimentConfig(seed=-1), "bounds")
    with pytest.raises(ConfigError):
        require_seed(ExperimentConfig(seed=2 ** 64), "bounds")
