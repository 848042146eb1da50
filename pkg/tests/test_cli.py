import json

import pandas as pd
import pytest

from amcmc import __version__
from amcmc.cli import build_parser, main
from amcmc.config import config_hash, load_config

SMALL_MIXTURE = """
[mixture]
p = 4
d = 2
K = 2
N = 200
tracked = 5
burn_in = 5
thresholds = [20.0]
"""


def _last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def test_mixtimes_writes_table_and_manifest(tmp_path):
    out = tmp_path / "mix"
    assert main(["mixtimes", "--out", str(out)]) == 0
    table = pd.read_csv(out / "mixtimes.csv")
    assert len(table) == 4
    assert table["steps"].min() == 44
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["files"] == ["mixtimes.csv"]
    assert manifest["subcommand"] == "mixtimes"
    assert manifest["versions"]["amcmc"] == __version__
    assert manifest["config_sha256"] == config_hash(load_config(out / "config.toml"))


def test_verify_finite_passes(tmp_path):
    config = tmp_path / "vf.toml"
    config.write_text("[verify_finite]\nt_max = 64\nrandom_kernels = 5\n", encoding="utf-8")
    out = tmp_path / "vf"
    assert main(["verify-finite", "--config", str(config), "--seed", "3", "--out", str(out)]) == 0
    report = pd.read_csv(out / "verify_finite.csv")
    assert report["passed"].all()


def test_stochastic_run_without_seed_fails(tmp_path, capsys):
    assert main(["mixture", "--out", str(tmp_path / "m")]) == 2
    record = _last_json(capsys.readouterr().err)
    assert record["error"] == "ConfigError"
    assert record["subcommand"] == "mixture"
    assert not (tmp_path / "m").exists()


def test_missing_config_file_fails(tmp_path, capsys):
    assert main(["bounds", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == 2
    assert _last_json(capsys.readouterr().err)["error"] == "FileNotFoundError"


def test_budget_flags_are_exclusive():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["gp", "--budget-steps", "10", "--budget-seconds", "1"])


def test_seeded_run_is_reproducible(tmp_path):
    config = tmp_path / "small.toml"
    config.write_text(SMALL_MIXTURE, encoding="utf-8")
    tables = []
    for threads, name in [(1, "a"), (2, "b")]:
        out = tmp_path / name
        argv = ["mixture", "--config", str(config), "--seed", "17", "--budget-steps", "30",
                "--threads", str(threads), "--out", str(out)]
        assert main(argv) == 0
        tables.append(pd.read_csv(out / "mixture_trace_nmin_20.csv").drop(columns="step_seconds"))
    pd.testing.assert_frame_equal(tables[0], tables[1])
    assert len(tables[0]) == 30


@pytest.mark.parametrize("columns, body", [
    (["zz"], "x,y\n1.0,2.0\n2.0,1.0\n"),
    ([], "x,y\n1.0,a\n2.0,b\n"),
])
def test_unreadable_trace_is_a_data_error(tmp_path, capsys, columns, body):
    trace = tmp_path / "trace.csv"
    trace.write_text(body, encoding="utf-8")
    config = tmp_path / "diag.toml"
    config.write_text(f"[diagnose]\ntrace = {json.dumps(str(trace))}\ncolumns = {json.dumps(columns)}\n",
                      encoding="utf-8")
    assert main(["diagnose", "--config", str(config), "--out", str(tmp_path / "d")]) == 2
    record = _last_json(capsys.readouterr().err)
    assert record["error"] == "DataError"
    assert record["subcommand"] == "diagnose"
    assert "trace.csv" in record["message"]
