import math

import numpy as np
import pytest
from scipy.stats import norm

from amcmc.diagnostics import (
    Trace,
    autocorrelation,
    diagnostics_report,
    effective_sample_size,
    effective_samples_per_second,
    geweke_z,
    phi_max,
    read_trace_csv,
    w1_kernel_distance,
    write_trace_csv,
)
from amcmc.errors import ConstantTraceError, DomainError
from amcmc.finite_chain import FiniteMeasure, simulate_chain


@pytest.fixture
def indicator_trace(rng, two_state):
    path = simulate_chain(rng, two_state, FiniteMeasure(np.array([0.5, 0.5])), 100_000)
    return Trace(path.astype(float), seed=1)


def test_trace_validation():
    with pytest.raises(DomainError):
        Trace(np.array([1.0]))
    with pytest.raises(DomainError):
        Trace(np.array([1.0, np.nan, 2.0]))
    with pytest.raises(DomainError):
        Trace(np.zeros((5, 2)), names=["only"])
    trace = Trace(np.arange(6.0).reshape(3, 2))
    assert trace.names == ["x0", "x1"]
    assert (trace.length, trace.dim) == (3, 2)


def test_autocorrelation_lag_zero_and_constant():
    acf = autocorrelation(np.sin(np.arange(200) / 3.0), 5)
    assert acf[0] == pytest.approx(1.0)
    assert len(acf) == 6
    with pytest.raises(ConstantTraceError):
        autocorrelation(np.ones(20))


def test_phi_max_recovers_two_state_rate(indicator_trace):
    report = phi_max(indicator_trace, 5)
    assert report.phi_max == pytest.approx(0.5, abs=0.05)
    assert report.lag_table.shape == (1, 5)
    assert report.lag_table[0, 0] == pytest.approx(0.5, abs=0.02)


def test_phi_max_scale_free(indicator_trace):
    shifted = Trace(3.0 * indicator_trace.samples - 7.0)
    assert phi_max(shifted, 5).phi_max == pytest.approx(phi_max(indicator_trace, 5).phi_max, abs=1e-10)


def test_phi_max_constant_trace_is_absent():
    report = phi_max(Trace(np.full((100, 2), 4.0)), 5)
    assert report.phi_max is None
    assert report.excluded == [0, 1]
    assert np.isnan(report.lag_table).all()


def test_phi_max_k_max_limit(rng):
    with pytest.raises(DomainError):
        phi_max(Trace(rng.standard_normal(100)), 11)


def test_phi_max_threshold_value(rng):
    report = phi_max(Trace(rng.standard_normal(1000)), 10)
    assert report.threshold == pytest.approx(norm.ppf(0.95 ** 0.1) / math.sqrt(990))
    assert 2.56 < report.threshold * math.sqrt(990) < 2.58


def test_w1_closed_forms():
    assert w1_kernel_distance([[0.0, 1.0]], [[0.0, 1.0]]) == 0.0
    d = 0.7
    expected = math.sqrt(2.0 / 2.0 * (1.0 - math.exp(-0.5 * d * d)))
    assert w1_kernel_distance([0.0], [d], phi=0.5, sigma=2.0) == pytest.approx(expected, abs=1e-14)
    assert w1_kernel_distance([0.0], [1e3]) == pytest.approx(math.sqrt(2.0), abs=1e-14)


def test_w1_metric_properties(rng):
    for _ in range(20):
        a, b, c = (rng.standard_normal((int(rng.integers(3, 30)), 2)) for _ in range(3))
        ab = w1_kernel_distance(a, b)
        assert ab == pytest.approx(w1_kernel_distance(b, a), abs=1e-12)
        assert ab <= w1_kernel_distance(a, c) + w1_kernel_distance(c, b) + 1e-12
    x = rng.standard_normal(1)
    y = rng.standard_normal(1)
    assert w1_kernel_distance(x, y, sigma=0.5) <= math.sqrt(2.0 / 0.5)


def test_w1_errors():
    with pytest.raises(DomainError):
        w1_kernel_distance(np.zeros((0, 1)), [[1.0]])
    with pytest.raises(DomainError):
        w1_kernel_distance(np.zeros((2, 2)), np.zeros((2, 3)))


def test_geweke_iid_and_trend(rng):
    iid = Trace(rng.standard_normal((10_000, 40)))
    z = geweke_z(iid)
    assert np.mean(np.abs(z) > 1.96) < 0.2
    steps = np.arange(10_000, dtype=float)
    trend = Trace(steps / 1000.0 + rng.standard_normal(10_000))
    assert abs(geweke_z(trend)[0]) > 10.0


def test_geweke_window_errors(rng):
    with pytest.raises(DomainError):
        geweke_z(Trace(rng.standard_normal(50)))
    with pytest.raises(DomainError):
        geweke_z(Trace(rng.standard_normal(1000)), first=0.6, last=0.5)
    with pytest.raises(ConstantTraceError):
        geweke_z(Trace(np.r_[np.zeros(100), rng.standard_normal(900)]))


def test_ess_iid_and_two_state(rng, indicator_trace):
    iid = Trace(rng.standard_normal(100_000))
    ratio = effective_sample_size(iid).ess[0] / iid.length
    assert 0.9 <= ratio <= 1.1
    two_state_ratio = effective_sample_size(indicator_trace).ess[0] / indicator_trace.length
    assert two_state_ratio == pytest.approx(1.0 / 3.0, abs=0.05)


def test_ess_ar1_matches_arviz_mean_ess(rng):
    az = pytest.importorskip("arviz")
    x = np.empty(50_000)
    x[0] = rng.standard_normal()
    for i in range(1, x.shape[0]):
        x[i] = 0.5 * x[i - 1] + rng.standard_normal()
    report = effective_sample_size(Trace(np.column_stack([x, rng.standard_normal(x.shape[0])])))
    assert report.ess[0] == pytest.approx(float(az.ess(x[None, :], method="mean")))
    assert report.ess[0] / x.shape[0] == pytest.approx(1.0 / 3.0, abs=0.05)
    assert not report.flagged.any()


def test_ess_constant_coordinate_flagged(rng):
    samples = np.column_stack([rng.standard_normal(200), np.full(200, 2.0)])
    report = effective_sample_size(Trace(samples))
    assert report.flagged.tolist() == [False, True]
    assert report.ess[1] == 200.0


def test_effective_samples_per_second(rng):
    trace = Trace(rng.standard_normal(400), step_seconds=np.full(400, 0.01))
    per_second = effective_samples_per_second(trace)
    assert per_second[0] == pytest.approx(effective_sample_size(trace).ess[0] / 4.0)
    with pytest.raises(DomainError):
        effective_samples_per_second(Trace(rng.standard_normal(400)))


def test_report_and_csv(tmp_path, rng):
    trace = Trace(rng.standard_normal((500, 2)), names=["a", "b"], step_seconds=np.full(500, 1e-3))
    report = diagnostics_report(trace, k_max=10)
    assert report["coordinate"].tolist() == ["a", "b"]
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    back = read_trace_csv(path, seed=5, columns=["b"])
    assert back.names == ["b"]
    np.testing.assert_allclose(back.samples[:, 0], trace.samples[:, 1])
    assert back.step_seconds is not None and back.step_seconds.shape == (500,)
