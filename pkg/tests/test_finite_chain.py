import numpy as np
import pytest

from amcmc.ergodic_bounds import BoundInputs, l2_bound_exact, tv_bound_exact
from amcmc.errors import DomainError, NonUniqueStationaryError, SizeError
from amcmc.finite_chain import (
    VARIANCE_ALPHAS,
    FiniteKernel,
    FiniteMeasure,
    cesaro_tv,
    doeblin_alpha,
    ergodic_average_law,
    exact_autocovariance,
    invariant_measure,
    kernel_tv_sup,
    l2_sharpness_constant,
    load_kernel,
    perturbed_two_state,
    run_sharpness_suite,
    seminorm,
    shifted_two_state,
    simulate_chain,
    symmetric_two_state,
)

START = FiniteMeasure(np.array([0.0, 1.0]))


def test_kernel_validation():
    with pytest.raises(DomainError):
        FiniteKernel(np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(DomainError):
        FiniteKernel(np.ones((2, 3)) / 3)
    with pytest.raises(SizeError):
        FiniteKernel(np.full((17, 17), 1.0 / 17))
    with pytest.raises(DomainError):
        FiniteMeasure(np.array([0.6, 0.6]))


def test_doeblin_alpha(two_state):
    assert doeblin_alpha(two_state) == pytest.approx(0.5)
    assert doeblin_alpha(FiniteKernel(np.eye(3))) == 0.0
    assert doeblin_alpha(FiniteKernel(np.tile([0.2, 0.3, 0.5], (3, 1)))) == pytest.approx(1.0)


def test_invariant_measure(two_state):
    np.testing.assert_allclose(invariant_measure(two_state).weights, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(invariant_measure(perturbed_two_state(0.25, 0.1)).weights, [0.7, 0.3], atol=1e-12)
    doubly = FiniteKernel(np.array([[0.1, 0.6, 0.3], [0.5, 0.2, 0.3], [0.4, 0.2, 0.4]]))
    np.testing.assert_allclose(invariant_measure(doubly).weights, np.full(3, 1.0 / 3.0), atol=1e-12)


def test_reducible_kernel_rejected():
    with pytest.raises(NonUniqueStationaryError):
        invariant_measure(FiniteKernel(np.eye(2)))


def test_cesaro_tv(two_state):
    assert cesaro_tv(START, two_state, 2) == pytest.approx(0.375, abs=1e-15)
    assert cesaro_tv(START, two_state, 2) == pytest.approx(tv_bound_exact(0.5, BoundInputs(2, 0.5)), abs=1e-15)
    pi = invariant_measure(two_state)
    assert all(cesaro_tv(pi, two_state, t) == pytest.approx(0.0, abs=1e-15) for t in (1, 7, 50))
    assert cesaro_tv(START, two_state, 1000) < cesaro_tv(START, two_state, 10)


@pytest.mark.parametrize("a", [0.05, 0.25, 0.45])
@pytest.mark.parametrize("gamma", [0.0, 0.2])
def test_tv_bound_attained_on_two_state(a, gamma):
    P = symmetric_two_state(a)
    nu = FiniteMeasure(np.array([gamma, 1.0 - gamma]))
    tv0 = abs(0.5 - gamma)
    for t in range(1, 201):
        assert cesaro_tv(nu, P, t) == pytest.approx(tv_bound_exact(2 * a, BoundInputs(t, tv0)), abs=1e-12)


def test_kernel_tv_sup(two_state):
    assert kernel_tv_sup(two_state, two_state) == 0.0
    assert kernel_tv_sup(two_state, perturbed_two_state(0.25, 0.1)) == pytest.approx(0.1)
    assert kernel_tv_sup(two_state, shifted_two_state(0.25, 0.1)) == pytest.approx(0.1)


def test_shifted_kernel_doeblin():
    assert doeblin_alpha(shifted_two_state(0.25, 0.05)) == pytest.approx(0.4)


def test_average_law_point_mass(two_state):
    law = ergodic_average_law(two_state, [-1.0, 1.0], START, 1)
    np.testing.assert_array_equal(law.support, [1.0])
    np.testing.assert_array_equal(law.probs, [1.0])


def test_average_law_mse_below_l2_bound(two_state):
    for t in range(1, 65):
        law = ergodic_average_law(two_state, [-1.0, 1.0], START, t)
        assert law.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert law.mean_squared_error(0.0) <= l2_bound_exact(0.5, BoundInputs(t, 0.5, 1.0)) + 1e-12


def test_average_law_cap(two_state):
    with pytest.raises(SizeError):
        ergodic_average_law(two_state, [-1.0, 1.0], START, 65)


def test_exact_autocovariance(two_state):
    pi = invariant_measure(two_state)
    f = np.array([-1.0, 1.0])
    assert exact_autocovariance(two_state, f, pi, 0) == pytest.approx(1.0)
    for k in range(1, 15):
        assert exact_autocovariance(two_state, f, pi, k) == pytest.approx(0.5 ** k, abs=1e-14)
    assert exact_autocovariance(two_state, [2.0, 2.0], pi, 3) == 0.0


def test_seminorm_and_sharpness_constant(two_state):
    assert seminorm([-1.0, 3.0, 0.0]) == 2.0
    c = l2_sharpness_constant(two_state, [-1.0, 1.0], START, 20)
    assert np.isfinite(c)
    assert c <= 4.0 + 1e-9


def test_simulate_chain_frequencies(rng, two_state):
    path = simulate_chain(rng, two_state, START, 20_000)
    assert path[0] == 1
    assert set(np.unique(path)) == {0, 1}
    assert path.mean() == pytest.approx(0.5, abs=0.03)
    switches = np.mean(path[1:] != path[:-1])
    assert switches == pytest.approx(0.25, abs=0.02)


def test_load_kernel(tmp_path):
    path = tmp_path / "kernel.txt"
    path.write_text("0.9 0.1\n0.3 0.7\n")
    P = load_kernel(path)
    assert P.size == 2
    np.testing.assert_allclose(invariant_measure(P).weights, [0.75, 0.25], atol=1e-12)


def test_sharpness_suite_passes():
    report = run_sharpness_suite(t_max=200, seed=3, random_kernels=100)
    assert list(report.columns) == ["check", "passed", "worst", "tol"]
    assert len(report) == 8
    assert report["passed"].all(), report.to_string()


def test_sharpness_suite_covers_slow_mixing_variance_factor():
    assert min(VARIANCE_ALPHAS) <= 1e-4
    assert {0.9, 0.5, 0.1, 1e-2, 1e-4} <= set(VARIANCE_ALPHAS)
    report = run_sharpness_suite(t_max=20, seed=0, random_kernels=1).set_index("check")
    row = report.loc["variance_factor_closed_form"]
    assert bool(row["passed"])
    assert row["worst"] <= 1e-12
