import copy
import math

import numpy as np
import pytest
from scipy.special import ndtr

from amcmc.distributions import SeededRng, sample_dirichlet, sample_multinomial
from amcmc.errors import DomainError, SizeError
from amcmc.mixture_sampler import (
    ContingencyData,
    MixturePriors,
    MixtureState,
    approx_multinomial_draw,
    cell_probabilities,
    gaussnmin_threshold,
    gibbs_step_approx,
    gibbs_step_exact,
    initial_state,
    latent_class_probs,
    posterior_loss,
    ramp_counts,
    read_contingency_csv,
    run_mixture_chain,
    simulate_contingency,
    top_cells,
    tv_multinomial_vs_rounded_gaussian,
    write_contingency_csv,
)


def _two_class_state():
    lam = np.array([[[0.9, 0.1], [0.1, 0.9]]])
    return MixtureState(np.array([0.5, 0.5]), lam, np.zeros((0, 2), dtype=np.int64))


def test_latent_class_probs():
    state = _two_class_state()
    np.testing.assert_allclose(latent_class_probs(state, [0]), [0.9, 0.1], atol=1e-12)
    scaled = MixtureState(2.0 * state.nu, state.lam, state.Z)
    np.testing.assert_allclose(latent_class_probs(scaled, [0]), [0.9, 0.1], atol=1e-12)
    same = MixtureState(np.full(3, 1 / 3), np.tile([0.2, 0.8], (2, 3, 1)), state.Z)
    np.testing.assert_allclose(latent_class_probs(same, [1, 0]), np.full(3, 1 / 3), atol=1e-12)
    single = MixtureState(np.array([1.0]), np.array([[[0.3, 0.7]]]), state.Z)
    np.testing.assert_allclose(latent_class_probs(single, [1]), [1.0])


def test_latent_class_probs_underflow():
    lam = np.array([[[1e-300, 1.0 - 1e-300], [1e-310, 1.0]]] * 3)
    state = MixtureState(np.array([0.5, 0.5]), lam, np.zeros((0, 2)))
    probs = latent_class_probs(state, [0, 0, 0])
    assert np.all(np.isfinite(probs))
    assert probs.sum() == pytest.approx(1.0)


def test_approx_draw_infinite_threshold_is_exact_multinomial():
    a = SeededRng(4).generator()
    b = SeededRng(4).generator()
    probs = np.array([0.5, 0.3, 0.2])
    for n in (0, 1, 17, 400):
        np.testing.assert_array_equal(approx_multinomial_draw(a, n, probs, math.inf),
                                      sample_multinomial(b, n, probs))


def test_approx_draw_single_class(rng):
    assert approx_multinomial_draw(rng, 37, [1.0], 0.0).tolist() == [37]


def test_approx_draw_moments(rng):
    probs = np.array([0.5, 0.3, 0.2])
    n = 10_000
    draws = np.array([approx_multinomial_draw(rng, n, probs, 100.0) for _ in range(20_000)])
    assert np.all(draws.sum(axis=1) == n)
    sd = np.sqrt(n * probs * (1 - probs) / len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - n * probs) < 4 * sd)


def test_approx_draw_sums_and_nonnegative(rng):
    for _ in range(2000):
        k = int(rng.integers(2, 6))
        probs = sample_dirichlet(rng, np.full(k, 0.5))
        n = int(rng.integers(0, 60))
        n_min = float(rng.choice([0.0, 1.0, 5.0, 20.0]))
        counts = approx_multinomial_draw(rng, n, probs, n_min)
        assert counts.sum() == n
        assert counts.min() >= 0


def test_tv_shrinks_with_trials():
    probs = [0.5, 0.3, 0.2]
    tvs = [tv_multinomial_vs_rounded_gaussian(n, probs) for n in (10, 40, 160)]
    assert tvs[0] >= tvs[1] >= tvs[2]
    assert tvs[2] < 0.1


def test_tv_single_trial_closed_form():
    assert tv_multinomial_vs_rounded_gaussian(1, [0.5, 0.5]) == pytest.approx(2.0 * ndtr(-2.0), abs=1e-12)


def test_tv_preconditions():
    with pytest.raises(DomainError):
        tv_multinomial_vs_rounded_gaussian(20, [0.0, 0.6, 0.4])
    with pytest.raises(SizeError):
        tv_multinomial_vs_rounded_gaussian(20, [0.25] * 4)
    with pytest.raises(SizeError):
        tv_multinomial_vs_rounded_gaussian(201, [0.5, 0.5])


def test_gaussnmin_threshold_scaling():
    nu = np.array([0.5, 0.3, 0.2])
    base = gaussnmin_threshold(nu, [0, 1, 2], 0.1, 50)
    assert gaussnmin_threshold(nu, [0, 1, 2], 0.05, 50) == pytest.approx(4.0 * base)
    path = [gaussnmin_threshold([1.0 - s, s], [0, 1], 0.1, 50) for s in (0.4, 0.3, 0.2, 0.1, 0.05)]
    assert all(b > a for a, b in zip(path, path[1:]))
    assert np.isfinite(gaussnmin_threshold([0.6, 0.4], [0], 0.1, 50))
    with pytest.raises(DomainError):
        gaussnmin_threshold([1.0, 0.0], [0], 0.1, 50)


def test_ramp_counts():
    data = ContingencyData([[0, 0], [1, 1]], [10, 35], 2, 2, 1)
    assert ramp_counts(data, 100, 0).tolist() == [1, 3]
    assert ramp_counts(data, 100, 55).tolist() == [6, 21]
    assert ramp_counts(data, 100, 95).tolist() == [10, 35]
    assert ramp_counts(data, 100, 100).tolist() == [10, 35]
    assert ramp_counts(data, 0, 0).tolist() == [10, 35]


def test_single_class_gibbs_is_conjugate():
    data = ContingencyData([[0, 0], [0, 1], [1, 1]], [4, 2, 7], 2, 2, 1)
    priors = MixturePriors(0.5, 1.0)
    rng = SeededRng(9).generator()
    state = initial_state(rng, data, priors)
    np.testing.assert_array_equal(state.Z[:, 0], data.counts)
    mirror = copy.deepcopy(rng)
    nxt = gibbs_step_exact(rng, state, data, priors)
    for c in range(data.n_cells):
        sample_multinomial(mirror, int(data.counts[c]), np.ones(1))
    expected = [
        sample_dirichlet(mirror, 0.5 + np.array([6.0, 7.0])),
        sample_dirichlet(mirror, 0.5 + np.array([4.0, 9.0])),
    ]
    np.testing.assert_array_equal(nxt.lam[0, 0], expected[0])
    np.testing.assert_array_equal(nxt.lam[1, 0], expected[1])
    np.testing.assert_array_equal(nxt.Z[:, 0], data.counts)


def test_gibbs_step_reproducible_and_valid():
    priors = MixturePriors.default(3)
    data, _, _ = simulate_contingency(SeededRng(1).generator(), 3, 3, 2, 400, priors)
    runs = []
    for _ in range(2):
        rng = SeededRng(2).generator()
        state = initial_state(rng, data, priors)
        runs.append(gibbs_step_approx(rng, state, data, priors, 5.0))
    np.testing.assert_array_equal(runs[0].nu, runs[1].nu)
    np.testing.assert_array_equal(runs[0].Z, runs[1].Z)
    assert np.all(runs[0].Z.sum(axis=1) == data.counts)
    assert runs[0].nu.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(runs[0].lam.sum(axis=2), 1.0, atol=1e-12)
    with pytest.raises(DomainError):
        gibbs_step_approx(rng, runs[0], data, priors, -1.0)


def test_simulate_contingency(rng):
    priors = MixturePriors.default(4)
    empty, _, _ = simulate_contingency(rng, 3, 4, 2, 0, priors)
    assert empty.n_cells == 0
    data, nu, lam = simulate_contingency(rng, 3, 4, 2, 1000, priors)
    assert data.total == 1000
    assert lam.shape == (3, 2, 4)
    assert nu.sum() == pytest.approx(1.0)


def test_cell_probabilities_sum_to_one(rng):
    priors = MixturePriors.default(3)
    _, nu, lam = simulate_contingency(rng, 3, 3, 2, 10, priors)
    grid = np.stack(np.unravel_index(np.arange(27), (3, 3, 3)), axis=1)
    assert cell_probabilities(nu, lam, grid).sum() == pytest.approx(1.0, abs=1e-12)
    best = top_cells(nu, lam, 5)
    pi = cell_probabilities(nu, lam, best)
    assert np.all(np.diff(pi) <= 0.0)
    with pytest.raises(SizeError):
        top_cells(nu, np.full((5, 2, 50), 0.02), 3)


def test_exact_chain_concentrates_with_more_data():
    priors = MixturePriors.default(5)
    seeded = SeededRng(17)
    truth_rng = seeded.substream(0).generator()
    _, nu, lam = simulate_contingency(truth_rng, 2, 5, 2, 0, priors)
    cells = top_cells(nu, lam, 10)
    truth = cell_probabilities(nu, lam, cells)
    losses = []
    for i, N in enumerate((200, 20_000)):
        rng = seeded.substream(i + 1).generator()
        counts = sample_multinomial(rng, N, cell_probabilities(nu, lam, np.stack(
            np.unravel_index(np.arange(25), (5, 5)), axis=1)))
        occupied = np.flatnonzero(counts)
        grid = np.stack(np.unravel_index(occupied, (5, 5)), axis=1)
        data = ContingencyData(grid, counts[occupied], 2, 5, 2)
        run = run_mixture_chain(rng, data, priors, cells, n_iter=200, burn_in=100)
        losses.append(posterior_loss(run.trace, truth)[0])
    assert losses[1] < losses[0]


def test_run_records_tracked_cells(rng):
    priors = MixturePriors.default(3)
    data, _, _ = simulate_contingency(rng, 2, 3, 2, 300, priors)
    run = run_mixture_chain(rng, data, priors, data.cells[:4], n_iter=30, burn_in=10, n_min=20.0, seed=5)
    assert run.trace.samples.shape == (30, 4)
    assert run.trace.names[0] == "pi_" + "_".join(str(v) for v in data.cells[0])
    assert run.trace.step_seconds.shape == (30,)
    assert np.all((run.trace.samples > 0.0) & (run.trace.samples < 1.0))


def test_contingency_csv(tmp_path):
    data = ContingencyData([[0, 2], [1, 0]], [3, 9], 2, 3, 2)
    path = tmp_path / "table.csv"
    write_contingency_csv(data, path)
    back = read_contingency_csv(path, d=3, K=2)
    np.testing.assert_array_equal(back.cells, data.cells)
    np.testing.assert_array_equal(back.counts, data.counts)


def test_contingency_validation():
    with pytest.raises(DomainError):
        ContingencyData([[0, 0]], [0], 2, 2, 1)
    with pytest.raises(DomainError):
        ContingencyData([[0, 3]], [1], 2, 3, 1)
