import itertools
import math

import numpy as np
import pytest
from scipy.special import logsumexp

from ppgan.accountant import (INFINITE_LOSS, DiscreteMechanism, MechanismStep, MomentLedger,
                              accumulate, add_moments, calibrate_sigma_for_budget,
                              default_ledger, delta_for_eps, discrete_moments, eps_for_delta,
                              eps_for_delta_with_order, log_mgf_discrete,
                              log_mgf_subsampled_gaussian, privacy_loss, randomized_response)
from ppgan.dp import strong_composition_baseline
from ppgan.errors import ParameterError

THREE_OUTCOMES = DiscreteMechanism(("a", "b", "c"), (0.5, 0.3, 0.2), (0.3, 0.3, 0.4))


def brute_log_mgf(prob_d, prob_d_prime, lam):
    return math.log(sum(p * (p / pp) ** lam for p, pp in zip(prob_d, prob_d_prime) if p > 0))


def brute_eps(betas, grid, delta):
    return min((b + math.log(1 / delta)) / lam for b, lam in zip(betas, grid))


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 4.0])
def test_full_batch_gaussian_matches_closed_form(sigma):
    for lam in range(1, 17):
        beta = log_mgf_subsampled_gaussian(MechanismStep(1.0, sigma), lam)
        assert beta == pytest.approx(lam * (lam + 1) / (2 * sigma ** 2), abs=1e-8)


def test_privacy_loss_of_randomized_response():
    mech = randomized_response(0.75)
    assert privacy_loss(mech, 1) == pytest.approx(math.log(3))
    assert privacy_loss(mech, 0) == pytest.approx(-math.log(3))


def test_privacy_loss_infinite_when_impossible_under_neighbour():
    mech = DiscreteMechanism((0, 1), (0.5, 0.5), (1.0, 0.0))
    assert privacy_loss(mech, 1) is INFINITE_LOSS
    assert log_mgf_discrete(mech, 1) is INFINITE_LOSS
    ledger = add_moments(default_ledger(), discrete_moments(mech, default_ledger().lambda_grid))
    assert ledger.distinguishing
    assert eps_for_delta(ledger, 1e-5) == math.inf
    assert delta_for_eps(ledger, 1.0) == 1.0


@pytest.mark.parametrize("mech", [randomized_response(0.6), randomized_response(0.75),
                                  randomized_response(0.9), THREE_OUTCOMES])
def test_discrete_moments_match_enumeration(mech):
    grid = default_ledger().lambda_grid
    betas = discrete_moments(mech, grid)
    for lam, beta in zip(grid, betas):
        expected = max(brute_log_mgf(mech.prob_d, mech.prob_d_prime, lam),
                       brute_log_mgf(mech.prob_d_prime, mech.prob_d, lam), 0.0)
        assert beta == pytest.approx(expected, rel=1e-12, abs=1e-9)

    ledger = add_moments(default_ledger(), betas, times=3)
    assert eps_for_delta(ledger, 1e-5) == pytest.approx(brute_eps(3 * betas, grid, 1e-5), abs=1e-9)


@pytest.mark.parametrize("mech", [randomized_response(0.6), randomized_response(0.9), THREE_OUTCOMES])
def test_tail_bound_satisfies_dp_definition(mech):
    ledger = add_moments(default_ledger(), discrete_moments(mech, default_ledger().lambda_grid))
    delta = 1e-5
    eps = eps_for_delta(ledger, delta)
    n = len(mech.outcomes)
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            p = sum(mech.prob_d[i] for i in subset)
            pp = sum(mech.prob_d_prime[i] for i in subset)
            assert p <= math.exp(eps) * pp + delta
            assert pp <= math.exp(eps) * p + delta


def test_log_mgf_rejects_negative_order():
    with pytest.raises(ParameterError):
        log_mgf_discrete(randomized_response(0.6), -1)
    with pytest.raises(ParameterError):
        log_mgf_subsampled_gaussian(MechanismStep(0.1, 1.0), 0)


@pytest.mark.parametrize("q, sigma", [(0.0, 1.0), (1.2, 1.0), (0.1, 0.0)])
def test_mechanism_step_domain(q, sigma):
    with pytest.raises(ParameterError):
        MechanismStep(q, sigma)


def test_accountant_beats_strong_composition():
    step, steps, delta = MechanismStep(0.01, 4.0), 10_000, 1e-5
    ledger = accumulate(default_ledger(), step, steps)
    assert eps_for_delta(ledger, delta) < strong_composition_baseline(4.0, 0.01, steps, delta)


def test_empty_ledger_epsilon():
    assert eps_for_delta(default_ledger(32), 1e-5) == pytest.approx(math.log(1e5) / 32)
    empty = MomentLedger((), np.zeros(0))
    assert eps_for_delta(empty, 1e-5) == 0.0
    assert delta_for_eps(empty, 1.0) == 0.0


def test_eps_for_delta_rejects_bad_delta():
    with pytest.raises(ParameterError):
        eps_for_delta(default_ledger(), 1.0)


def test_ledger_grows_with_steps_and_stays_convex():
    step = MechanismStep(0.05, 1.5)
    one = accumulate(default_ledger(), step)
    ten = accumulate(one, step, 9)
    assert ten.steps == 10
    assert np.all(ten.beta >= one.beta)
    np.testing.assert_allclose(ten.beta, 10 * one.beta, rtol=1e-12)
    assert one.is_convex() and ten.is_convex()
    assert eps_for_delta(ten, 1e-5) > eps_for_delta(one, 1e-5)


def test_subsampled_moments_shrink_with_q_and_grow_with_noise_drop():
    low_q = log_mgf_subsampled_gaussian(MechanismStep(0.01, 2.0), 4)
    high_q = log_mgf_subsampled_gaussian(MechanismStep(0.1, 2.0), 4)
    less_noise = log_mgf_subsampled_gaussian(MechanismStep(0.1, 1.0), 4)
    assert 0 <= low_q < high_q < less_noise


def test_delta_for_eps_inverts_eps_for_delta():
    ledger = accumulate(default_ledger(), MechanismStep(0.02, 1.0), 500)
    eps, order = eps_for_delta_with_order(ledger, 1e-5)
    assert order in ledger.lambda_grid
    assert delta_for_eps(ledger, eps) <= 1e-5 * (1 + 1e-9)


def test_snapshot_round_trip():
    ledger = accumulate(default_ledger(8), MechanismStep(0.03, 1.1), 7)
    back = MomentLedger.from_snapshot(ledger.snapshot())
    assert back.lambda_grid == ledger.lambda_grid
    assert np.array_equal(back.beta, ledger.beta)
    assert (back.steps, back.distinguishing) == (7, False)


def test_calibrate_sigma_for_budget_is_tight():
    epsilon, delta, q, steps = 2.0, 1e-5, 0.05, 100
    sigma = calibrate_sigma_for_budget(epsilon, delta, q, steps, rel_tol=1e-3)

    def spent(s):
        return eps_for_delta(accumulate(default_ledger(), MechanismStep(q, s), steps), delta)

    assert spent(sigma) <= epsilon
    assert spent(sigma * 0.995) > epsilon
    assert calibrate_sigma_for_budget(math.inf, delta, q, steps) == 0.0


def riemann_log_mgf(q, sigma, lam, points=1_000_000):
    z = np.linspace(-40 * sigma, 40 * sigma, points)
    log_dz = math.log(z[1] - z[0])
    log_base = -0.5 * (z / sigma) ** 2 - math.log(sigma * math.sqrt(2 * math.pi))
    log_shifted = -0.5 * ((z - 1) / sigma) ** 2 - math.log(sigma * math.sqrt(2 * math.pi))
    log_mix = np.logaddexp(math.log1p(-q) + log_base, math.log(q) + log_shifted)
    toward_mixture = logsumexp((lam + 1) * log_mix - lam * log_base) + log_dz
    toward_base = logsumexp((lam + 1) * log_base - lam * log_mix) + log_dz
    return max(toward_mixture, toward_base, 0.0)


@pytest.mark.parametrize("q, sigma, lam", [(0.5, 2.0, 4), (0.1, 1.0, 8), (0.01, 4.0, 16)])
def test_subsampled_gaussian_matches_riemann_sum(q, sigma, lam):
    beta = log_mgf_subsampled_gaussian(MechanismStep(q, sigma), lam)
    assert beta == pytest.approx(riemann_log_mgf(q, sigma, lam), abs=1e-6)


def test_subsampled_moments_vanish_as_q_goes_to_zero():
    betas = [log_mgf_subsampled_gaussian(MechanismStep(q, 1.0), 4) for q in (1e-1, 1e-2, 1e-3)]
    assert betas[0] > betas[1] > betas[2] > 0
    for lam in (1, 4, 16):
        assert log_mgf_subsampled_gaussian(MechanismStep(1e-9, 1.0), lam) == pytest.approx(0.0, abs=1e-9)


def composed_tables(mech, k):
    """Outcome probabilities of k independent runs, enumerated sequence by sequence."""
    prob_d, prob_d_prime = [], []
    for seq in itertools.product(range(len(mech.outcomes)), repeat=k):
        prob_d.append(math.prod(mech.prob_d[i] for i in seq))
        prob_d_prime.append(math.prod(mech.prob_d_prime[i] for i in seq))
    return prob_d, prob_d_prime


def brute_delta(prob_d, prob_d_prime, grid, epsilon):
    best = math.inf
    for lam in grid:
        forward = logsumexp([math.log(p) + lam * (math.log(p) - math.log(pp))
                             for p, pp in zip(prob_d, prob_d_prime)])
        backward = logsumexp([math.log(pp) + lam * (math.log(pp) - math.log(p))
                              for p, pp in zip(prob_d, prob_d_prime)])
        best = min(best, max(forward, backward, 0.0) - lam * epsilon)
    return math.exp(min(best, 0.0))


@pytest.mark.parametrize("mech", [randomized_response(0.6), randomized_response(0.75),
                                  randomized_response(0.9), THREE_OUTCOMES])
@pytest.mark.parametrize("epsilon", [0.5, 2.0, 5.0])
def test_delta_for_eps_matches_exhaustive_composition(mech, epsilon):
    k = 4
    grid = default_ledger().lambda_grid
    ledger = add_moments(default_ledger(), discrete_moments(mech, grid), times=k)
    prob_d, prob_d_prime = composed_tables(mech, k)
    delta = delta_for_eps(ledger, epsilon)
    assert delta == pytest.approx(brute_delta(prob_d, prob_d_prime, grid, epsilon), abs=1e-9)

    # the bound covers the exact privacy profile of the composed mechanism
    for p_table, q_table in ((prob_d, prob_d_prime), (prob_d_prime, prob_d)):
        exact = sum(max(0.0, p - math.exp(epsilon) * pq) for p, pq in zip(p_table, q_table))
        assert exact <= delta + 1e-12


SIGMAS = [0.8, 1.5, 3.0]
QS = [0.01, 0.05, 0.2]
STEP_COUNTS = [1, 10, 100]


def spent(q, sigma, steps):
    return eps_for_delta(accumulate(default_ledger(), MechanismStep(q, sigma), steps), 1e-5)


@pytest.mark.parametrize("q", QS)
@pytest.mark.parametrize("steps", STEP_COUNTS)
def test_epsilon_nonincreasing_in_sigma(q, steps):
    values = [spent(q, sigma, steps) for sigma in SIGMAS]
    assert all(a >= b - 1e-9 for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("sigma", SIGMAS)
@pytest.mark.parametrize("steps", STEP_COUNTS)
def test_epsilon_nondecreasing_in_q(sigma, steps):
    values = [spent(q, sigma, steps) for q in QS]
    assert all(a <= b + 1e-9 for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("sigma", SIGMAS)
@pytest.mark.parametrize("q", QS)
def test_epsilon_nondecreasing_in_steps(sigma, q):
    values = [spent(q, sigma, steps) for steps in STEP_COUNTS]
    assert all(a <= b + 1e-9 for a, b in zip(values, values[1:]))
