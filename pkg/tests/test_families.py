import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import psi

from engine.errors import InvalidStateError
from engine.expfam import GlobalMixtureState, initialize_mixture, mixture_elbo, vi_epoch
from engine.families import (
    DiagonalGaussianFamily,
    MultinomialFamily,
    NormalGammaPosterior,
    gaussian_expectations,
    multinomial_expectations,
)
from intake.synthetic import planted_gaussian_mixture, planted_multinomial_mixture


def _fit(family, stats, epochs, seed=0):
    state, assignments = initialize_mixture(family, stats, np.random.default_rng(seed))
    for _ in range(epochs):
        state = vi_epoch(state, family, stats, assignments)
    return state, assignments


def _agreement(predicted, labels, num_components):
    """Best label agreement over the permutations of two components."""
    assert num_components == 2
    same = np.mean(predicted == labels)
    return max(same, 1.0 - same)


def test_multinomial_expectations():
    counts = np.array([[1.0, 2.0, 3.0], [4.0, 0.5, 0.5]])
    expected_theta, expected_g = multinomial_expectations(counts)
    np.testing.assert_allclose(
        expected_theta, psi(counts) - psi(counts.sum(axis=1))[:, np.newaxis], atol=1e-12
    )
    assert np.array_equal(expected_g, np.zeros(2))
    with pytest.raises(InvalidStateError):
        multinomial_expectations(np.array([[1.0, 0.0]]))


def test_multinomial_expectations_of_two_counts():
    expected_theta, _ = multinomial_expectations(np.array([2.0, 3.0]))
    oracle = psi(np.array([2.0, 3.0])) - psi(5.0)
    assert np.max(np.abs(expected_theta[0] - oracle)) <= 1e-12


def test_multinomial_prior_offset_is_eta():
    family = MultinomialFamily(3, 7, alpha=1.0, eta=0.05)
    np.testing.assert_allclose(family.prior_offset, 0.05)
    assert family.prior_strength[0] == pytest.approx(0.35)


def test_normal_gamma_expectations_against_quadrature():
    posterior = NormalGammaPosterior(
        mean=np.array([[0.7]]), kappa=np.array([2.5]), shape=np.array([3.0]), rate=np.array([[1.7]])
    )
    expected_theta, expected_g = gaussian_expectations(posterior)
    gamma = stats.gamma(a=3.0, scale=1.0 / 1.7)

    e_tau = integrate.quad(lambda t: t * gamma.pdf(t), 0, np.inf)[0]
    e_log_tau = integrate.quad(lambda t: np.log(t) * gamma.pdf(t), 0, np.inf)[0]
    # E[μ²τ | τ] = τ·m² + 1/κ
    e_mu2_tau = integrate.quad(lambda t: (t * 0.7**2 + 1.0 / 2.5) * gamma.pdf(t), 0, np.inf)[0]

    assert expected_theta[0, 0] == pytest.approx(0.7 * e_tau, rel=1e-8)
    assert expected_theta[0, 1] == pytest.approx(-0.5 * e_tau, rel=1e-8)
    g = 0.5 * e_mu2_tau - 0.5 * e_log_tau + 0.5 * np.log(2 * np.pi)
    assert expected_g[0] == pytest.approx(g, rel=1e-8)


def test_normal_gamma_rejects_invalid_parameters():
    posterior = NormalGammaPosterior(
        mean=np.zeros((1, 1)), kappa=np.ones(1), shape=np.ones(1), rate=np.array([[-1.0]])
    )
    with pytest.raises(InvalidStateError):
        gaussian_expectations(posterior)


@pytest.mark.parametrize(
    "family",
    [
        MultinomialFamily(3, 5, alpha=0.5, eta=0.2),
        DiagonalGaussianFamily(3, 2, alpha=0.5, m0=1.0, kappa0=2.0, a0=1.5, b0=0.5),
    ],
)
def test_kl_vanishes_at_the_prior(family):
    state = GlobalMixtureState.from_prior(family)
    np.testing.assert_allclose(family.kl_divergence(state.n_tilde, state.nu_tilde), 0.0, atol=1e-10)


def test_gaussian_posterior_from_prior_recovers_hyperparameters():
    family = DiagonalGaussianFamily(2, 3, alpha=1.0, m0=1.0, kappa0=2.0, a0=1.5, b0=0.5)
    state = GlobalMixtureState.from_prior(family)
    posterior = family.posterior(state.n_tilde, state.nu_tilde)
    np.testing.assert_allclose(posterior.mean, 1.0)
    np.testing.assert_allclose(posterior.kappa, 2.0)
    np.testing.assert_allclose(posterior.shape, 1.5)
    np.testing.assert_allclose(posterior.rate, 0.5)


def test_multinomial_mixture_recovers_planted_partition():
    planted = planted_multinomial_mixture(120, 40, 60, 2, np.random.default_rng(2))
    family = MultinomialFamily(2, 40, alpha=1.0, eta=0.1)
    stats_ = family.sufficient_statistics(planted.corpus.to_dense())
    _, assignments = _fit(family, stats_, epochs=50)
    assert _agreement(assignments.argmax(axis=1), planted.labels, 2) >= 0.95


def test_gaussian_mixture_recovers_separated_clusters():
    planted = planted_gaussian_mixture(200, 2, 2, np.random.default_rng(4), separation=10.0)
    family = DiagonalGaussianFamily(2, 2, alpha=1.0)
    stats_ = family.sufficient_statistics(planted.corpus.dense)
    state, assignments = _fit(family, stats_, epochs=200)
    assert _agreement(assignments.argmax(axis=1), planted.labels, 2) == 1.0


def test_gaussian_vi_is_monotone():
    planted = planted_gaussian_mixture(150, 3, 3, np.random.default_rng(8), separation=4.0)
    family = DiagonalGaussianFamily(3, 3, alpha=1.0)
    stats_ = family.sufficient_statistics(planted.corpus.dense)
    state, assignments = initialize_mixture(family, stats_, np.random.default_rng(1))
    previous = mixture_elbo(state, family, stats_, assignments)
    for _ in range(30):
        state = vi_epoch(state, family, stats_, assignments)
        current = mixture_elbo(state, family, stats_, assignments)
        assert current >= previous - 1e-9 * abs(previous)
        previous = current
