"""Concrete families: mixture of multinomials and diagonal-covariance Gaussians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from engine.errors import InvalidStateError
from engine.expfam import ModelFamily
from engine.special import digamma, dirichlet_expectation, dirichlet_kl

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def multinomial_expectations(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """E[log θ] for Dirichlet ``counts`` rows, and E[g(θ)] (absorbed, so zero)."""
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    if np.any(counts <= 0):
        raise InvalidStateError("Dirichlet counts must be strictly positive")
    return dirichlet_expectation(counts), np.zeros(counts.shape[0])


class MultinomialFamily(ModelFamily):
    """Mixture of multinomials over a vocabulary, Dirichlet(η) prior per component.

    φ(x_i, k) is the word-count vector of x_i.  With n_k = η·V and ν_k uniform the
    prior offset n_k·ν_k is η on every word, so ν̃_k are the Dirichlet counts.
    """

    def __init__(self, num_components: int, vocab_size: int, alpha: float, eta: float):
        super().__init__(num_components, alpha)
        if not eta > 0:
            raise ValueError(f"eta must be > 0, got {eta}")
        self.vocab_size = vocab_size
        self.eta = float(eta)

    @property
    def prior_strength(self) -> np.ndarray:
        return np.full(self.num_components, self.eta * self.vocab_size)

    @property
    def prior_mean(self) -> np.ndarray:
        return np.full((self.num_components, self.vocab_size), 1.0 / self.vocab_size)

    @property
    def prior_offset(self) -> np.ndarray:
        return np.full((self.num_components, self.vocab_size), self.eta)

    def sufficient_statistics(self, data) -> np.ndarray:
        counts = np.asarray(data, dtype=np.float64)
        if counts.ndim != 2 or counts.shape[1] != self.vocab_size:
            raise ValueError(f"expected count rows of width {self.vocab_size}")
        if np.any(counts < 0):
            raise ValueError("word counts must be nonnegative")
        return counts

    def log_partition(self, theta: np.ndarray) -> float:
        return float(logsumexp(theta))

    def expectations(self, n_tilde, nu_tilde):
        return multinomial_expectations(nu_tilde)

    def kl_divergence(self, n_tilde, nu_tilde):
        return dirichlet_kl(nu_tilde, np.full(self.vocab_size, self.eta))


@dataclass
class NormalGammaPosterior:
    """Per-dimension Normal-Gamma parameters for K components.

    mean and rate are (K, D); kappa and shape are (K,), shared across dimensions.
    """

    mean: np.ndarray
    kappa: np.ndarray
    shape: np.ndarray
    rate: np.ndarray

    def validate(self) -> None:
        if np.any(self.kappa <= 0):
            raise InvalidStateError("Normal-Gamma scale kappa must be > 0")
        if np.any(self.shape <= 0):
            raise InvalidStateError("Normal-Gamma shape must be > 0")
        if np.any(self.rate <= 0):
            raise InvalidStateError("Normal-Gamma rate must be > 0")


def gaussian_expectations(posterior: NormalGammaPosterior) -> tuple[np.ndarray, np.ndarray]:
    """E[θ] for θ = (μτ, −τ/2) per dimension, and E[g(θ)] summed over dimensions."""
    posterior.validate()
    shape = posterior.shape[:, np.newaxis]
    precision = shape / posterior.rate
    log_precision = digamma(np.broadcast_to(shape, posterior.rate.shape)) - np.log(posterior.rate)
    expected_theta = np.hstack([posterior.mean * precision, -0.5 * precision])
    expected_g = np.sum(
        0.5 * (1.0 / posterior.kappa[:, np.newaxis] + posterior.mean**2 * precision)
        - 0.5 * log_precision
        + _HALF_LOG_2PI,
        axis=1,
    )
    return expected_theta, expected_g


class DiagonalGaussianFamily(ModelFamily):
    """Gaussian components with diagonal covariance and a Normal-Gamma prior per dimension.

    φ(x) = (x, x²).  The prior offset n_k·ν_k is (κ0·m0, κ0·m0² + 2·b0), which makes
    ñ_k the posterior κ and lets the rate be read back as ½(ν̃₂ − ν̃₁²/ñ).
    """

    def __init__(
        self,
        num_components: int,
        dim: int,
        alpha: float,
        m0: float = 0.0,
        kappa0: float = 1.0,
        a0: float = 1.0,
        b0: float = 1.0,
    ):
        super().__init__(num_components, alpha)
        if not (kappa0 > 0 and a0 > 0 and b0 > 0):
            raise ValueError("kappa0, a0 and b0 must all be > 0")
        self.dim = dim
        self.m0 = float(m0)
        self.kappa0 = float(kappa0)
        self.a0 = float(a0)
        self.b0 = float(b0)

    @property
    def prior_strength(self) -> np.ndarray:
        return np.full(self.num_components, self.kappa0)

    @property
    def prior_mean(self) -> np.ndarray:
        row = np.concatenate(
            [
                np.full(self.dim, self.m0),
                np.full(self.dim, self.m0**2 + 2.0 * self.b0 / self.kappa0),
            ]
        )
        return np.tile(row, (self.num_components, 1))

    @property
    def prior_offset(self) -> np.ndarray:
        row = np.concatenate(
            [
                np.full(self.dim, self.kappa0 * self.m0),
                np.full(self.dim, self.kappa0 * self.m0**2 + 2.0 * self.b0),
            ]
        )
        return np.tile(row, (self.num_components, 1))

    def sufficient_statistics(self, data) -> np.ndarray:
        points = np.asarray(data, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ValueError(f"expected data rows of dimension {self.dim}")
        return np.hstack([points, points**2])

    def posterior(self, n_tilde, nu_tilde) -> NormalGammaPosterior:
        n_tilde = np.atleast_1d(np.asarray(n_tilde, dtype=np.float64))
        nu_tilde = np.atleast_2d(np.asarray(nu_tilde, dtype=np.float64))
        first, second = nu_tilde[:, : self.dim], nu_tilde[:, self.dim :]
        kappa = n_tilde
        mean = first / kappa[:, np.newaxis]
        return NormalGammaPosterior(
            mean=mean,
            kappa=kappa,
            shape=self.a0 + 0.5 * (n_tilde - self.kappa0),
            rate=0.5 * (second - first * mean),
        )

    def log_partition(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        eta1, eta2 = theta[: self.dim], theta[self.dim :]
        if np.any(eta2 >= 0):
            raise InvalidStateError("second natural parameter must be negative")
        return float(
            np.sum(-(eta1**2) / (4.0 * eta2) - 0.5 * np.log(-2.0 * eta2)) + self.dim * _HALF_LOG_2PI
        )

    def expectations(self, n_tilde, nu_tilde):
        return gaussian_expectations(self.posterior(n_tilde, nu_tilde))

    def kl_divergence(self, n_tilde, nu_tilde):
        post = self.posterior(n_tilde, nu_tilde)
        post.validate()
        shape = post.shape[:, np.newaxis]
        kl_gamma = (
            (shape - self.a0) * digamma(np.broadcast_to(shape, post.rate.shape))
            - gammaln(shape)
            + gammaln(self.a0)
            + self.a0 * (np.log(post.rate) - np.log(self.b0))
            + shape * (self.b0 - post.rate) / post.rate
        )
        ratio = self.kappa0 / post.kappa[:, np.newaxis]
        spread = self.kappa0 * (shape / post.rate) * (post.mean - self.m0) ** 2
        kl_mean = 0.5 * (ratio - 1.0 - np.log(ratio) + spread)
        return np.sum(kl_gamma + kl_mean, axis=1)
