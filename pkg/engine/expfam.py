"""Mixtures of exponential families — state, coordinate updates and the ELBO.

Shapes used throughout: ``K`` components, ``N`` data, ``S`` sufficient-statistic
dimensions.  ``stats`` is the N×S matrix of φ(x_i) rows (both bundled families
have statistics that do not depend on k) and ``assignments`` is the N×K matrix
whose rows are the dense local assignments z̃_i.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from engine.errors import (
    BookkeepingError,
    ContractViolation,
    InvalidProblemError,
    NonFiniteScoreError,
)
from engine.special import digamma

logger = logging.getLogger(__name__)

FLOOR_TOLERANCE = 1e-9
SIMPLEX_TOLERANCE = 1e-12


class ModelFamily(ABC):
    """Conjugate exponential family plugged into the mixture.

    The prior on each θ_k is p(θ_k | n_k, ν_k) ∝ exp(⟨n_k ν_k, θ_k⟩ − n_k g(θ_k)); its
    normalizer h(n_k, ν_k) cancels from every update and is never evaluated.
    """

    def __init__(self, num_components: int, alpha: float):
        if num_components < 1:
            raise ValueError(f"num_components must be >= 1, got {num_components}")
        if not alpha > 0:
            raise ValueError(f"alpha must be > 0, got {alpha}")
        self.num_components = num_components
        self.alpha = float(alpha)

    @property
    @abstractmethod
    def prior_strength(self) -> np.ndarray:
        """n_k for every component, shape (K,)."""

    @property
    @abstractmethod
    def prior_mean(self) -> np.ndarray:
        """ν_k for every component, shape (K, S)."""

    @abstractmethod
    def sufficient_statistics(self, data) -> np.ndarray:
        """φ(x_i, ·) for every datum, shape (N, S)."""

    def sufficient_statistic(self, datum, k: int) -> np.ndarray:
        """φ(x_i, k) for a single datum."""
        return self.sufficient_statistics(np.asarray(datum)[np.newaxis])[0]

    @abstractmethod
    def log_partition(self, theta: np.ndarray) -> float:
        """g(θ_k) at a natural parameter."""

    @abstractmethod
    def expectations(
        self, n_tilde: np.ndarray, nu_tilde: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """(E_q[θ_k], E_q[g(θ_k)]) for the given rows of variational parameters."""

    @abstractmethod
    def kl_divergence(self, n_tilde: np.ndarray, nu_tilde: np.ndarray) -> np.ndarray:
        """KL(q(θ_k) ‖ p(θ_k)) per component row."""

    def expected_natural_param(self, n_tilde, nu_tilde) -> np.ndarray:
        return self.expectations(np.atleast_1d(n_tilde), np.atleast_2d(nu_tilde))[0]

    def expected_log_partition(self, n_tilde, nu_tilde) -> np.ndarray:
        return self.expectations(np.atleast_1d(n_tilde), np.atleast_2d(nu_tilde))[1]

    @property
    def prior_offset(self) -> np.ndarray:
        """n_k·ν_k, the prior's contribution to ν̃_k."""
        return self.prior_strength[:, np.newaxis] * self.prior_mean


@dataclass
class GlobalMixtureState:
    """Variational globals π̃, ñ and ν̃ of a K-component mixture."""

    pi_tilde: np.ndarray
    n_tilde: np.ndarray
    nu_tilde: np.ndarray

    @classmethod
    def from_prior(cls, family: ModelFamily) -> GlobalMixtureState:
        k = family.num_components
        return cls(
            pi_tilde=np.full(k, family.alpha),
            n_tilde=family.prior_strength.astype(np.float64).copy(),
            nu_tilde=family.prior_offset.astype(np.float64).copy(),
        )

    @property
    def num_components(self) -> int:
        return self.pi_tilde.shape[0]

    def copy(self) -> GlobalMixtureState:
        return GlobalMixtureState(
            self.pi_tilde.copy(), self.n_tilde.copy(), self.nu_tilde.copy()
        )

    def assignment_mass(self, family: ModelFamily) -> tuple[float, float]:
        """Σ_k(π̃_k − α) and Σ_k(ñ_k − n_k); both equal the stored assignment mass."""
        return (
            float(np.sum(self.pi_tilde - family.alpha)),
            float(np.sum(self.n_tilde - family.prior_strength)),
        )


@dataclass(frozen=True)
class LocalAssignment:
    """Distribution z̃_i over components, dense or truncated to a topic subset."""

    weights: np.ndarray
    components: np.ndarray | None = None

    @property
    def is_dense(self) -> bool:
        return self.components is None

    @property
    def stored_mass(self) -> float:
        return 1.0 if self.is_dense else float(np.sum(self.weights))

    def to_dense(self, num_components: int) -> np.ndarray:
        if self.is_dense:
            return self.weights
        dense = np.zeros(num_components)
        dense[self.components] = self.weights
        return dense


@dataclass
class RestrictedProblem:
    """Maximize Σ_{k∈𝒦} z_k(u_k − log z_k) subject to Σ z_k = C, z ≥ 0."""

    subset: np.ndarray
    mass: float
    scores: np.ndarray
    num_components: int | None = field(default=None)

    def __post_init__(self):
        self.subset = np.asarray(self.subset, dtype=np.intp)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not self.mass > 0:
            raise InvalidProblemError(f"mass C must be > 0, got {self.mass!r}")
        if self.subset.ndim != 1 or self.subset.shape[0] < 2:
            raise InvalidProblemError(f"subset needs at least 2 components, got {self.subset}")
        if np.unique(self.subset).shape[0] != self.subset.shape[0]:
            raise InvalidProblemError(f"subset indices must be distinct, got {self.subset}")
        if self.scores.shape != self.subset.shape:
            raise InvalidProblemError("scores must align with the subset")
        if self.num_components is not None and self.subset.shape[0] > self.num_components:
            raise InvalidProblemError("subset is larger than the number of components")


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = np.exp(scores - np.max(scores))
    return shifted / np.sum(shifted)


def compute_u(
    state: GlobalMixtureState,
    family: ModelFamily,
    stat: np.ndarray,
    subset: np.ndarray | None = None,
) -> np.ndarray:
    """Scores u_{i,k} = ψ(π̃_k) + ⟨φ(x_i,k), E[θ_k]⟩ − E[g(θ_k)] over ``subset``.

    ψ(Σ_k π̃_k) is left out; it is a common shift and cancels in the softmax.
    """
    if subset is None:
        subset = np.arange(state.num_components)
    subset = np.asarray(subset, dtype=np.intp)
    if subset.shape[0] == 0:
        raise ContractViolation("compute_u needs a nonempty subset")
    expected_theta, expected_g = family.expectations(
        state.n_tilde[subset], state.nu_tilde[subset]
    )
    prior_term = digamma(state.pi_tilde[subset])
    data_term = expected_theta @ stat
    u = prior_term + data_term - expected_g
    if not np.all(np.isfinite(u)):
        _raise_non_finite(subset, prior_term, data_term, expected_g)
    return u


def _raise_non_finite(subset, prior_term, data_term, expected_g) -> None:
    for pos, k in enumerate(subset):
        for term, values in (
            ("psi(pi_tilde)", prior_term),
            ("<phi, E[theta]>", data_term),
            ("E[g(theta)]", expected_g),
        ):
            if not np.isfinite(values[pos]):
                raise NonFiniteScoreError(int(k), term)
    raise NonFiniteScoreError(int(subset[0]), "sum")


def update_z_full(u: np.ndarray) -> LocalAssignment:
    """Dense softmax of the scores (max-subtracted)."""
    return LocalAssignment(weights=_softmax(np.asarray(u, dtype=np.float64)))


def update_z_subset(problem: RestrictedProblem) -> np.ndarray:
    """Closed-form optimum C·softmax(u) of the restricted problem."""
    weights = _softmax(problem.scores)
    if problem.mass != 1.0:
        weights = problem.mass * weights
    return weights


def restricted_elbo(problem: RestrictedProblem, weights: np.ndarray) -> float:
    """Σ_{k∈𝒦} z_k(u_k − log z_k) with 0·log 0 := 0."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != problem.scores.shape:
        raise ContractViolation("weights must align with the subset")
    if np.any(weights < 0):
        raise ContractViolation(f"weights must be nonnegative, got {weights}")
    if abs(np.sum(weights) - problem.mass) > 1e-9 * max(1.0, problem.mass):
        raise ContractViolation(
            f"weights sum to {np.sum(weights)!r}, expected mass {problem.mass!r}"
        )
    positive = weights > 0
    entropy = -np.sum(weights[positive] * np.log(weights[positive]))
    return float(np.sum(weights[positive] * problem.scores[positive]) + entropy)


def update_pi(
    state: GlobalMixtureState, components, delta, alpha: float
) -> GlobalMixtureState:
    """π̃_k += z̃*_{ik} − z̃_{ik} for the given components."""
    components = np.atleast_1d(np.asarray(components, dtype=np.intp))
    state.pi_tilde[components] += delta
    _check_floor("pi_tilde", state.pi_tilde, components, np.full(components.shape, alpha))
    return state


def update_theta(
    state: GlobalMixtureState, family: ModelFamily, components, stat: np.ndarray, delta
) -> GlobalMixtureState:
    """ñ_k += Δ and ν̃_k += Δ·φ(x_i, k) for the given components."""
    components = np.atleast_1d(np.asarray(components, dtype=np.intp))
    delta = np.atleast_1d(np.asarray(delta, dtype=np.float64))
    state.n_tilde[components] += delta
    state.nu_tilde[components] += delta[:, np.newaxis] * stat[np.newaxis, :]
    _check_floor("n_tilde", state.n_tilde, components, family.prior_strength[components])
    return state


def _check_floor(name: str, values: np.ndarray, components: np.ndarray, floor: np.ndarray):
    below = values[components] < floor - FLOOR_TOLERANCE
    if np.any(below):
        pos = int(np.flatnonzero(below)[0])
        k = int(components[pos])
        raise BookkeepingError(name, k, float(values[k]), float(floor[pos]))


def batch_globals(
    family: ModelFamily, stats: np.ndarray, assignments: np.ndarray
) -> GlobalMixtureState:
    """π̃, ñ and ν̃ recomputed from every assignment at once."""
    component_mass = np.sum(assignments, axis=0)
    return GlobalMixtureState(
        pi_tilde=family.alpha + component_mass,
        n_tilde=family.prior_strength + component_mass,
        nu_tilde=family.prior_offset + assignments.T @ stats,
    )


def initialize_mixture(
    family: ModelFamily, stats: np.ndarray, rng: np.random.Generator
) -> tuple[GlobalMixtureState, np.ndarray]:
    """Symmetric Dirichlet(1) assignment rows, then one batch pass for the globals."""
    k = family.num_components
    if k == 1:
        assignments = np.ones((stats.shape[0], 1))
    else:
        assignments = rng.dirichlet(np.ones(k), size=stats.shape[0])
    return batch_globals(family, stats, assignments), assignments


def score_matrix(state: GlobalMixtureState, family: ModelFamily, stats: np.ndarray) -> np.ndarray:
    """u_{i,k} for every datum and component, shape (N, K)."""
    expected_theta, expected_g = family.expectations(state.n_tilde, state.nu_tilde)
    return digamma(state.pi_tilde)[np.newaxis, :] + stats @ expected_theta.T - expected_g


def mixture_elbo(
    state: GlobalMixtureState, family: ModelFamily, stats: np.ndarray, assignments: np.ndarray
) -> float:
    """Full ELBO of the mixture under the current variational distribution."""
    pi_total = np.sum(state.pi_tilde)
    local = 0.0
    if stats.shape[0]:
        u = score_matrix(state, family, stats) - digamma(pi_total)
        positive = assignments > 0
        entropy = -np.sum(assignments[positive] * np.log(assignments[positive]))
        local = float(np.sum(assignments * u) + entropy)
    k = state.num_components
    kl_pi = (
        gammaln(pi_total)
        - np.sum(gammaln(state.pi_tilde))
        - gammaln(k * family.alpha)
        + k * gammaln(family.alpha)
        + np.sum((state.pi_tilde - family.alpha) * (digamma(state.pi_tilde) - digamma(pi_total)))
    )
    kl_theta = np.sum(family.kl_divergence(state.n_tilde, state.nu_tilde))
    return float(local - kl_pi - kl_theta)


def vi_epoch(
    state: GlobalMixtureState, family: ModelFamily, stats: np.ndarray, assignments: np.ndarray
) -> GlobalMixtureState:
    """Every z̃_i from the current globals, then π̃ and θ̃ in batch.

    ``assignments`` is overwritten in place; the new globals are returned.
    """
    if stats.shape[0]:
        u = score_matrix(state, family, stats)
        shifted = np.exp(u - np.max(u, axis=1, keepdims=True))
        assignments[:] = shifted / np.sum(shifted, axis=1, keepdims=True)
    return batch_globals(family, stats, assignments)


def svi_step(
    state: GlobalMixtureState,
    family: ModelFamily,
    stats: np.ndarray,
    assignments: np.ndarray,
    i: int,
) -> GlobalMixtureState:
    """Replace z̃_i by its optimum and push the change into every component."""
    new = update_z_full(compute_u(state, family, stats[i])).weights
    delta = new - assignments[i]
    components = np.arange(state.num_components)
    update_pi(state, components, delta, family.alpha)
    update_theta(state, family, components, stats[i], delta)
    assignments[i] = new
    return state


def esvi_step(
    state: GlobalMixtureState,
    family: ModelFamily,
    stats: np.ndarray,
    assignments: np.ndarray,
    i: int,
    subset,
) -> GlobalMixtureState:
    """Redistribute z̃_i's mass on ``subset`` optimally, then update those components only."""
    subset = np.asarray(subset, dtype=np.intp)
    k = state.num_components
    if subset.shape[0] == k and np.array_equal(np.sort(subset), np.arange(k)):
        mass = 1.0
    else:
        mass = float(np.sum(assignments[i, subset]))
    if mass <= 0.0:
        return state
    problem = RestrictedProblem(
        subset=subset,
        mass=mass,
        scores=compute_u(state, family, stats[i], subset),
        num_components=k,
    )
    new = update_z_subset(problem)
    delta = new - assignments[i, subset]
    update_pi(state, subset, delta, family.alpha)
    update_theta(state, family, subset, stats[i], delta)
    assignments[i, subset] = new
    return state


def sample_subset(rng: np.random.Generator, num_components: int, size: int = 2) -> np.ndarray:
    """Components to update together, drawn without replacement."""
    return rng.choice(num_components, size=size, replace=False)
