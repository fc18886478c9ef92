"""Digamma for the coordinate updates.

Upward recurrence ψ(x) = ψ(x + 1) − 1/x until every argument reaches 6, then the
asymptotic (de Moivre) series in 1/x².  Absolute error stays below 1e-10 on
[1e-3, 1e6].
"""

import numpy as np
from scipy.special import gammaln

from engine.errors import DomainError

_RECURRENCE_FLOOR = 6.0

# Bernoulli-number coefficients B_2n / 2n, innermost last.
_SERIES = (
    1.0 / 12.0,
    1.0 / 120.0,
    1.0 / 252.0,
    1.0 / 240.0,
    1.0 / 132.0,
    691.0 / 32760.0,
    1.0 / 12.0,
)


def digamma(x):
    """Return ψ(x) for a scalar or array of positive reals."""
    values = np.asarray(x, dtype=np.float64)
    bad = ~(values > 0.0) | ~np.isfinite(values)
    if np.any(bad):
        raise DomainError("digamma", float(values[bad].flat[0]))

    shifted = np.array(values, dtype=np.float64, copy=True, ndmin=1)
    result = np.zeros_like(shifted)
    small = shifted < _RECURRENCE_FLOOR
    while np.any(small):
        result[small] -= 1.0 / shifted[small]
        shifted[small] += 1.0
        small = shifted < _RECURRENCE_FLOOR

    inv = 1.0 / shifted
    inv2 = inv * inv
    series = _SERIES[-1]
    for coeff in reversed(_SERIES[:-1]):
        series = coeff - inv2 * series
    result += np.log(shifted) - 0.5 * inv - inv2 * series

    if values.ndim == 0:
        return float(result[0])
    return result.reshape(values.shape)


def dirichlet_expectation(counts: np.ndarray) -> np.ndarray:
    """E[log θ] under Dirichlet(counts), row-wise for 2-D input."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim == 1:
        return digamma(counts) - digamma(np.sum(counts))
    return digamma(counts) - digamma(np.sum(counts, axis=1))[:, np.newaxis]


def dirichlet_kl(counts: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """KL(Dir(counts) ‖ Dir(prior)) row-wise."""
    counts = np.atleast_2d(counts)
    prior = np.broadcast_to(prior, counts.shape)
    total = np.sum(counts, axis=1)
    return (
        gammaln(total)
        - np.sum(gammaln(counts), axis=1)
        - gammaln(np.sum(prior, axis=1))
        + np.sum(gammaln(prior), axis=1)
        + np.sum((counts - prior) * dirichlet_expectation(counts), axis=1)
    )
