"""Least-squares Monte Carlo conditional expectations.

Conditional expectations given the path history are approximated by linear
regression of pathwise targets on polynomial features of a Markov state
snapshot, fitted per time node on the common-random-number ensemble.
Degree 1 uses [1, X]; degree 2 adds the squared coordinates [1, X, X*X]
(diagonal quadratic -- enough curvature for the mildly nonlinear control
maps shipped here without the full cross-term blowup).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

# Relative ridge applied when the normal equations are rank deficient.
RIDGE_FALLBACK = 1e-10


def build_features(states, degree):
    """Feature table for an ensemble snapshot or trajectory.

    ``states`` has shape (..., n); the output appends a leading constant,
    giving (..., 1 + n) for degree 1 and (..., 1 + 2n) for degree 2.
    """
    states = np.asarray(states, dtype=float)
    ones = np.ones(states.shape[:-1] + (1,))
    if degree == 1:
        return np.concatenate([ones, states], axis=-1)
    if degree == 2:
        return np.concatenate([ones, states, states * states], axis=-1)
    raise ConfigurationError(f"regression degree must be 1 or 2, got {degree}")


def fit_conditional(features, targets):
    """Regress targets (N, d) on features (N, F); returns (fitted, beta, ridge).

    Solves the normal equations with a Cholesky factorization; if that fails
    or the system is numerically singular, refits with the documented ridge
    ``RIDGE_FALLBACK * trace(F^T F) / n_features`` added to the diagonal.
    """
    A = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    G = A.T @ A
    b = A.T @ y
    ridge = 0.0
    try:
        beta = np.linalg.solve(G, b)
        if not np.all(np.isfinite(beta)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        ridge = RIDGE_FALLBACK * np.trace(G) / G.shape[0]
        beta = np.linalg.solve(G + ridge * np.eye(G.shape[0]), b)
    return A @ beta, beta, ridge
