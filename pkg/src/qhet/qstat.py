"""Cochran-type Q statistics with arbitrary positive weights."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DomainError, InsufficientStudiesError
from .smd import EffectSet


class WeightScheme(enum.Enum):
    INVERSE_VARIANCE = "iv"   # w_i = 1 / v2_i, conditional variances (fixed-effect)
    EFFECTIVE_SIZE = "ess"    # w_i = n_tilde_i, constant in the data

    def weights(self, effects: EffectSet) -> np.ndarray:
        if self is WeightScheme.INVERSE_VARIANCE:
            return 1.0 / effects.v2
        return effects.n_tilde.copy()


@dataclass(frozen=True)
class QValue:
    q: float
    weights: np.ndarray
    weighted_mean: float


@njit(cache=True)
def _q(theta, w):
    W = w.sum()
    mean = (w * theta).sum() / W
    d = theta - mean
    return (w * d * d).sum(), mean


@njit(cache=True)
def _q_gen(theta, v2, tau2):
    # generalized Q with weights 1/(v2 + tau2)
    w = 1.0 / (v2 + tau2)
    return _q(theta, w)[0]


def _check(effects, weights):
    effects = np.asarray(effects, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if effects.ndim != 1 or effects.shape != weights.shape:
        raise DomainError("effects and weights must be 1-d and of equal length")
    if effects.size < 2:
        raise InsufficientStudiesError(f"need at least 2 studies, got {effects.size}")
    if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
        raise DomainError("weights must be positive and finite")
    return np.ascontiguousarray(effects), np.ascontiguousarray(weights)


def q_weighted(effects, weights) -> QValue:
    """``Q = sum w_i (theta_i - theta_w)^2`` in the two-pass form."""
    effects, weights = _check(effects, weights)
    q, mean = _q(effects, weights)
    return QValue(q=float(q), weights=weights, weighted_mean=float(mean))


def centering_matrix(weights) -> np.ndarray:
    """Matrix ``A = W (diag(q) - q q^T)`` such that ``Q = Theta^T A Theta``."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise DomainError("weights must be positive")
    W = weights.sum()
    q = weights / W
    return W * (np.diag(q) - np.outer(q, q))


def expected_q(weights, sigma2, tau2: float) -> float:
    """First moment ``W sum q_i (1 - q_i) (sigma2_i + tau2)`` of Q under the REM."""
    weights = np.asarray(weights, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if weights.shape != sigma2.shape:
        raise DomainError("weights and sigma2 must have equal length")
    if np.any(weights <= 0) or np.any(sigma2 < 0) or tau2 < 0:
        raise DomainError("need weights > 0, sigma2 >= 0, tau2 >= 0")
    W = weights.sum()
    q = weights / W
    return float(W * np.sum(q * (1 - q) * (sigma2 + tau2)))


def q_statistics(effects: EffectSet) -> dict:
    """Both Q statistics of a study set: ``{"Q_IV": QValue, "Q_F": QValue}``."""
    return {
        "Q_IV": q_weighted(effects.g, WeightScheme.INVERSE_VARIANCE.weights(effects)),
        "Q_F": q_weighted(effects.g, WeightScheme.EFFECTIVE_SIZE.weights(effects)),
    }
