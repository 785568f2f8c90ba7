"""Study-level standardized mean differences (Hedges's g).

Everything here is a pure function of its arguments. Random draws take an
explicit :class:`numpy.random.Generator`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit
from scipy.special import gammaln

from .errors import DegenerateStudyError, DomainError, InsufficientStudiesError

#: Floor applied to plug-in unconditional variances.
VAR_FLOOR = 1e-10


@njit(cache=True)
def _j(m):
    return math.exp(math.lgamma(m / 2.0) - math.lgamma((m - 1.0) / 2.0)) / math.sqrt(m / 2.0)


@njit(cache=True)
def _var_cond(g, ntilde, m):
    j = _j(m)
    return 1.0 / ntilde + (1.0 - (m - 2.0) / (m * j * j)) * g * g


@njit(cache=True)
def _var_uncond(delta, tau2, m, ntilde):
    j = _j(m)
    s2 = delta * delta + tau2
    v = j * j * m * (1.0 + ntilde * s2) / ((m - 2.0) * ntilde) - s2
    return v if v > VAR_FLOOR else VAR_FLOOR


@njit(cache=True)
def _inv_sqrt_chi_moment(m, k):
    # E[(V/m)^(-k/2)] for V ~ chi2_m, finite for m > k
    return math.exp(0.5 * k * math.log(m / 2.0) + math.lgamma((m - k) / 2.0)
                    - math.lgamma(m / 2.0))


@njit(cache=True)
def _cumulant4(delta, tau2, m, ntilde):
    if m <= 4.0:
        return 0.0
    c = _j(m) / math.sqrt(ntilde)
    mu = math.sqrt(ntilde) * delta
    s2 = 1.0 + ntilde * tau2
    e1 = c * mu * _inv_sqrt_chi_moment(m, 1.0)
    e2 = c**2 * (mu * mu + s2) * _inv_sqrt_chi_moment(m, 2.0)
    e3 = c**3 * (mu**3 + 3.0 * mu * s2) * _inv_sqrt_chi_moment(m, 3.0)
    e4 = c**4 * (mu**4 + 6.0 * mu * mu * s2 + 3.0 * s2 * s2) * _inv_sqrt_chi_moment(m, 4.0)
    var = e2 - e1 * e1
    mu4 = e4 - 4.0 * e1 * e3 + 6.0 * e1 * e1 * e2 - 3.0 * e1**4
    return mu4 - 3.0 * var * var


def bias_correction_j(m):
    """Small-sample bias correction factor J(m) for Hedges's g.

    ``J(m) = Gamma(m/2) / (sqrt(m/2) * Gamma((m-1)/2))``, evaluated through
    log-gamma so that large ``m`` does not overflow. Accepts scalars or arrays.
    """
    m_arr = np.asarray(m, dtype=float)
    if np.any(m_arr < 2):
        raise DomainError(f"J(m) requires m >= 2, got {m}")
    out = np.exp(gammaln(m_arr / 2) - gammaln((m_arr - 1) / 2)) / np.sqrt(m_arr / 2)
    return float(out) if out.ndim == 0 else out


def effective_sample_size(n_t, n_c):
    """Effective sample size ``n_t * n_c / (n_t + n_c)``."""
    n_t = np.asarray(n_t, dtype=float)
    n_c = np.asarray(n_c, dtype=float)
    if np.any(n_t < 1) or np.any(n_c < 1):
        raise DomainError("arm sizes must be at least 1")
    out = n_t * n_c / (n_t + n_c)
    return float(out) if out.ndim == 0 else out


def pooled_sd(n_t, sd_t, n_c, sd_c):
    """Pooled standard deviation of two arms with the usual ``m = n_t + n_c - 2`` divisor."""
    m = n_t + n_c - 2
    return math.sqrt(((n_t - 1) * sd_t**2 + (n_c - 1) * sd_c**2) / m)


def var_g_conditional(g, n_t, n_c):
    """Unbiased estimate of Var(g | delta_i).

    ``(n_t + n_c)/(n_t n_c) + (1 - (m - 2)/(m J(m)^2)) g^2`` with
    ``m = n_t + n_c - 2``; needs ``m >= 3``.
    """
    g = np.asarray(g, dtype=float)
    n_t = np.asarray(n_t, dtype=float)
    n_c = np.asarray(n_c, dtype=float)
    m = n_t + n_c - 2
    if np.any(m < 3):
        raise DomainError("conditional variance of g requires n_t + n_c - 2 >= 3")
    j = bias_correction_j(m)
    out = (n_t + n_c) / (n_t * n_c) + (1 - (m - 2) / (m * j**2)) * g**2
    return float(out) if out.ndim == 0 else out


def var_g_unconditional(delta, tau2, m, n_tilde):
    """Expected conditional variance of g when delta_i ~ N(delta, tau2).

    Derived from the first two moments of the noncentral t; values below
    :data:`VAR_FLOOR` are floored there.
    """
    delta = np.asarray(delta, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    m = np.asarray(m, dtype=float)
    n_tilde = np.asarray(n_tilde, dtype=float)
    if np.any(m <= 2):
        raise DomainError("unconditional variance of g requires m > 2")
    if np.any(tau2 < 0) or np.any(n_tilde <= 0):
        raise DomainError("need tau2 >= 0 and n_tilde > 0")
    j = bias_correction_j(m)
    s2 = delta**2 + tau2
    out = j**2 * m * (1 + n_tilde * s2) / ((m - 2) * n_tilde) - s2
    out = np.maximum(out, VAR_FLOOR)
    return float(out) if out.ndim == 0 else out


def g_fourth_cumulant(delta: float, tau2: float, m: float, n_tilde: float) -> float:
    """Fourth cumulant of g when delta_i ~ N(delta, tau2).

    g is ``J(m) / sqrt(n_tilde)`` times ``U / sqrt(V / m)`` with
    ``U ~ N(sqrt(n_tilde) delta, 1 + n_tilde tau2)``; raw moments follow from
    the inverse chi moments. Returns 0 for ``m <= 4``, where it is infinite.
    """
    if tau2 < 0 or n_tilde <= 0:
        raise DomainError("need tau2 >= 0 and n_tilde > 0")
    return _cumulant4(float(delta), float(tau2), float(m), float(n_tilde))


def sample_g(rng: np.random.Generator, m, n_tilde, delta_i, size=None):
    """Draw Hedges's g from its scaled noncentral t distribution.

    ``g = J(m) T / sqrt(n_tilde)`` with ``T ~ t_m(sqrt(n_tilde) delta_i)``,
    generated as ``(Z + gamma) / sqrt(V / m)``. Arguments broadcast against
    ``size``.
    """
    m = np.asarray(m, dtype=float)
    n_tilde = np.asarray(n_tilde, dtype=float)
    delta_i = np.asarray(delta_i, dtype=float)
    if np.any(m < 3):
        raise DomainError("sampling g requires m >= 3")
    if size is None:
        size = np.broadcast_shapes(m.shape, n_tilde.shape, delta_i.shape)
    z = rng.standard_normal(size)
    v = rng.chisquare(np.broadcast_to(m, size))
    t = (z + np.sqrt(n_tilde) * delta_i) / np.sqrt(v / m)
    out = bias_correction_j(m) * t / np.sqrt(n_tilde)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class StudySummary:
    """One study: raw two-arm summaries or a precomputed ``(g, v2)`` pair."""

    n_t: int
    n_c: int
    mean_t: Optional[float] = None
    mean_c: Optional[float] = None
    sd_pooled: Optional[float] = None
    g: Optional[float] = None
    v2: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        if self.n_t < 2 or self.n_c < 2:
            raise DomainError(f"study {self.label!r}: each arm needs at least 2 subjects")
        raw = (self.mean_t, self.mean_c, self.sd_pooled)
        pre = (self.g, self.v2)
        has_raw = all(x is not None for x in raw)
        has_pre = all(x is not None for x in pre)
        if has_raw == has_pre or (not has_raw and any(x is not None for x in raw)):
            raise DomainError(
                f"study {self.label!r}: give either (mean_t, mean_c, sd_pooled) or (g, v2)"
            )
        if has_pre and self.v2 < 0:
            raise DomainError(f"study {self.label!r}: v2 must be nonnegative")
        if has_raw and self.sd_pooled < 0:
            raise DomainError(f"study {self.label!r}: sd_pooled must be nonnegative")

    @property
    def is_raw(self) -> bool:
        return self.sd_pooled is not None


@dataclass(frozen=True)
class EffectEstimate:
    g: float
    v2_cond: float
    n_t: float
    n_c: float
    n_tilde: float
    m: float
    f: float
    label: str = ""


def hedges_g(study: StudySummary) -> EffectEstimate:
    """Hedges's g and its conditional variance for one study.

    Precomputed ``(g, v2)`` pairs pass through with the metadata filled in.
    """
    n_t, n_c = study.n_t, study.n_c
    m = n_t + n_c - 2
    n_tilde = effective_sample_size(n_t, n_c)
    f = n_c / (n_t + n_c)
    if study.is_raw:
        if study.sd_pooled == 0:
            raise DegenerateStudyError(f"study {study.label!r}: pooled SD is zero")
        g = bias_correction_j(m) * (study.mean_t - study.mean_c) / study.sd_pooled
        v2 = var_g_conditional(g, n_t, n_c)
    else:
        g, v2 = float(study.g), float(study.v2)
    return EffectEstimate(g=g, v2_cond=v2, n_t=n_t, n_c=n_c, n_tilde=n_tilde, m=m, f=f,
                          label=study.label)


@dataclass(frozen=True)
class EffectSet:
    """Column-oriented view of K effect estimates, the input to every estimator."""

    g: np.ndarray
    v2: np.ndarray
    n_tilde: np.ndarray
    m: np.ndarray
    labels: tuple = field(default=())

    def __post_init__(self):
        arrays = [np.ascontiguousarray(np.asarray(a, dtype=float))
                  for a in (self.g, self.v2, self.n_tilde, self.m)]
        shapes = {a.shape for a in arrays}
        if len(shapes) != 1 or arrays[0].ndim != 1:
            raise DomainError("g, v2, n_tilde and m must be 1-d arrays of equal length")
        if arrays[0].size < 2:
            raise InsufficientStudiesError(f"need at least 2 studies, got {arrays[0].size}")
        for name, a in zip(("g", "v2", "n_tilde", "m"), arrays):
            object.__setattr__(self, name, a)
        if np.any(self.v2 <= 0):
            raise DomainError("all conditional variances must be positive")
        if np.any(self.n_tilde <= 0):
            raise DomainError("all effective sample sizes must be positive")

    @property
    def k(self) -> int:
        return self.g.size

    @classmethod
    def from_estimates(cls, estimates: Iterable[EffectEstimate]) -> "EffectSet":
        est = list(estimates)
        if len(est) < 2:
            raise InsufficientStudiesError(f"need at least 2 studies, got {len(est)}")
        return cls(
            g=np.array([e.g for e in est]),
            v2=np.array([e.v2_cond for e in est]),
            n_tilde=np.array([e.n_tilde for e in est]),
            m=np.array([e.m for e in est]),
            labels=tuple(e.label for e in est),
        )

    @classmethod
    def from_studies(cls, studies: Sequence[StudySummary]) -> "EffectSet":
        return cls.from_estimates(hedges_g(s) for s in studies)

    def shifted(self, c: float) -> "EffectSet":
        """Same studies with every g moved by ``c`` (variances untouched)."""
        return EffectSet(self.g + c, self.v2, self.n_tilde, self.m, self.labels)
