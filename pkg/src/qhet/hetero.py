"""Tests for heterogeneity: H0 tau^2 <= tau0^2 against tau^2 > tau0^2.

With ``tau0_sq = 0`` this is the usual test of homogeneity.
"""

from __future__ import annotations

from dataclasses import dataclass

from scipy.special import chdtr

from .errors import DomainError, UsageError
from .qstat import WeightScheme, q_weighted
from .quadform import (
    DEFAULT_EPS,
    ApproxMethod,
    VarianceMode,
    bj_cdf,
    kdb_df,
    qf_cdf,
    qf_gamma_cdf,
)
from .smd import EffectSet

#: Variance plug-ins used by F SW and M2 SW unless the caller says otherwise.
DEFAULT_TEST_MODE = VarianceMode.UNCONDITIONAL


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    p_value: float
    reject: bool
    method: ApproxMethod
    alpha: float
    tau0_sq: float
    statistic: float


def upper_tail_p(effects: EffectSet, method, tau0_sq: float = 0.0,
                 mode=DEFAULT_TEST_MODE, eps: float = DEFAULT_EPS) -> tuple[float, float]:
    """``(Q, p)`` for the chosen approximation at the hypothesized tau0^2."""
    method = ApproxMethod(method)
    if tau0_sq < 0:
        raise DomainError("tau0_sq must be nonnegative")
    if method.null_only and tau0_sq != 0:
        raise UsageError(f"{method.value} only approximates the null tau^2 = 0")
    scheme = WeightScheme.EFFECTIVE_SIZE if method.uses_qf else WeightScheme.INVERSE_VARIANCE
    q = q_weighted(effects.g, scheme.weights(effects)).q
    if method is ApproxMethod.FSW:
        cdf = qf_cdf(effects, q, tau0_sq, VarianceMode(mode), eps)
    elif method is ApproxMethod.M2SW:
        cdf = qf_gamma_cdf(effects, q, tau0_sq, VarianceMode(mode))
    elif method is ApproxMethod.CHI2:
        cdf = chdtr(effects.k - 1.0, q) if q > 0 else 0.0
    elif method is ApproxMethod.KDB:
        cdf = chdtr(kdb_df(effects), q) if q > 0 else 0.0
    else:
        cdf = bj_cdf(effects, tau0_sq, q, eps)
    return q, min(1.0, max(0.0, 1.0 - cdf))


def test_heterogeneity(effects: EffectSet, method, alpha: float = 0.05,
                       tau0_sq: float = 0.0, mode=DEFAULT_TEST_MODE) -> TestResult:
    """Reject ``tau^2 <= tau0_sq`` when the upper-tail p-value falls below ``alpha``."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    q, p = upper_tail_p(effects, method, tau0_sq, mode)
    return TestResult(p, p < alpha, ApproxMethod(method), alpha, tau0_sq, q)


test_heterogeneity.__test__ = False
