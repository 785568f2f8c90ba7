"""Confidence intervals for tau^2.

FPC/FPU invert the Farebrother p-value of Q_F (conditional / unconditional
variances). QP, PL and KDB are the inverse-variance comparators.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._roots import (
    CHI2_EXCESS,
    FP_EXCESS,
    RL,
    RL_EXCESS,
    brentq,
    golden_max,
    objective,
    params,
    restricted_loglik,
    scalar_params,
    with_target,
)
from ._special import chdtr
from .errors import DomainError
from .estimators import ROOT_TOL, _fp_args, _fp_solve, _qgen_solve, _tau2_max
from .quadform import DEFAULT_EPS, VarianceMode, _kdb_df, _kdb_inputs
from .smd import EffectSet

# endpoint codes shared with the simulation kernel
INTERIOR, AT_ZERO, CAPPED = 0, -1, 1


class IntervalMethod(enum.Enum):
    QP = "QP"
    PL = "PL"
    KDB = "KDB"
    FPC = "FPC"
    FPU = "FPU"


@dataclass(frozen=True)
class Tau2Interval:
    lower: float
    upper: float
    method: IntervalMethod
    level: float
    at_upper_bound: bool = False
    diagnostics: dict = field(default_factory=dict)

    def covers(self, tau2: float) -> bool:
        return self.lower <= tau2 <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _chi2_ppf(df, p):
    hi = df + 10.0 * math.sqrt(2.0 * df) + 10.0
    while chdtr(df, hi) < p:
        hi *= 2.0
    root, _, _ = brentq(CHI2_EXCESS, 0.0, hi, scalar_params(df, p), 1e-12)
    return root


@njit(cache=True)
def _fp_interval(g, v2, ntilde, m, unconditional, alpha, eps):
    """Returns ``(lower, upper, lower_code, upper_code)``."""
    tmax = _tau2_max(g)
    P = _fp_args(g, v2, ntilde, m, False, unconditional, eps, 0.5 * alpha)
    lo, lo_code, _ = _fp_solve(P, tmax, ROOT_TOL)
    if lo_code == 1:
        return tmax, tmax, 1, 1
    hi, hi_code, _ = _fp_solve(with_target(P, 1.0 - 0.5 * alpha), tmax, ROOT_TOL)
    return lo, hi, lo_code, hi_code


@njit(cache=True)
def _qgen_interval(g, v2, q_hi, q_lo):
    """Invert Q_gen between the upper (``q_hi``) and lower (``q_lo``) quantiles."""
    tmax = _tau2_max(g)
    lo, lo_code, _ = _qgen_solve(g, v2, q_hi, tmax)
    if lo_code == 1:
        return tmax, tmax, 1, 1
    hi, hi_code, _ = _qgen_solve(g, v2, q_lo, tmax)
    return lo, hi, lo_code, hi_code


@njit(cache=True)
def _pl_interval(g, v2, crit):
    """Restricted-likelihood-ratio interval with cutoff ``crit`` (chi2_1 quantile)."""
    tmax = _tau2_max(g)
    P = params(g, v2, v2, v2, v2, 0.0, 0.0, 0.0, 0.0, False)
    t_hat, l_hat = golden_max(RL, 0.0, tmax, P, 1e-10 * tmax)
    l0 = restricted_loglik(g, v2, 0.0)
    if l0 >= l_hat:
        t_hat, l_hat = 0.0, l0
    P = with_target(P, l_hat - 0.5 * crit)
    if objective(RL_EXCESS, 0.0, P) >= 0.0:
        lo, lo_code = 0.0, -1
    else:
        lo, _, _ = brentq(RL_EXCESS, 0.0, t_hat, P, ROOT_TOL)
        lo_code = 0
    if objective(RL_EXCESS, tmax, P) >= 0.0:
        hi, hi_code = tmax, 1
    else:
        hi, _, _ = brentq(RL_EXCESS, t_hat, tmax, P, ROOT_TOL)
        hi_code = 0
    return lo, hi, lo_code, hi_code


# ---------------------------------------------------------------------------
# public API


def _package(lo, hi, lo_code, hi_code, method, alpha):
    degenerate = hi_code == AT_ZERO
    diag = {"lower_code": int(lo_code), "upper_code": int(hi_code), "degenerate": degenerate}
    return Tau2Interval(float(lo), float(hi), method, 1 - alpha, hi_code == CAPPED, diag)


def interval(effects: EffectSet, method, alpha: float = 0.05,
             eps: float = DEFAULT_EPS) -> Tau2Interval:
    """Two-sided ``1 - alpha`` interval for tau^2 by the named method."""
    method = IntervalMethod(method)
    if not 0 < alpha < 0.5:
        raise DomainError("alpha must lie in (0, 0.5)")
    g, v2 = effects.g, effects.v2
    if method in (IntervalMethod.FPC, IntervalMethod.FPU):
        res = _fp_interval(g, v2, effects.n_tilde, effects.m,
                           method is IntervalMethod.FPU, alpha, eps)
    elif method is IntervalMethod.PL:
        res = _pl_interval(g, v2, _chi2_ppf(1.0, 1 - alpha))
    else:
        if method is IntervalMethod.QP:
            df = effects.k - 1.0
        else:
            z, zw, vn, vw, idx = _kdb_inputs(effects.m)
            df = _kdb_df(g, v2, effects.n_tilde, effects.m, z, zw, vn, vw, idx)
        res = _qgen_interval(g, v2, _chi2_ppf(df, 1 - alpha / 2), _chi2_ppf(df, alpha / 2))
    return _package(*res, method, alpha)


def profile_pvalue(effects: EffectSet, tau2: float, weights: str = "ess",
                   mode=VarianceMode.CONDITIONAL, eps: float = DEFAULT_EPS) -> float:
    """Upper-tail Farebrother p-value of the observed Q at a hypothesized tau^2.

    ``weights="ess"`` uses Q_F with the chosen variance mode; ``"iv"`` uses
    Q_IV with conditional variances (the BJ construction).
    """
    if tau2 < 0:
        raise DomainError("tau2 must be nonnegative")
    use_iv = weights == "iv"
    if weights not in ("iv", "ess"):
        raise DomainError(f"unknown weights {weights!r}")
    uncond = VarianceMode(mode) is VarianceMode.UNCONDITIONAL and not use_iv
    args = _fp_args(effects.g, effects.v2, effects.n_tilde, effects.m, use_iv, uncond, eps, 0.0)
    return float(objective(FP_EXCESS, float(tau2), args))
