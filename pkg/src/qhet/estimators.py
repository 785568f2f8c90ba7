"""Point estimators of the between-study variance tau^2.

SSC/SSU are moment estimators built on Q_F with effective-sample-size
weights; SMC/SMU solve for the tau^2 at which the observed Q_F is the median
of its Farebrother approximation. DL, REML, MP and KDB use inverse-variance
weights and serve as comparators.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._roots import FP_EXCESS, QGEN_EXCESS, brentq, objective, params
from .errors import ConvergenceError, DomainError
from .qstat import _q
from .quadform import (
    DEFAULT_EPS,
    VarianceMode,
    _kdb_df,
    _kdb_inputs,
    _weighted_mean,
)
from .smd import EffectSet, _var_uncond

log = logging.getLogger(__name__)

ROOT_TOL = 1e-6
REML_TOL = 1e-8
REML_MAXITER = 1000


class Tau2Method(enum.Enum):
    SSC = "SSC"
    SSU = "SSU"
    SMC = "SMC"
    SMU = "SMU"
    DL = "DL"
    REML = "REML"
    MP = "MP"
    KDB = "KDB"


@dataclass(frozen=True)
class Tau2Estimate:
    value: float
    method: Tau2Method
    truncated: bool = False
    iterations: int = 0


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _tau2_max(g):
    r = g.max() - g.min()
    return 10.0 * r * r + 1.0


@njit(cache=True)
def _moment(qf, w, ev2):
    W = w.sum()
    q = w / W
    a = (q * (1.0 - q)).sum()
    return (qf / W - (q * (1.0 - q) * ev2).sum()) / a


@njit(cache=True)
def _ssc(g, v2, ntilde):
    qf = _q(g, ntilde)[0]
    raw = _moment(qf, ntilde, v2)
    if raw > 0.0:
        return raw, False
    return 0.0, True


@njit(cache=True)
def _ssu(g, v2, ntilde, m):
    qf = _q(g, ntilde)[0]
    tau2_c, _ = _ssc(g, v2, ntilde)
    delta_hat = _weighted_mean(g, ntilde)
    ev2 = np.empty(g.size)
    for i in range(g.size):
        ev2[i] = _var_uncond(delta_hat, tau2_c, m[i], ntilde[i])
    raw = _moment(qf, ntilde, ev2)
    if raw > 0.0:
        return raw, False
    return 0.0, True


@njit(cache=True)
def _fp_args(g, v2, ntilde, m, use_iv, unconditional, eps, target):
    w = 1.0 / v2 if use_iv else ntilde.copy()
    qobs = _q(g, w)[0]
    delta_hat = _weighted_mean(g, ntilde)
    return params(g, v2, ntilde, m, w, qobs, delta_hat, eps, target, unconditional)


@njit(cache=True)
def _fp_solve(P, tmax, xtol):
    """tau^2 where the profile p-value hits the target.

    Returns ``(value, code, iterations)``: code 0 interior root, -1 the
    p-value already reaches the target at 0, +1 not reached by ``tmax``.
    """
    if objective(FP_EXCESS, 0.0, P) >= 0.0:
        return 0.0, -1, 0
    if objective(FP_EXCESS, tmax, P) < 0.0:
        return tmax, 1, 0
    root, it, _ = brentq(FP_EXCESS, 0.0, tmax, P, xtol)
    return root, 0, it


@njit(cache=True)
def _median(g, v2, ntilde, m, unconditional, eps):
    args = _fp_args(g, v2, ntilde, m, False, unconditional, eps, 0.5)
    value, code, it = _fp_solve(args, _tau2_max(g), ROOT_TOL)
    return value, code != 0, it, code


@njit(cache=True)
def _dl(g, v2):
    w = 1.0 / v2
    qiv = _q(g, w)[0]
    s1 = w.sum()
    s2 = (w * w).sum()
    raw = (qiv - (g.size - 1.0)) / (s1 - s2 / s1)
    if raw > 0.0:
        return raw, False
    return 0.0, True


@njit(cache=True)
def _qgen_solve(g, v2, target, tmax):
    """tau^2 solving Q_gen(tau^2) = target; same return codes as ``_fp_solve``."""
    P = params(g, v2, v2, v2, v2, 0.0, 0.0, 0.0, target, False)
    if objective(QGEN_EXCESS, 0.0, P) <= 0.0:
        return 0.0, -1, 0
    if objective(QGEN_EXCESS, tmax, P) > 0.0:
        return tmax, 1, 0
    root, it, _ = brentq(QGEN_EXCESS, 0.0, tmax, P, ROOT_TOL * 1e-3)
    return root, 0, it


@njit(cache=True)
def _reml(g, v2, tol, maxiter):
    """Fixed-point REML iteration truncated at zero; returns ``(tau2, iterations, converged)``."""
    tau2, _ = _dl(g, v2)
    for it in range(1, maxiter + 1):
        w = 1.0 / (v2 + tau2)
        sw = w.sum()
        mu = (w * g).sum() / sw
        w2 = w * w
        new = (w2 * ((g - mu) ** 2 - v2)).sum() / w2.sum() + 1.0 / sw
        if new < 0.0:
            new = 0.0
        if abs(new - tau2) <= tol * (1.0 + tau2):
            return new, it, True
        tau2 = new
    return tau2, maxiter, False


# ---------------------------------------------------------------------------
# public API


def _mode(mode):
    return VarianceMode(mode) is VarianceMode.UNCONDITIONAL


def tau2_moment_ss(effects: EffectSet, mode=VarianceMode.CONDITIONAL) -> Tau2Estimate:
    """SSC (conditional) or SSU (unconditional) moment estimator from Q_F."""
    if _mode(mode):
        value, trunc = _ssu(effects.g, effects.v2, effects.n_tilde, effects.m)
        return Tau2Estimate(value, Tau2Method.SSU, trunc, 1)
    value, trunc = _ssc(effects.g, effects.v2, effects.n_tilde)
    return Tau2Estimate(value, Tau2Method.SSC, trunc, 0)


def tau2_median_farebrother(effects: EffectSet, mode=VarianceMode.CONDITIONAL,
                            eps: float = DEFAULT_EPS) -> Tau2Estimate:
    """SMC/SMU: the tau^2 at which the observed Q_F sits at the median of F SW."""
    uncond = _mode(mode)
    value, trunc, it, code = _median(effects.g, effects.v2, effects.n_tilde, effects.m,
                                     uncond, eps)
    if code == 1:
        log.warning("median estimator hit the search cap %.4g", value)
    method = Tau2Method.SMU if uncond else Tau2Method.SMC
    return Tau2Estimate(value, method, trunc, it)


def tau2_iv(effects: EffectSet, method) -> Tau2Estimate:
    """Inverse-variance comparators: DL, REML, MP or KDB."""
    method = Tau2Method(method)
    g, v2 = effects.g, effects.v2
    if method is Tau2Method.DL:
        value, trunc = _dl(g, v2)
        return Tau2Estimate(value, method, trunc, 0)
    if method is Tau2Method.REML:
        value, it, ok = _reml(g, v2, REML_TOL, REML_MAXITER)
        if not ok:
            raise ConvergenceError("REML fixed point did not converge", last=value,
                                   iterations=it)
        return Tau2Estimate(value, method, value == 0.0, it)
    if method is Tau2Method.MP:
        target = effects.k - 1.0
    elif method is Tau2Method.KDB:
        z, zw, vn, vw, idx = _kdb_inputs(effects.m)
        target = _kdb_df(g, v2, effects.n_tilde, effects.m, z, zw, vn, vw, idx)
    else:
        raise DomainError(f"{method.value} is not an inverse-variance estimator")
    value, code, it = _qgen_solve(g, v2, target, _tau2_max(g))
    if code == 1:
        log.warning("%s estimator hit the search cap %.4g", method.value, value)
    return Tau2Estimate(value, method, code != 0, it)


def estimate(effects: EffectSet, method) -> Tau2Estimate:
    """Dispatch on a :class:`Tau2Method` (or its name)."""
    method = Tau2Method(method)
    if method is Tau2Method.SSC:
        return tau2_moment_ss(effects, VarianceMode.CONDITIONAL)
    if method is Tau2Method.SSU:
        return tau2_moment_ss(effects, VarianceMode.UNCONDITIONAL)
    if method is Tau2Method.SMC:
        return tau2_median_farebrother(effects, VarianceMode.CONDITIONAL)
    if method is Tau2Method.SMU:
        return tau2_median_farebrother(effects, VarianceMode.UNCONDITIONAL)
    return tau2_iv(effects, method)


def tau2_search_cap(effects: EffectSet) -> float:
    """Upper end of every tau^2 search: ``10 * range(g)^2 + 1``."""
    return float(_tau2_max(effects.g))
