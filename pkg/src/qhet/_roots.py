"""Jitted bracketed root finding and golden-section maximization.

Objectives are selected by an integer code rather than passed as functions,
which keeps every caller cacheable by numba. All objectives share one
parameter tuple layout::

    (g, v2, ntilde, m, w, qobs, delta_hat, eps, target, unconditional)

Fields an objective does not need are ignored.
"""

import math

import numpy as np
from numba import njit

from ._special import chdtr
from .qstat import _q_gen
from .quadform import _ess_variances, _q_mixture_cdf

FP_EXCESS = 0      # upper-tail Farebrother p-value of qobs at tau2, minus target
QGEN_EXCESS = 1    # generalized Q at tau2, minus target
CHI2_EXCESS = 2    # chi-square(df = qobs) CDF at x, minus target
RL_EXCESS = 3      # restricted log-likelihood at tau2, minus target
RL = 4             # restricted log-likelihood at tau2


@njit(cache=True)
def params(g, v2, ntilde, m, w, qobs, delta_hat, eps, target, unconditional):
    return (g, v2, ntilde, m, w, qobs, delta_hat, eps, target, unconditional)


@njit(cache=True)
def scalar_params(df, target):
    e = np.zeros(1)
    return (e, e, e, e, e, df, 0.0, 0.0, target, False)


@njit(cache=True)
def with_target(P, target):
    return (P[0], P[1], P[2], P[3], P[4], P[5], P[6], P[7], target, P[9])


@njit(cache=True)
def restricted_loglik(g, v2, tau2):
    w = 1.0 / (v2 + tau2)
    sw = w.sum()
    mu = (w * g).sum() / sw
    return -0.5 * (np.log(v2 + tau2).sum() + math.log(sw) + (w * (g - mu) ** 2).sum())


@njit(cache=True)
def objective(kind, x, P):
    g, v2, ntilde, m, w, qobs, delta_hat, eps, target, unconditional = P
    if kind == FP_EXCESS:
        s = _ess_variances(g, v2, ntilde, m, x, unconditional, delta_hat)
        cdf, _ = _q_mixture_cdf(w, s, qobs, eps)
        return (1.0 - cdf) - target
    if kind == QGEN_EXCESS:
        return _q_gen(g, v2, x) - target
    if kind == CHI2_EXCESS:
        return chdtr(qobs, x) - target
    if kind == RL_EXCESS:
        return restricted_loglik(g, v2, x) - target
    return restricted_loglik(g, v2, x)


@njit(cache=True)
def brentq(kind, a, b, P, xtol, maxiter=200):
    """Brent-Dekker root on ``[a, b]``; returns ``(root, iterations, converged)``.

    The caller guarantees a sign change; the bracket is never abandoned, so
    the result is at least as reliable as bisection.
    """
    fa = objective(kind, a, P)
    fb = objective(kind, b, P)
    if fa == 0.0:
        return a, 0, True
    if fb == 0.0:
        return b, 0, True
    c, fc = a, fa
    d = e = b - a
    for it in range(1, maxiter + 1):
        if (fb > 0.0) == (fc > 0.0):
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol = 2.0 * 2.220446049250313e-16 * abs(b) + 0.5 * xtol
        mid = 0.5 * (c - b)
        if abs(mid) <= tol or fb == 0.0:
            return b, it, True
        if abs(e) >= tol and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p = 2.0 * mid * s
                q = 1.0 - s
            else:
                q = fa / fc
                r = fb / fc
                p = s * (2.0 * mid * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0.0:
                q = -q
            else:
                p = -p
            if 2.0 * p < min(3.0 * mid * q - abs(tol * q), abs(e * q)):
                e = d
                d = p / q
            else:
                d = mid
                e = mid
        else:
            d = mid
            e = mid
        a, fa = b, fb
        if abs(d) > tol:
            b += d
        else:
            b += tol if mid > 0 else -tol
        fb = objective(kind, b, P)
    return b, maxiter, False


@njit(cache=True)
def golden_max(kind, a, b, P, xtol):
    """Golden-section search for the maximizer of a unimodal objective on ``[a, b]``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = objective(kind, c, P)
    fd = objective(kind, d, P)
    while b - a > xtol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(kind, c, P)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(kind, d, P)
    x = 0.5 * (a + b)
    return x, objective(kind, x, P)
