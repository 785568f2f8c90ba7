"""Distribution approximations for Q statistics.

The workhorse is Ruben's series for P(sum lambda_i chi2_1 <= x), the
algorithm Farebrother published for quadratic forms in normal variables.
Around it sit the two-moment gamma approximation and the chi-square family
used for Cochran's Q (K - 1 degrees of freedom, corrected first moment, and
the Biggerstaff-Jackson mixture).
"""

from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import special, stats

from ._special import gammainc
from .errors import DomainError, NumericError
from .qstat import centering_matrix
from .smd import EffectSet, _cumulant4, _j, _var_uncond

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-8
MAX_TERMS = 10_000

# status codes returned by the kernels
OK, FELL_BACK = 0, 1


class VarianceMode(enum.Enum):
    CONDITIONAL = "conditional"
    UNCONDITIONAL = "unconditional"


class ApproxMethod(enum.Enum):
    FSW = "F SW"        # Farebrother, effective-sample-size weights
    M2SW = "M2 SW"      # two-moment gamma, effective-sample-size weights
    CHI2 = "chi2"       # chi-square with K - 1 df, IV weights
    KDB = "KDB"         # chi-square with corrected-moment df, IV weights
    BJ = "BJ"           # Farebrother mixture for Q_IV, IV weights

    @property
    def uses_qf(self) -> bool:
        return self in (ApproxMethod.FSW, ApproxMethod.M2SW)

    @property
    def null_only(self) -> bool:
        return self in (ApproxMethod.CHI2, ApproxMethod.KDB)


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _ruben(lam, x, eps, max_terms):
    """Ruben series for a positive combination of central chi2_1 variables.

    Returns ``(cdf, converged, terms)``. Expansion point
    ``beta = 2 lmin lmax / (lmin + lmax)``; the truncation test uses the
    dominating series ``a0 * C(n/2 + k - 1, k) * cmax^k`` of the |a_k|.
    """
    n = lam.size
    if x <= 0.0:
        return 0.0, True, 0
    lmin = lam.min()
    lmax = lam.max()
    beta = 2.0 * lmin * lmax / (lmin + lmax)
    y = x / beta
    half_n = 0.5 * n
    c = 1.0 - beta / lam
    cmax = np.abs(c).max()
    log_a0 = 0.5 * np.log(beta / lam).sum()
    a0 = math.exp(log_a0)
    F = gammainc(half_n, 0.5 * y)
    total = a0 * F
    if cmax < 1e-14:
        return min(max(total, 0.0), 1.0), True, 0
    log_cmax = math.log(cmax)
    log_half_y = math.log(0.5 * y)
    lg_half_n = math.lgamma(half_n)
    S = np.zeros(n)
    a_prev = a0
    nu = float(n)
    for k in range(1, max_terms + 1):
        s = 0.0
        for j in range(n):
            S[j] = c[j] * (S[j] + a_prev)
            s += S[j]
        a_k = s / (2.0 * k)
        # F_{nu+2}(y) = F_nu(y) - (y/2)^{nu/2} e^{-y/2} / Gamma(nu/2 + 1)
        F -= math.exp(0.5 * nu * log_half_y - 0.5 * y - math.lgamma(0.5 * nu + 1.0))
        if F < 0.0:
            F = 0.0
        nu += 2.0
        total += a_k * F
        a_prev = a_k
        r = cmax * (half_n + k + 1.0) / (k + 2.0)
        if r < cmax:
            r = cmax
        if r < 1.0:
            log_b = (log_a0 + math.lgamma(half_n + k + 1.0) - lg_half_n
                     - math.lgamma(k + 2.0) + (k + 1.0) * log_cmax)
            if math.exp(log_b) / (1.0 - r) * F < eps:
                return min(max(total, 0.0), 1.0), True, k
    return min(max(total, 0.0), 1.0), False, max_terms


@njit(cache=True)
def _q_lambdas(w, s):
    """Nonzero eigenvalues of S^1/2 A S^1/2, A the centering matrix of w."""
    k = w.size
    W = w.sum()
    q = w / W
    d = np.sqrt(s)
    M = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            M[i, j] = -W * q[i] * q[j] * d[i] * d[j]
        M[i, i] += W * q[i] * s[i]
    ev = np.linalg.eigvalsh(M)
    # rank k - 1: the smallest eigenvalue is the structural zero
    lam = ev[1:].copy()
    tol = 1e-12 * lam[-1]
    cnt = 0
    for i in range(lam.size):
        if lam[i] > tol:
            cnt += 1
    out = np.empty(cnt)
    cnt = 0
    for i in range(lam.size):
        if lam[i] > tol:
            out[cnt] = lam[i]
            cnt += 1
    return out


@njit(cache=True)
def _gamma_cdf(mean, var, x):
    if x <= 0.0:
        return 0.0
    return gammainc(mean * mean / var, x * mean / var)


@njit(cache=True)
def _q_mixture_cdf(w, s, x, eps):
    """CDF of the normal quadratic form Q at x; falls back to gamma matching.

    Returns ``(cdf, status)`` with status ``FELL_BACK`` when Ruben's series
    did not converge in ``MAX_TERMS`` terms.
    """
    lam = _q_lambdas(w, s)
    p, ok, _ = _ruben(lam, x, eps, MAX_TERMS)
    if ok:
        return p, 0
    m1 = lam.sum()
    m2 = 2.0 * (lam * lam).sum()
    return _gamma_cdf(m1, m2, x), 1


@njit(cache=True)
def _q_moments(w, s, k4):
    """Mean and variance of Q = X'AX for independent centred X_i.

    ``s`` are the variances and ``k4`` the fourth cumulants of the X_i; with
    ``k4 = 0`` this is the normal-theory pair ``(sum lambda, 2 sum lambda^2)``.
    """
    W = w.sum()
    q = w / W
    mean = W * (q * (1.0 - q) * s).sum()
    qs = q * s
    tr2 = W * W * ((qs * qs).sum() - 2.0 * (q * qs * qs).sum() + (q * qs).sum() ** 2)
    a_diag = W * q * (1.0 - q)
    return mean, 2.0 * tr2 + (a_diag * a_diag * k4).sum()


@njit(cache=True)
def _q_gamma_cdf(w, s, k4, x):
    mean, var = _q_moments(w, s, k4)
    return _gamma_cdf(mean, var, x)


@njit(cache=True)
def _ess_cumulants(ntilde, m, tau2, delta_hat):
    k = ntilde.size
    out = np.empty(k)
    for i in range(k):
        out[i] = _cumulant4(delta_hat, tau2, m[i], ntilde[i])
    return out


@njit(cache=True)
def _ess_variances(g, v2, ntilde, m, tau2, unconditional, delta_hat):
    k = g.size
    s = np.empty(k)
    for i in range(k):
        if unconditional:
            s[i] = _var_uncond(delta_hat, tau2, m[i], ntilde[i]) + tau2
        else:
            s[i] = v2[i] + tau2
    return s


@njit(cache=True)
def _weighted_mean(x, w):
    return (x * w).sum() / w.sum()


@njit(cache=True)
def _kdb_df(g, v2, ntilde, m, z_nodes, z_wts, v_nodes_all, v_wts_all, v_index):
    """Corrected first moment of Q_IV under homogeneity, by quadrature.

    Each g_i is integrated over its scaled noncentral t law at the common
    IV-weighted mean; ``v_index[i]`` selects that study's chi-square nodes.
    """
    k = g.size
    delta = _weighted_mean(g, 1.0 / v2)
    sum_mu2 = 0.0
    sum_mu22 = 0.0
    sum_mu1 = 0.0
    sum_mu1sq = 0.0
    sum_om = 0.0
    for i in range(k):
        mi = m[i]
        nt = ntilde[i]
        jm = _j(mi)
        coef = 1.0 - (mi - 2.0) / (mi * jm * jm)
        inv_nt = 1.0 / nt
        sq = math.sqrt(nt)
        vn = v_nodes_all[v_index[i]]
        vw = v_wts_all[v_index[i]]
        om = 0.0
        mu1 = 0.0
        mu2 = 0.0
        mu22 = 0.0
        for a in range(z_nodes.size):
            num = z_nodes[a] + sq * delta
            for b in range(vn.size):
                gg = jm * num / math.sqrt(vn[b] / mi) / sq
                e = gg - delta
                w = 1.0 / (inv_nt + coef * gg * gg)
                p = z_wts[a] * vw[b]
                om += p * w
                mu1 += p * w * e
                mu2 += p * w * e * e
                mu22 += p * w * w * e * e
        sum_om += om
        sum_mu1 += mu1
        sum_mu1sq += mu1 * mu1
        sum_mu2 += mu2
        sum_mu22 += mu22
    return sum_mu2 - (sum_mu22 + sum_mu1 * sum_mu1 - sum_mu1sq) / sum_om


# ---------------------------------------------------------------------------
# quadrature nodes


@functools.lru_cache(maxsize=None)
def normal_nodes(n: int = 24):
    """Gauss-Hermite nodes and probability weights for N(0, 1)."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / w.sum()


@functools.lru_cache(maxsize=None)
def chi2_nodes(df: float, n: int = 16):
    """Gauss nodes and probability weights for a chi-square(df) variable.

    Golub-Welsch on the generalized Laguerre Jacobi matrix; normalizing the
    weights directly keeps large ``df`` from overflowing.
    """
    alpha = df / 2.0 - 1.0
    k = np.arange(n)
    diag = 2 * k + alpha + 1
    off = np.sqrt(k[1:] * (k[1:] + alpha))
    jac = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    x, vec = np.linalg.eigh(jac)
    w = vec[0] ** 2
    return 2.0 * x, w / w.sum()


def _kdb_inputs(m_values):
    """Quadrature tables for a vector of per-study degrees of freedom."""
    uniq = sorted(set(float(v) for v in m_values))
    nodes = [chi2_nodes(v) for v in uniq]
    size = max(len(n[0]) for n in nodes)
    v_nodes = np.ones((len(uniq), size))
    v_wts = np.zeros((len(uniq), size))
    for r, (x, w) in enumerate(nodes):
        v_nodes[r, : len(x)] = x
        v_wts[r, : len(w)] = w
    index = np.array([uniq.index(float(v)) for v in m_values], dtype=np.int64)
    z, zw = normal_nodes()
    return z, zw, v_nodes, v_wts, index


# ---------------------------------------------------------------------------
# public API


@dataclass(frozen=True)
class ChiSquareMixture:
    """Coefficients of a positive linear combination of central chi2_1 variables."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).ravel()
        if np.any(lam < 0) or not np.any(lam > 0):
            raise DomainError("mixture coefficients must be >= 0 with at least one > 0")
        object.__setattr__(self, "lambdas", lam)

    @property
    def positive(self) -> np.ndarray:
        return np.ascontiguousarray(self.lambdas[self.lambdas > 0])

    @property
    def mean(self) -> float:
        return float(self.lambdas.sum())

    @property
    def variance(self) -> float:
        return float(2 * np.sum(self.lambdas**2))


def mixture_from_q(weights, sigma2, tau2: float) -> ChiSquareMixture:
    """Eigenvalue coefficients of Q = Theta' A Theta when Theta ~ N(0, diag(sigma2 + tau2))."""
    weights = np.asarray(weights, dtype=float)
    s = np.asarray(sigma2, dtype=float) + tau2
    if weights.shape != s.shape or np.any(weights <= 0) or np.any(s <= 0) or tau2 < 0:
        raise DomainError("need equal-length positive weights and variances, tau2 >= 0")
    A = centering_matrix(weights)
    d = np.sqrt(s)
    try:
        ev = np.linalg.eigvalsh(d[:, None] * A * d[None, :])
    except np.linalg.LinAlgError as exc:
        raise NumericError("eigen-decomposition failed", weights=weights, variances=s) from exc
    ev = np.sort(ev)
    ev[0] = 0.0
    ev[np.abs(ev) < 1e-8 * max(ev[-1], 1.0)] = 0.0
    return ChiSquareMixture(ev)


def farebrother_cdf(mix: ChiSquareMixture, x: float, eps: float = DEFAULT_EPS,
                    max_terms: int = MAX_TERMS) -> float:
    """P(sum lambda_i chi2_1 <= x) with truncation error at most ``eps``."""
    if not 0 < eps <= 1e-2:
        raise DomainError("eps must lie in (0, 1e-2]")
    if x < 0:
        raise DomainError("x must be nonnegative")
    p, ok, terms = _ruben(mix.positive, float(x), eps, max_terms)
    if not ok:
        raise NumericError("Ruben series did not converge", terms=terms,
                           lambdas=mix.lambdas, x=x, eps=eps)
    return p


def gamma_two_moment_cdf(mean: float, variance: float, x: float) -> float:
    """Gamma CDF with the given mean and variance."""
    if mean <= 0 or variance <= 0:
        raise DomainError("mean and variance must be positive")
    return _gamma_cdf(float(mean), float(variance), float(x))


def null_cdf_qiv(k: int, x: float) -> float:
    """Chi-square(K - 1) CDF, the textbook null approximation for Q_IV."""
    if k < 2:
        raise DomainError("need k >= 2")
    return float(stats.chi2.cdf(x, k - 1)) if x > 0 else 0.0


def kdb_df(effects: EffectSet) -> float:
    """Corrected null first moment of Q_IV used as the KDB degrees of freedom."""
    z, zw, vn, vw, idx = _kdb_inputs(effects.m)
    df = _kdb_df(effects.g, effects.v2, effects.n_tilde, effects.m, z, zw, vn, vw, idx)
    if not df > 0:
        raise NumericError("corrected first moment is not positive", df=df)
    return float(df)


def kdb_cdf(effects: EffectSet, x: float) -> float:
    """Chi-square CDF at ``x`` with the corrected first moment as its df."""
    df = kdb_df(effects)
    return float(special.chdtr(df, x)) if x > 0 else 0.0


def ess_variances(effects: EffectSet, tau2: float, mode: VarianceMode) -> np.ndarray:
    """Per-study Var(g_i) plug-ins for Q_F at a hypothesized tau2."""
    unconditional = mode is VarianceMode.UNCONDITIONAL
    delta_hat = _weighted_mean(effects.g, effects.n_tilde)
    return _ess_variances(effects.g, effects.v2, effects.n_tilde, effects.m, float(tau2),
                          unconditional, delta_hat)


def qf_cdf(effects: EffectSet, x: float, tau2: float, mode: VarianceMode,
           eps: float = DEFAULT_EPS) -> float:
    """F SW: Farebrother approximation to the CDF of Q_F at ``x`` given tau2."""
    s = ess_variances(effects, tau2, mode)
    p, status = _q_mixture_cdf(effects.n_tilde, s, float(x), eps)
    if status == FELL_BACK:
        log.warning("Ruben series did not converge; used two-moment gamma fallback")
    return p


def qf_moments(effects: EffectSet, tau2: float, mode: VarianceMode) -> tuple[float, float]:
    """Plug-in mean and variance of Q_F at a hypothesized tau^2.

    The variance adds the fourth-cumulant term of the (scaled noncentral t)
    estimates to the normal-theory ``2 sum lambda^2``.
    """
    s = ess_variances(effects, tau2, mode)
    delta_hat = _weighted_mean(effects.g, effects.n_tilde)
    k4 = _ess_cumulants(effects.n_tilde, effects.m, float(tau2), delta_hat)
    mean, var = _q_moments(effects.n_tilde, s, k4)
    return float(mean), float(var)


def qf_gamma_cdf(effects: EffectSet, x: float, tau2: float, mode: VarianceMode) -> float:
    """M2 SW: gamma matched to the plug-in mean and variance of Q_F."""
    mean, var = qf_moments(effects, tau2, mode)
    return _gamma_cdf(mean, var, float(x))


def bj_cdf(effects: EffectSet, tau2: float, x: float, eps: float = DEFAULT_EPS) -> float:
    """Biggerstaff-Jackson: Farebrother CDF of Q_IV with IV weights held fixed."""
    if tau2 < 0:
        raise DomainError("tau2 must be nonnegative")
    w = 1.0 / effects.v2
    p, status = _q_mixture_cdf(w, effects.v2 + tau2, float(x), eps)
    if status == FELL_BACK:
        log.warning("Ruben series did not converge; used two-moment gamma fallback")
    return p
