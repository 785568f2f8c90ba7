import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from qhet import (
    ChiSquareMixture,
    DomainError,
    EffectSet,
    NumericError,
    VarianceMode,
    bj_cdf,
    centering_matrix,
    expected_q,
    farebrother_cdf,
    gamma_two_moment_cdf,
    kdb_cdf,
    kdb_df,
    mixture_from_q,
    null_cdf_qiv,
)
from qhet.quadform import qf_cdf, qf_gamma_cdf, qf_moments

from conftest import make_effects


def imhof_cdf(lam, x):
    """P(sum lam_j chi2_1 <= x) by Imhof's inversion integral."""
    lam = np.asarray(lam, dtype=float)

    def integrand(u):
        theta = 0.5 * np.sum(np.arctan(lam * u)) - 0.5 * x * u
        rho = np.prod((1 + (lam * u) ** 2) ** 0.25)
        return math.sin(theta) / (u * rho)

    # tail beyond U is below (2/k) U^(-k/2) / prod(sqrt(lam)); pick U to make it ~1e-10
    k = lam.size
    upper = (2 / k / np.prod(np.sqrt(lam)) / 1e-10) ** (2 / k)
    edges = np.concatenate([[0.0], np.geomspace(1e-3, upper, 150)])
    val = sum(integrate.quad(integrand, a, b, limit=200, epsabs=1e-13)[0]
              for a, b in zip(edges[:-1], edges[1:]))
    return 0.5 - val / math.pi


class TestMixture:
    def test_two_equal(self):
        mix = mixture_from_q([1, 1], [1, 1], 0.0)
        assert np.allclose(np.sort(mix.lambdas), [0, 1], atol=1e-12)

    def test_three_equal(self):
        mix = mixture_from_q([1, 1, 1], [0.3, 0.3, 0.3], 0.0)
        assert np.allclose(np.sort(mix.lambdas), [0, 0.3, 0.3], atol=1e-12)
        # the coefficients scale with a common weight
        mix = mixture_from_q([2, 2, 2], [0.3, 0.3, 0.3], 0.0)
        assert np.allclose(np.sort(mix.lambdas), [0, 0.6, 0.6], atol=1e-12)

    def test_trace_identity(self, rng):
        for _ in range(30):
            k = rng.integers(2, 25)
            w = rng.uniform(0.1, 5, k)
            s = rng.uniform(0.01, 2, k)
            t = rng.uniform(0, 2)
            mix = mixture_from_q(w, s, t)
            assert mix.mean == pytest.approx(expected_q(w, s, t), abs=1e-8)
            assert np.sum(mix.lambdas == 0) == 1

    def test_eigen_oracle(self, rng):
        w = rng.uniform(0.1, 5, 7)
        s = rng.uniform(0.1, 2, 7)
        A = centering_matrix(w)
        ev = np.sort(np.linalg.eigvals(A @ np.diag(s)).real)
        assert np.allclose(np.sort(mixture_from_q(w, s, 0.0).lambdas), np.clip(ev, 0, None),
                           atol=1e-10)

    def test_moments_monte_carlo(self, rng):
        lam = np.array([0.5, 1.0, 2.5])
        mix = ChiSquareMixture(lam)
        n = 400_000
        draws = (rng.chisquare(1, size=(n, 3)) * lam).sum(1)
        assert abs(draws.mean() - mix.mean) <= 3 * draws.std() / math.sqrt(n)
        se_var = draws.var() * math.sqrt((stats.kurtosis(draws) + 2) / n)
        assert abs(draws.var() - mix.variance) <= 3 * se_var

    def test_validation(self):
        with pytest.raises(DomainError):
            ChiSquareMixture([0.0, 0.0])
        with pytest.raises(DomainError):
            ChiSquareMixture([-1.0, 2.0])


class TestFarebrother:
    def test_chi2_one_quantile(self):
        assert farebrother_cdf(ChiSquareMixture([1.0]), 3.841459) == pytest.approx(0.95, abs=1e-6)

    def test_scaled_chi2_two(self):
        assert farebrother_cdf(ChiSquareMixture([2.0, 2.0]), 2 * 5.991465) == pytest.approx(
            0.95, abs=1e-6)

    @pytest.mark.parametrize("lam", [[1.0], [3.0, 3.0, 3.0], [0.7] * 9])
    def test_equal_collapse_exact(self, lam):
        c, k = lam[0], len(lam)
        for x in (0.1, 1.0, 4.0, 15.0):
            assert farebrother_cdf(ChiSquareMixture(lam), x) == pytest.approx(
                stats.chi2.cdf(x / c, k), abs=1e-8)

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    def test_against_imhof(self, rng):
        for _ in range(10):
            lam = rng.uniform(0.05, 5, rng.integers(3, 12))
            mix = ChiSquareMixture(lam)
            for x in np.quantile(
                    (rng.chisquare(1, size=(20_000, lam.size)) * lam).sum(1), [0.1, 0.5, 0.9]):
                assert farebrother_cdf(mix, x) == pytest.approx(imhof_cdf(lam, x), abs=1e-6)

    def test_one_two_three_monte_carlo(self, rng):
        lam = np.array([1.0, 2.0, 3.0])
        n = 2_000_000
        mc = np.mean((rng.chisquare(1, size=(n, 3)) * lam).sum(1) <= 6.0)
        assert abs(farebrother_cdf(ChiSquareMixture(lam), 6.0) - mc) < 0.003

    def test_zero_point(self):
        assert farebrother_cdf(ChiSquareMixture([1.0, 2.0]), 0.0) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 20), min_size=1, max_size=12), st.floats(0.01, 200),
           st.floats(0.1, 10))
    def test_scale_and_permutation(self, lam, x, c):
        lam = np.array(lam)
        p = farebrother_cdf(ChiSquareMixture(lam), x)
        assert 0 <= p <= 1
        assert farebrother_cdf(ChiSquareMixture(lam[::-1]), x) == pytest.approx(p, abs=1e-8)
        assert farebrother_cdf(ChiSquareMixture(c * lam), c * x) == pytest.approx(p, abs=1e-7)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0.01, 20), min_size=1, max_size=8))
    def test_nondecreasing(self, lam):
        # wider spreads can need more than the default term budget
        assume(max(lam) / min(lam) <= 200)
        mix = ChiSquareMixture(lam)
        xs = np.linspace(0, 6 * mix.mean, 40)
        p = [farebrother_cdf(mix, x) for x in xs]
        assert np.all(np.diff(p) >= -1e-8)

    def test_extreme_spread_converges_or_raises(self):
        mix = ChiSquareMixture([1.0, 1.0, 1.0, 1.0, 19.0, 20.0, 20.0, 0.01])
        for x in (5.0, 60.0, 378.06):
            try:
                p = farebrother_cdf(mix, x)
            except NumericError:
                continue
            assert 0.0 <= p <= 1.0

    def test_term_limit_raises(self):
        with pytest.raises(NumericError):
            farebrother_cdf(ChiSquareMixture([1e-3, 1e3]), 50.0, max_terms=3)

    def test_argument_checks(self):
        mix = ChiSquareMixture([1.0])
        with pytest.raises(DomainError):
            farebrother_cdf(mix, -1.0)
        with pytest.raises(DomainError):
            farebrother_cdf(mix, 1.0, eps=0.5)


class TestGamma:
    def test_chi2_four(self):
        assert gamma_two_moment_cdf(4, 8, 9.487729) == pytest.approx(0.95, abs=1e-6)

    def test_zero(self):
        assert gamma_two_moment_cdf(3, 2, 0.0) == 0.0

    def test_close_to_farebrother(self):
        mix = ChiSquareMixture([1.0, 2.0, 3.0])
        for q in np.linspace(0.1, 0.9, 9):
            x = stats.gamma.ppf(q, mix.mean**2 / mix.variance, scale=mix.variance / mix.mean)
            assert abs(gamma_two_moment_cdf(mix.mean, mix.variance, x)
                       - farebrother_cdf(mix, x)) < 0.05

    def test_domain(self):
        with pytest.raises(DomainError):
            gamma_two_moment_cdf(0, 1, 1)


class TestChiSquareFamily:
    def test_null_qiv(self):
        assert null_cdf_qiv(2, 3.841459) == pytest.approx(0.95, abs=1e-6)
        assert null_cdf_qiv(5, 0.0) == 0.0
        assert null_cdf_qiv(11, stats.chi2.median(10)) == pytest.approx(0.5, abs=1e-12)
        assert stats.chi2.median(10) == pytest.approx(9.342, abs=1e-3)

    def test_bj_reduces_to_chi2(self, effects):
        for x in (0.5, 2.0, 4.0, 9.0):
            assert bj_cdf(effects, 0.0, x) == pytest.approx(null_cdf_qiv(effects.k, x), abs=1e-6)

    def test_bj_decreasing_in_tau2(self, effects):
        p = [bj_cdf(effects, t, 6.0) for t in (0, 0.1, 0.5, 1, 3, 10)]
        assert np.all(np.diff(p) < 0)

    def test_bj_monte_carlo(self, rng):
        es = EffectSet([0.1, 0.4, 0.9], [0.08, 0.2, 0.12], [5.0, 5.0, 5.0], [18.0] * 3)
        tau2, n = 0.3, 400_000
        w = 1 / es.v2
        theta = rng.normal(0, np.sqrt(es.v2 + tau2), size=(n, 3))
        mean = (theta * w).sum(1, keepdims=True) / w.sum()
        q = ((theta - mean) ** 2 * w).sum(1)
        for x in np.quantile(q, [0.25, 0.5, 0.9]):
            assert abs(bj_cdf(es, tau2, x) - np.mean(q <= x)) < 0.005

    def test_kdb_large_n_approaches_chi2(self):
        es = EffectSet(np.zeros(6) + 0.3, np.full(6, 1 / 2500), np.full(6, 2500.0),
                       np.full(6, 9998.0))
        assert kdb_df(es) == pytest.approx(5, abs=0.01)
        assert abs(kdb_cdf(es, 4.0) - null_cdf_qiv(6, 4.0)) < 0.01

    def test_kdb_small_n_below_k_minus_one(self, rng):
        # K = 5, n = 20 per study, as in the smallest simulation cells
        dfs = [kdb_df(make_effects(rng, K=5, n=20, tau2=0.0)) for _ in range(20)]
        assert np.mean(dfs) < 4

    def test_kdb_df_tracks_simulated_mean(self, rng):
        # E(Q_IV) at tau2 = 0 by simulation vs the corrected moment at the true delta
        K, n, d = 5, 20, 0.5
        reps = 20_000
        qs = []
        for _ in range(reps):
            es = make_effects(rng, K=K, n=n, delta=d, tau2=0.0)
            w = 1 / es.v2
            qs.append(np.sum(w * (es.g - np.sum(w * es.g) / w.sum()) ** 2))
        qs = np.array(qs)
        es = EffectSet(np.full(K, d), np.full(K, 0.1), np.full(K, n / 4), np.full(K, n - 2.0))
        assert abs(kdb_df(es) - qs.mean()) < 0.1

    def test_kdb_zero(self, effects):
        assert kdb_cdf(effects, 0.0) == 0.0


class TestQfApproximations:
    def test_mode_difference(self, effects):
        a = qf_cdf(effects, 5.0, 0.3, VarianceMode.CONDITIONAL)
        b = qf_cdf(effects, 5.0, 0.3, VarianceMode.UNCONDITIONAL)
        assert 0 < a < 1 and 0 < b < 1

    def test_gamma_variance_exceeds_normal_theory(self, effects):
        # the fourth-cumulant term of g adds to 2 sum lambda^2
        from qhet.quadform import ess_variances

        s = ess_variances(effects, 0.5, VarianceMode.UNCONDITIONAL)
        mix = mixture_from_q(effects.n_tilde, s, 0.0)
        mean, var = qf_moments(effects, 0.5, VarianceMode.UNCONDITIONAL)
        assert mean == pytest.approx(mix.mean, rel=1e-10)
        assert var > mix.variance

    def test_gamma_cdf_in_unit_interval(self, effects):
        for x in (0.0, 1.0, 10.0, 100.0):
            assert 0.0 <= qf_gamma_cdf(effects, x, 0.0, VarianceMode.CONDITIONAL) <= 1.0
