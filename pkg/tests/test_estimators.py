import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize
from statsmodels.stats.meta_analysis import combine_effects

from qhet import (
    ConvergenceError,
    DomainError,
    EffectSet,
    Tau2Method,
    VarianceMode,
    estimate,
    kdb_df,
    tau2_iv,
    tau2_median_farebrother,
    tau2_moment_ss,
    var_g_unconditional,
)
from qhet.estimators import tau2_search_cap
from qhet.quadform import qf_cdf
from qhet.qstat import q_weighted

from conftest import make_effects

ALL = [m.value for m in Tau2Method]


def q_gen(es, tau2):
    return q_weighted(es.g, 1 / (es.v2 + tau2)).q


def reml_oracle(es):
    def neg(t):
        w = 1 / (es.v2 + t)
        mu = np.sum(w * es.g) / w.sum()
        return 0.5 * (np.sum(np.log(es.v2 + t)) + np.log(w.sum()) + np.sum(w * (es.g - mu) ** 2))

    res = optimize.minimize_scalar(neg, bounds=(0, tau2_search_cap(es)), method="bounded",
                                   options={"xatol": 1e-12})
    return res.x if neg(res.x) < neg(0.0) else 0.0


class TestMomentSS:
    def test_worked_example(self):
        a = math.sqrt(0.7)
        es = EffectSet([-a, 0.0, a], [0.2] * 3, [5.0] * 3, [18.0] * 3)
        assert q_weighted(es.g, es.n_tilde).q == pytest.approx(7.0)
        est = tau2_moment_ss(es, VarianceMode.CONDITIONAL)
        assert est.value == pytest.approx(0.5, abs=1e-12)
        assert est.method is Tau2Method.SSC and not est.truncated

    def test_homogeneous_truncates(self):
        es = EffectSet([0.4] * 4, [0.1] * 4, [10.0] * 4, [38.0] * 4)
        for mode in VarianceMode:
            est = tau2_moment_ss(es, mode)
            assert est.value == 0.0 and est.truncated

    def test_ssu_plugin_formula(self, effects):
        # one pass with delta-hat = n-tilde weighted mean and tau2 = SSC value
        ssc = tau2_moment_ss(effects).value
        d = np.sum(effects.n_tilde * effects.g) / effects.n_tilde.sum()
        ev2 = var_g_unconditional(d, ssc, effects.m, effects.n_tilde)
        w = effects.n_tilde
        q = w / w.sum()
        raw = (q_weighted(effects.g, w).q / w.sum() - np.sum(q * (1 - q) * ev2)) / np.sum(
            q * (1 - q))
        assert tau2_moment_ss(effects, VarianceMode.UNCONDITIONAL).value == pytest.approx(
            max(raw, 0.0), rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(1.01, 5))
    def test_monotone_in_spread(self, seed, factor):
        es = make_effects(np.random.default_rng(seed), K=6)
        mean = es.g.mean()
        wider = EffectSet(mean + factor * (es.g - mean), es.v2, es.n_tilde, es.m)
        assert tau2_moment_ss(wider).value >= tau2_moment_ss(es).value


class TestMedian:
    def test_zero_q(self):
        es = EffectSet([0.2] * 5, [0.1] * 5, [10.0] * 5, [38.0] * 5)
        for mode in VarianceMode:
            est = tau2_median_farebrother(es, mode)
            assert est.value == 0.0 and est.truncated

    @pytest.mark.parametrize("mode", list(VarianceMode))
    def test_self_consistency(self, rng, mode):
        hits = 0
        for _ in range(10):
            es = make_effects(rng, K=5, tau2=1.0)
            est = tau2_median_farebrother(es, mode)
            if est.truncated:
                continue
            hits += 1
            qf = q_weighted(es.g, es.n_tilde).q
            assert abs(qf_cdf(es, qf, est.value, mode) - 0.5) <= 1e-4
        assert hits > 0

    def test_cdf_decreasing_in_tau2(self, rng):
        for _ in range(5):
            es = make_effects(rng, K=5)
            qf = q_weighted(es.g, es.n_tilde).q
            for mode in VarianceMode:
                p = [qf_cdf(es, qf, t, mode) for t in np.linspace(0, 3, 25)]
                assert np.all(np.diff(p) < 0)

    def test_extreme_spread_stays_below_cap(self):
        es = EffectSet([0.0, 10.0], [1e-4, 1e-4], [1e6, 1e6], [4e6, 4e6])
        assert tau2_search_cap(es) == pytest.approx(10 * 10.0**2 + 1)
        est = tau2_median_farebrother(es)
        assert 0 < est.value < tau2_search_cap(es) and not est.truncated


class TestInverseVariance:
    def test_dl_unit_weights(self):
        es = EffectSet([-math.sqrt(2), 0.0, math.sqrt(2)], [1.0] * 3, [1.0] * 3, [10.0] * 3)
        assert tau2_iv(es, "DL").value == pytest.approx(1.0, abs=1e-12)

    def test_dl_truncates(self):
        es = EffectSet([0.0, 0.1, 0.2], [1.0] * 3, [1.0] * 3, [10.0] * 3)
        est = tau2_iv(es, "DL")
        assert est.value == 0.0 and est.truncated

    def test_dl_and_mp_against_statsmodels(self, rng):
        for _ in range(20):
            es = make_effects(rng, K=int(rng.integers(3, 15)), tau2=rng.uniform(0, 1))
            # statsmodels reports the untruncated DL moment
            dl = max(0.0, combine_effects(es.g, es.v2, method_re="chi2").tau2)
            assert tau2_iv(es, "DL").value == pytest.approx(dl, abs=1e-12)
            assert tau2_iv(es, "MP").value == pytest.approx(
                combine_effects(es.g, es.v2, method_re="iterated").tau2, abs=1e-5)

    def test_mp_root(self, rng):
        for _ in range(20):
            es = make_effects(rng, K=8, tau2=1.0)
            est = tau2_iv(es, "MP")
            if not est.truncated:
                assert q_gen(es, est.value) == pytest.approx(es.k - 1, abs=1e-6)

    def test_kdb_root(self, rng):
        for _ in range(10):
            es = make_effects(rng, K=8, tau2=1.0)
            est = tau2_iv(es, "KDB")
            if not est.truncated:
                assert q_gen(es, est.value) == pytest.approx(kdb_df(es), abs=1e-6)

    def test_reml_against_likelihood_maximum(self, rng):
        for _ in range(20):
            es = make_effects(rng, K=10, tau2=rng.uniform(0, 1.5))
            assert tau2_iv(es, "REML").value == pytest.approx(reml_oracle(es), abs=1e-6)

    def test_reml_nonconvergence(self, effects, monkeypatch):
        import qhet.estimators as mod

        monkeypatch.setattr(mod, "REML_MAXITER", 1)
        monkeypatch.setattr(mod, "REML_TOL", 0.0)
        with pytest.raises(ConvergenceError) as err:
            tau2_iv(effects, "REML")
        assert err.value.iterations == 1

    def test_k2_boundary_agreement(self):
        # equal weights and Q_IV exactly K - 1 = 1: every IV estimator sits at 0
        es = EffectSet([0.0, math.sqrt(2)], [1.0, 1.0], [1e6, 1e6], [1e7, 1e7])
        vals = [tau2_iv(es, m).value for m in ("DL", "REML", "MP", "KDB")]
        assert max(vals) - min(vals) <= 1e-6
        assert vals[0] == pytest.approx(0.0, abs=1e-12)

    def test_rejects_non_iv(self, effects):
        with pytest.raises(DomainError):
            tau2_iv(effects, "SSC")


class TestAllEstimators:
    @pytest.mark.parametrize("method", ALL)
    def test_location_invariance(self, effects, method):
        a = estimate(effects, method).value
        b = estimate(effects.shifted(3.0), method).value
        if method in ("SSU", "SMU", "KDB"):
            # these plug the mean effect into the variance model, so only
            # a sign flip is a symmetry for them
            flipped = EffectSet(-effects.g, effects.v2, effects.n_tilde, effects.m)
            b = estimate(flipped, method).value
        assert b == pytest.approx(a, abs=1e-6)

    @pytest.mark.parametrize("method", ALL)
    def test_nonnegative(self, rng, method):
        for _ in range(5):
            est = estimate(make_effects(rng, K=4, tau2=0.0), method)
            assert est.value >= 0
            assert est.method.value == method

    def test_homogeneous_all_zero(self):
        es = EffectSet([0.3] * 4, [0.1] * 4, [10.0] * 4, [38.0] * 4)
        assert all(estimate(es, m).value == 0.0 for m in ALL)
