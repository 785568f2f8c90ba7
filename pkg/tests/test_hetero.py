import numpy as np
import pytest
from scipy import stats

from qhet import ApproxMethod, DomainError, EffectSet, UsageError, test_heterogeneity
from qhet.hetero import upper_tail_p
from qhet.qstat import q_weighted

from conftest import make_effects

NULL = ["F SW", "M2 SW", "chi2", "KDB"]
ALT = ["F SW", "M2 SW", "BJ"]


class TestHeterogeneity:
    def test_equal_effects_never_reject(self):
        es = EffectSet([0.2] * 5, [0.1] * 5, [10.0] * 5, [38.0] * 5)
        for m in NULL:
            r = test_heterogeneity(es, m)
            assert r.p_value == 1.0 and not r.reject
        for m in ALT:
            assert test_heterogeneity(es, m, tau0_sq=0.5).p_value == 1.0

    def test_k2_chi2(self):
        es = EffectSet([0.1, 0.9], [0.1, 0.2], [10.0, 5.0], [38.0, 18.0])
        q = q_weighted(es.g, 1 / es.v2).q
        r = test_heterogeneity(es, "chi2")
        assert r.p_value == pytest.approx(1 - stats.chi2.cdf(q, 1), abs=1e-14)
        assert r.statistic == pytest.approx(q)

    def test_bj_at_zero_is_chi2(self, effects):
        assert test_heterogeneity(effects, "BJ").p_value == pytest.approx(
            test_heterogeneity(effects, "chi2").p_value, abs=1e-6)

    def test_reject_iff_p_below_alpha(self, rng):
        for _ in range(20):
            es = make_effects(rng, K=6, tau2=0.3)
            for m in NULL:
                r = test_heterogeneity(es, m, alpha=0.1)
                assert r.reject == (r.p_value < 0.1)
                assert r.method is ApproxMethod(m)

    @pytest.mark.parametrize("method", NULL)
    def test_p_nonincreasing_in_q(self, effects, method):
        mean = effects.g.mean()
        ps = []
        for c in np.linspace(0.2, 3, 15):
            es = EffectSet(mean + c * (effects.g - mean), effects.v2, effects.n_tilde, effects.m)
            ps.append(upper_tail_p(es, method)[1])
        assert np.all(np.diff(ps) <= 1e-12)

    def test_null_only_pairing(self, effects):
        for m in ("chi2", "KDB"):
            with pytest.raises(UsageError):
                test_heterogeneity(effects, m, tau0_sq=0.5)

    def test_domain(self, effects):
        with pytest.raises(DomainError):
            test_heterogeneity(effects, "F SW", alpha=1.5)
        with pytest.raises(DomainError):
            test_heterogeneity(effects, "F SW", tau0_sq=-1)

    def test_p_decreases_with_tau0_fixed_data(self, effects):
        # a larger hypothesized tau0 makes the observed Q less extreme
        ps = [test_heterogeneity(effects, "F SW", tau0_sq=t).p_value for t in (0, 0.5, 1, 2)]
        assert np.all(np.diff(ps) > 0)


class TestNullCalibration:
    def test_fsw_uniform_at_large_n(self):
        rng = np.random.default_rng(640)
        p = [test_heterogeneity(make_effects(rng, K=10, n=640, delta=0.5, tau2=0.0),
                                "F SW").p_value for _ in range(5000)]
        assert stats.kstest(p, "uniform").statistic <= 0.03

    def test_chi2_level_below_nominal(self):
        from qhet.sim import Cell, SimConfig, run_cell

        cell = Cell(10, (20,), 0.5, 0.5, 0.0)
        res = run_cell(cell, 5000, 2024, SimConfig(reps=5000, methods=["chi2"]))
        assert res.get("chi2", "reject@0.05") < 0.05
