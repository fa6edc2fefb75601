import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import iqm_sort_slice, linear_policy_value
from regvi import bounding as bd
from regvi.analysis import (
    error_terms,
    gap_statistics,
    iqm,
    is_converged,
    limit_bound_check,
    normalize_curve,
    optimal_reference,
    suboptimality,
    suboptimality_curve,
)
from regvi.soft_ops import RegParams, soft_optimal_value
from regvi.solvers import PsiInit, Scheme, SolverConfig, run_scheme

PARAMS = RegParams(0.3, 0.6)


def run(mdp, f, g, iterations=600, params=PARAMS, **kw):
    return run_scheme(mdp, SolverConfig(Scheme.BAL, params, f, g, iterations=iterations, **kw))


class TestIqm:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
    def test_matches_sort_slice(self, xs):
        assert iqm(xs) == pytest.approx(iqm_sort_slice(xs), rel=1e-12, abs=1e-6)

    def test_known(self):
        assert iqm([1, 2, 3, 4, 100, -100, 5, 6]) == pytest.approx(3.5)
        assert iqm([7.0]) == 7.0

    def test_axis(self, rng):
        x = rng.normal(size=(100, 5))
        np.testing.assert_allclose(iqm(x, axis=0), [iqm_sort_slice(list(c)) for c in x.T], atol=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            iqm([])


class TestSuboptimality:
    def test_matches_linear_solve(self, small_mdps):
        mdp = small_mdps[0]
        trace = run(mdp, bd.identity(), bd.identity(), iterations=5)
        v_star = soft_optimal_value(mdp, PARAMS.tau, 1e-12)
        raw = suboptimality(mdp, trace, PARAMS.tau, v_star)
        for rec, got in zip(trace.records, raw):
            v = linear_policy_value(mdp.transition, mdp.reward, mdp.discount, rec.policy, PARAMS.tau)
            assert got == pytest.approx(np.max(np.abs(v - v_star)), abs=1e-10)

    def test_curve_normalized_and_decreasing(self, small_mdps):
        mdp = small_mdps[1]
        trace = run(mdp, bd.identity(), bd.identity(), iterations=200,
                    psi_init=PsiInit("uniform", 5.0), seed=1)
        v_star = soft_optimal_value(mdp, PARAMS.tau, 1e-12)
        curve = suboptimality_curve(mdp, trace, PARAMS.tau, v_star)
        assert curve[0] == 1.0
        assert curve[-1] < 1e-6

    def test_normalize_zero_start(self):
        np.testing.assert_array_equal(normalize_curve([0.0, 1.0]), [0.0, 1.0])
        np.testing.assert_array_equal(normalize_curve([2.0, 1.0]), [1.0, 0.5])


class TestLimitBounds:
    @pytest.mark.parametrize("f,g", [(bd.identity(), bd.identity()), (bd.clip(), bd.identity()),
                                     (bd.tanh(), bd.tanh()), (bd.zero(), bd.zero())])
    def test_converged_runs_satisfy_bounds(self, small_mdps, f, g):
        for mdp in small_mdps:
            trace = run(mdp, f, g, psi_init=PsiInit("uniform", 3.0), seed=7)
            report = limit_bound_check(mdp, trace, PARAMS, f, g)
            assert report.converged
            assert report.all_satisfied, report.satisfied
            if g.is_identity:
                assert report.condition_held
                assert "psi_floor" in report.satisfied

    def test_width_formula(self, small_mdps):
        mdp = small_mdps[0]
        trace = run(mdp, bd.tanh(), bd.tanh(), iterations=50)
        rep = limit_bound_check(mdp, trace, PARAMS, bd.tanh(), bd.tanh())
        expected = (0.6 + 0.9 * 0.3 * rep.delta_bar_g * math.log(3)) / 0.1
        assert rep.width == pytest.approx(expected)
        assert rep.delta_bar_g == pytest.approx(1.0, abs=1e-6)
        d = rep.to_dict()
        assert set(d["satisfied"]) == {"value_upper", "value_lower", "psi_upper", "psi_lower"}

    def test_identity_report_serializes_infinite_cf(self, small_mdps):
        mdp = small_mdps[0]
        trace = run(mdp, bd.identity(), bd.identity(), iterations=20)
        d = limit_bound_check(mdp, trace, PARAMS, bd.identity(), bd.identity()).to_dict()
        assert d["c_f"] is None and d["width"] is None

    def test_short_run_not_converged(self, small_mdps):
        trace = run(small_mdps[0], bd.identity(), bd.identity(), iterations=3,
                    psi_init=PsiInit("uniform", 3.0))
        assert not is_converged(trace)


class TestErrorTerms:
    def test_reference_policy(self, small_mdps):
        mdp = small_mdps[0]
        pi, a = optimal_reference(mdp, PARAMS)
        np.testing.assert_allclose(pi.sum(axis=1), 1.0)
        np.testing.assert_allclose(a, PARAMS.alpha * np.log(pi), atol=1e-10)
        _, a_tau = optimal_reference(mdp, PARAMS, anchor="tau")
        np.testing.assert_allclose(a_tau, PARAMS.tau * np.log(pi), atol=1e-10)
        with pytest.raises(ValueError):
            optimal_reference(mdp, PARAMS, anchor="beta")

    def test_bounded_f_shrinks_cross_term(self, small_mdps):
        for mdp in small_mdps:
            pi, a = optimal_reference(mdp, PARAMS)
            trace = run(mdp, bd.tanh(), bd.identity(), iterations=40,
                        psi_init=PsiInit("uniform", 10.0), seed=3)
            rep = error_terms(mdp, trace, PARAMS, bd.tanh(), bd.identity(), pi, a)
            assert np.all(rep.cross <= rep.cross_identity + 1e-12)
            assert np.all(rep.cross <= PARAMS.kappa * rep.c_f + 1e-12)
            # with g = identity the entropy term reduces to its anchor
            np.testing.assert_allclose(rep.entropy_term, rep.entropy_identity, atol=1e-12)

    def test_shapes_checked(self, small_mdps):
        trace = run(small_mdps[0], bd.identity(), bd.identity(), iterations=2)
        with pytest.raises(ValueError):
            error_terms(small_mdps[0], trace, PARAMS, bd.identity(), bd.identity(),
                        np.ones((2, 2)), np.ones((2, 2)))


def test_gap_statistics_grow_for_advantage_learning(small_mdps):
    trace = run(small_mdps[0], bd.identity(), bd.identity(), iterations=100)
    stats = gap_statistics(trace)
    assert len(stats.iterations) == 101
    assert stats.gap_mean[-1] > stats.gap_mean[1]
