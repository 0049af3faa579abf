import json
import math
import warnings

import numpy as np
import pytest
from scipy import stats

from weakiv import (
    BootstrapInstabilityError,
    IVModel,
    InferenceResult,
    IntervalSet,
    PreconditionError,
    VCovSpec,
    analytic_infer,
    ar_confidence_set,
    ar_infer,
    ar_test,
    bootstrap_infer,
    component_fits,
    partial_f,
    tf_adjust,
    tf_infer,
    tsls_fit,
)
from weakiv.inference import _ARPieces, ar_accepts, ar_statistic, invert_pvalue
from weakiv.tftable import critical_value

from conftest import AR_CASES, ar_design, grid_set, random_design


class TestIntervalSet:
    @pytest.mark.parametrize(
        "ivs,kind",
        [
            ([(0, 1)], "bounded"),
            ([(-math.inf, 1)], "unbounded_left"),
            ([(0, math.inf)], "unbounded_right"),
            ([(-math.inf, math.inf)], "whole_line"),
            ([], "empty"),
            ([(3, 4), (0, 1)], "disconnected"),
        ],
    )
    def test_kinds(self, ivs, kind):
        assert IntervalSet.of(ivs).kind == kind

    def test_overlapping_pieces_merge(self):
        s = IntervalSet.of([(2, 5), (0, 3)])
        assert s.intervals == ((0.0, 5.0),) and s.bounded

    def test_membership_and_bounds(self):
        s = IntervalSet.of([(-math.inf, -1), (1, math.inf)])
        assert 0.0 not in s and 5.0 in s and -1.0 in s
        assert s.low == -math.inf and s.high == math.inf

    def test_json_round_trip(self):
        for s in (IntervalSet.of([(-math.inf, -1), (1, math.inf)]), IntervalSet.empty(), IntervalSet.of([(0.1, 0.2)], ["escape"])):
            text = json.dumps(s.to_dict(), allow_nan=False)
            assert IntervalSet.from_dict(json.loads(text)) == s

    def test_result_round_trip(self, fixa):
        res = ar_infer(fixa)
        back = InferenceResult.from_dict(json.loads(json.dumps(res.to_dict(), allow_nan=False)))
        assert back.ci == res.ci and back.p_null == res.p_null


class TestAnalytic:
    def test_normal_interval(self, fixa):
        res = analytic_infer(fixa)
        fit = tsls_fit(fixa, VCovSpec("hc1"))
        z = stats.norm.ppf(0.975)
        assert res.ci.low == pytest.approx(2.5 - z * fit.se[0], rel=1e-12)
        assert res.p_null == pytest.approx(2 * stats.norm.sf(2.5 / fit.se[0]), rel=1e-12)


class TestAR:
    @pytest.mark.parametrize("flavor", ["classic", "hc1", "cr1"])
    def test_pvalue_at_zero_is_reduced_form_wald(self, flavor):
        rng = np.random.default_rng(1)
        for p_z in (1, 3):
            m = random_design(rng, n=90, p_z=p_z, k_x=1, clusters=15, hetero=True)
            spec = VCovSpec(flavor, "g" if flavor == "cr1" else None)
            _, reduced = component_fits(m, spec)
            g = reduced.coef
            wald = float(g @ np.linalg.solve(reduced.vcov, g))
            assert ar_test(m, 0.0, spec) == pytest.approx(stats.chi2.sf(wald, p_z), abs=1e-10)

    def test_vectorized_statistic_matches_direct_regressions(self):
        m = random_design(np.random.default_rng(2), n=70, p_z=2, k_x=2, clusters=10)
        for spec in (VCovSpec("classic"), VCovSpec("hc1"), VCovSpec("cr1", "g")):
            pc = _ARPieces(m, spec)
            taus = np.array([-3.0, 0.0, 1.5, 40.0])
            direct = [ar_statistic(m, t, spec) for t in taus]
            np.testing.assert_allclose(pc.stat(taus), direct, rtol=1e-10)

    def test_set_is_the_acceptance_region(self):
        m = random_design(np.random.default_rng(3), n=50, pi=0.3)
        s = ar_confidence_set(m)
        for t in np.linspace(-20, 20, 81):
            assert (t in s) == (ar_test(m, t) >= 0.05 - 1e-9) or min(abs(t - a) for iv in s.intervals for a in iv) < 1e-8

    @pytest.mark.parametrize("args,kind", AR_CASES, ids=[f"{k}-{i}" for i, (_, k) in enumerate(AR_CASES)])
    def test_exact_set_against_dense_grid(self, args, kind):
        m = ar_design(*args)
        spec = VCovSpec("hc1")
        exact = ar_confidence_set(m, 0.05, spec)
        assert exact.kind == kind
        crit = stats.chi2.ppf(0.95, m.p_z)
        center = float(tsls_fit(m, spec).coef[0])
        se = float(tsls_fit(m, spec).se[0])
        finite = [abs(x - center) for iv in exact.intervals for x in iv if np.isfinite(x)]
        half = max([100 * se] + [1.5 * f for f in finite])
        ivs, step = grid_set(_ARPieces(m, spec).stat, crit, center - half, center + half)
        got = IntervalSet.of(ivs)
        assert got.kind == exact.kind
        assert len(got.intervals) == len(exact.intervals)
        for (a, b), (c, d) in zip(got.intervals, exact.intervals):
            for u, v in ((a, c), (b, d)):
                assert (u == v) if not np.isfinite(v) else abs(u - v) <= step * (1 + 1e-9)

    @pytest.mark.parametrize("args,kind", [c for c in AR_CASES if c[0][2] > 1])
    def test_polynomial_and_grid_methods_agree(self, args, kind):
        m = ar_design(*args)
        exact = ar_confidence_set(m)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            grid = ar_confidence_set(m, method="grid")
        assert grid.kind == exact.kind
        for (a, b), (c, d) in zip(grid.intervals, exact.intervals):
            assert a == pytest.approx(c, rel=1e-6) and b == pytest.approx(d, rel=1e-6)

    def test_accepts_mask(self, fixa):
        s = ar_confidence_set(fixa)
        taus = np.array([s.low - 0.01, s.low + 0.01, s.high - 0.01, s.high + 0.01])
        assert ar_accepts(fixa, taus).tolist() == [False, True, True, False]

    def test_fixa_set(self, fixa):
        s = ar_confidence_set(fixa)
        assert s.kind == "bounded"
        assert s.low == pytest.approx(2.0067, abs=1e-4)
        assert s.high == pytest.approx(39.34, abs=1e-2)
        assert 2.5 in s


class TestBootstrap:
    def _model(self):
        return random_design(np.random.default_rng(4), n=80, pi=0.6, clusters=16, hetero=True)

    def test_location_shift(self):
        m = self._model()
        spec = VCovSpec("bootstrap", "g", boot_reps=300, seed=3)
        c0, t0 = bootstrap_infer(m, spec)
        shifted = m.with_outcome(m.y + 4.0 * m.d)
        c1, t1 = bootstrap_infer(shifted, spec)
        for a, b in ((c0, c1), (t0, t1)):
            assert b.point == pytest.approx(a.point + 4.0, rel=1e-10)
            assert b.ci.low == pytest.approx(a.ci.low + 4.0, rel=1e-9)
            assert b.ci.high == pytest.approx(a.ci.high + 4.0, rel=1e-9)

    def test_deterministic_across_jobs(self):
        m = self._model()
        spec = VCovSpec("bootstrap", "g", boot_reps=200, seed=9)
        a = bootstrap_infer(m, spec)
        b = bootstrap_infer(m, spec, n_jobs=3)
        assert [r.to_dict() for r in a] == [r.to_dict() for r in b]

    def test_pvalue_agrees_with_interval(self):
        m = self._model()
        for seed in range(3):
            spec = VCovSpec("bootstrap", "g", boot_reps=200, seed=seed)
            for res in bootstrap_infer(m, spec, alpha=0.05):
                excludes = 0.0 not in res.ci
                assert excludes == (res.p_null <= 0.05)

    def test_too_many_dropped_replicates(self):
        # one treated row: most resamples lose all instrument variation
        z = np.zeros(20)
        z[0] = 1.0
        rng = np.random.default_rng(5)
        d = z + rng.standard_normal(20)
        m = IVModel(d + rng.standard_normal(20), d, z)
        with pytest.raises(BootstrapInstabilityError):
            bootstrap_infer(m, VCovSpec("bootstrap", boot_reps=200, seed=1))

    def test_invert_pvalue(self):
        assert invert_pvalue(lambda a: a >= 0.3) == pytest.approx(0.3, abs=1e-9)
        assert invert_pvalue(lambda a: False) == 1.0


class TestTF:
    def test_interval_scales_robust_se(self, fixa):
        res = tf_infer(fixa)
        fit = tsls_fit(fixa, VCovSpec("hc1"))
        first, _ = component_fits(fixa, VCovSpec("hc1"))
        c = critical_value(partial_f(first))
        assert res.ci.low == pytest.approx(2.5 - c * fit.se[0], rel=1e-12)
        assert res.ci.high == pytest.approx(2.5 + c * fit.se[0], rel=1e-12)
        assert res.meta["critical_value"] == c

    def test_strong_instrument_matches_analytic(self):
        res = tf_adjust(2.0, 104.7, point=1.0, se=0.5)
        ana_half = stats.norm.ppf(0.975) * 0.5
        assert res.ci.high - 1.0 == pytest.approx(ana_half, rel=1e-4)

    def test_below_support_is_whole_line(self):
        res = tf_adjust(5.0, 3.0)
        assert res.ci.kind == "whole_line" and math.isinf(res.se)

    def test_requires_single_instrument(self):
        with pytest.raises(PreconditionError):
            tf_infer(random_design(np.random.default_rng(6), p_z=2))


def test_irrelevant_instrument_whole_line_rate():
    # with pi = 0 the supremum over tau of the AR statistic is the Wald form
    # of (gamma_hat, pi_hat), a chi2(2) draw; the set is the whole line when
    # it stays below the chi2(1) critical value
    expected = stats.chi2.cdf(stats.chi2.ppf(0.95, 1), 2)
    hits, reps = 0, 400
    for s in range(reps):
        rng = np.random.default_rng(1000 + s)
        z, e = rng.standard_normal((2, 500))
        d = 0.5 * e + np.sqrt(0.75) * rng.standard_normal(500)
        hits += ar_confidence_set(IVModel(d + e, d, z)).kind == "whole_line"
    se = np.sqrt(expected * (1 - expected) / reps)
    assert abs(hits / reps - expected) < 3 * se
