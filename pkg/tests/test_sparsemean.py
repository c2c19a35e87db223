"""Sparse-mean testbed: instances, statistics, calibration, power sweeps."""

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from tokenmark.errors import InvalidInputError, ScanBudgetError
from tokenmark.sparsemean import (
    H0,
    HA,
    NULL_DRAWS,
    POWER_CSV_HEADER,
    SCAN_BUDGET,
    SCAN_TEST,
    THRESHOLD_TEST,
    SparseMeanInstance,
    null_quantile,
    power_curve,
    rejection_rate,
    run_test,
    sample_instance,
    scan_statistic,
    scan_test,
    threshold_statistic,
    threshold_test,
    wilson_interval,
)


class TestSampleInstance:
    def test_h0_moments(self):
        inst = sample_instance(4000, 8, 2, 0.5, H0, seed=0)
        assert inst.data.shape == (4000, 8)
        assert inst.truth == H0
        assert inst.planted_support is None
        se = 0.5 / math.sqrt(4000)
        assert np.all(np.abs(inst.data.mean(axis=0)) < 4 * se)
        np.testing.assert_allclose(inst.data.var(axis=0), 0.25, atol=0.03)

    def test_ha_first_moments_vanish(self):
        # The Rademacher sign wipes the planted mean out of first moments;
        # that is the whole point of the construction.
        inst = sample_instance(4000, 8, 2, 1.0, HA, seed=1)
        se = math.sqrt((1.0 + 0.5) / 4000)  # noise plus planted coordinate
        assert np.all(np.abs(inst.data.mean(axis=0)) < 4 * se)

    def test_ha_sign_corrected_mean_reveals_plant(self):
        inst = sample_instance(4000, 8, 2, 1.0, HA, seed=2)
        aligned = (inst.data * inst.planted_signs[:, None]).mean(axis=0)
        on = aligned[inst.planted_support]
        np.testing.assert_allclose(on, 1.0 / math.sqrt(2), atol=0.08)
        off = np.delete(aligned, inst.planted_support)
        assert np.all(np.abs(off) < 0.08)

    def test_force_positive_signs(self):
        inst = sample_instance(4000, 8, 3, 1.0, HA, seed=3, force_positive_signs=True)
        assert np.all(inst.planted_signs == 1)
        on = inst.data.mean(axis=0)[inst.planted_support]
        np.testing.assert_allclose(on, 1.0 / math.sqrt(3), atol=0.08)

    def test_ha_second_moments_lift_on_support(self):
        inst = sample_instance(6000, 6, 2, 1.0, HA, seed=4)
        second = (inst.data**2).mean(axis=0)
        np.testing.assert_allclose(second[inst.planted_support], 1.5, atol=0.1)
        off = np.delete(second, inst.planted_support)
        np.testing.assert_allclose(off, 1.0, atol=0.1)

    def test_h0_column_means_are_chi_square(self):
        # n * (column mean / epsilon)^2 is chi2(1) under H0.
        inst = sample_instance(50, 400, 4, 0.7, H0, seed=5)
        scaled = 50 * (inst.data.mean(axis=0) / 0.7) ** 2
        assert stats.kstest(scaled, "chi2", args=(1,)).pvalue > 1e-3

    def test_support_is_sorted_size_k(self):
        inst = sample_instance(10, 12, 5, 1.0, HA, seed=6)
        assert inst.planted_support.size == 5
        assert np.all(np.diff(inst.planted_support) > 0)

    def test_deterministic_and_param_sensitive(self):
        a = sample_instance(20, 6, 2, 1.0, HA, seed=7)
        b = sample_instance(20, 6, 2, 1.0, HA, seed=7)
        np.testing.assert_array_equal(a.data, b.data)
        c = sample_instance(20, 6, 2, 1.0, H0, seed=7)
        assert not np.array_equal(a.data, c.data)

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            sample_instance(0, 6, 2, 1.0, H0, seed=0)
        with pytest.raises(InvalidInputError):
            sample_instance(5, 6, 7, 1.0, H0, seed=0)
        with pytest.raises(InvalidInputError):
            sample_instance(5, 6, 2, 0.0, H0, seed=0)
        with pytest.raises(InvalidInputError):
            sample_instance(5, 6, 2, 1.0, "maybe", seed=0)

    def test_instance_consistency_enforced(self):
        with pytest.raises(InvalidInputError):
            SparseMeanInstance(
                data=np.zeros((3, 4)), epsilon=1.0, k=2, truth=HA,
                planted_support=None, planted_signs=None,
            )


class TestStatistics:
    def test_threshold_hand_example(self):
        data = np.array([[1.0, 2.0], [3.0, 4.0]])
        # Second moments: (1+9)/2 = 5 and (4+16)/2 = 10.
        assert threshold_statistic(data, 1) == 10.0
        assert threshold_statistic(data, 2) == 15.0

    def test_scan_hand_example(self):
        data = np.array([[1.0, -2.0], [3.0, 4.0]])
        # k=1 directions are coordinate vectors: mean |col0| = 2, |col1| = 3.
        assert scan_statistic(data, 1) == 3.0

    def test_scan_full_support(self):
        data = np.array([[1.0, 1.0], [-1.0, 3.0]])
        # Only subset is {0, 1}: mean of |row sums| / sqrt(2).
        expected = (abs(2.0) + abs(2.0)) / 2 / math.sqrt(2)
        assert scan_statistic(data, 2) == pytest.approx(expected, abs=1e-15)

    def test_scan_matches_brute_force(self):
        rng = np.random.default_rng(8)
        data = rng.normal(size=(15, 6))
        for k in (1, 2, 3, 6):
            best = max(
                np.abs(data[:, list(combo)].sum(axis=1) / math.sqrt(k)).mean()
                for combo in itertools.combinations(range(6), k)
            )
            assert scan_statistic(data, k) == pytest.approx(best, abs=1e-12)

    def test_scan_budget_refused_before_any_work(self):
        # C(40, 8) is about 77 million; the refusal must come from the
        # budget check, fast, not from an attempted enumeration.
        with pytest.raises(ScanBudgetError):
            scan_statistic(np.zeros((5, 40)), 8)
        assert math.comb(40, 8) > SCAN_BUDGET

    def test_scan_budget_boundary(self):
        # C(20, 10) = 184756 fits comfortably inside the budget.
        assert math.comb(20, 10) < SCAN_BUDGET
        value = scan_statistic(np.random.default_rng(9).normal(size=(4, 20)), 10)
        assert np.isfinite(value)

    def test_input_validation(self):
        with pytest.raises(InvalidInputError):
            threshold_statistic(np.zeros(5), 1)
        with pytest.raises(InvalidInputError):
            scan_statistic(np.zeros((3, 4)), 5)


class TestCalibration:
    def test_quantile_deterministic_and_cached(self):
        a = null_quantile(THRESHOLD_TEST, 30, 8, 2, 1.0, 0.05)
        b = null_quantile(THRESHOLD_TEST, 30, 8, 2, 1.0, 0.05)
        assert a == b

    def test_quantile_monotone_in_alpha(self):
        qs = [null_quantile(THRESHOLD_TEST, 30, 8, 2, 1.0, a) for a in (0.01, 0.05, 0.2)]
        assert qs == sorted(qs, reverse=True)

    def test_unknown_test_and_bad_args(self):
        with pytest.raises(InvalidInputError):
            null_quantile("oracle", 30, 8, 2, 1.0, 0.05)
        with pytest.raises(InvalidInputError):
            null_quantile(THRESHOLD_TEST, 30, 8, 2, 1.0, 0.0)
        with pytest.raises(InvalidInputError):
            null_quantile(THRESHOLD_TEST, 30, 8, 2, 1.0, 0.05, draws=50)

    def test_threshold_level(self):
        # Empirical false-positive rate within 3 binomial sigmas of alpha.
        hits, trials = rejection_rate(THRESHOLD_TEST, H0, 40, 16, 3, 1.0, 0.05, 400, seed=10)
        rate = hits / trials
        band = 3 * math.sqrt(0.05 * 0.95 / trials)
        assert abs(rate - 0.05) < band + 1 / trials

    def test_scan_level(self):
        hits, trials = rejection_rate(SCAN_TEST, H0, 30, 10, 2, 1.0, 0.05, 400, seed=11)
        rate = hits / trials
        band = 3 * math.sqrt(0.05 * 0.95 / trials)
        assert abs(rate - 0.05) < band + 1 / trials


class TestPower:
    def test_both_tests_crush_strong_signal(self):
        for test in (THRESHOLD_TEST, SCAN_TEST):
            hits, trials = rejection_rate(test, HA, 200, 8, 2, 1.0, 0.05, 60, seed=12)
            assert hits / trials >= 0.95

    def test_tiny_samples_are_powerless(self):
        hits, trials = rejection_rate(THRESHOLD_TEST, HA, 2, 32, 4, 1.0, 0.05, 200, seed=13)
        assert hits / trials < 0.2

    def test_power_grows_with_n(self):
        small = rejection_rate(SCAN_TEST, HA, 8, 8, 2, 1.0, 0.05, 150, seed=14)
        large = rejection_rate(SCAN_TEST, HA, 80, 8, 2, 1.0, 0.05, 150, seed=14)
        assert large[0] / large[1] > small[0] / small[1] + 0.1

    def test_full_support_tests_agree_when_saturated(self):
        # At k=d the scan has exactly one subset and both statistics read
        # the same signal; with this much signal each test rejects every
        # planted instance, so they agree trial-by-trial.
        for t in range(200):
            inst = sample_instance(300, 2, 2, 1.0, HA, seed=(15, t))
            a = threshold_test(inst.data, 2, 1.0, 0.05)
            b = scan_test(inst.data, 2, 1.0, 0.05)
            assert a is True and b is True

    def test_run_test_dispatch(self):
        inst = sample_instance(50, 6, 2, 1.0, H0, seed=16)
        assert run_test(THRESHOLD_TEST, inst.data, 2, 1.0, 0.05) in (True, False)
        with pytest.raises(InvalidInputError):
            run_test("magic", inst.data, 2, 1.0, 0.05)


class TestWilson:
    def test_degenerate_endpoints(self):
        lo, hi = wilson_interval(0, 50)
        assert lo == 0.0 and hi < 0.1
        lo, hi = wilson_interval(50, 50)
        assert lo > 0.9 and hi == 1.0

    def test_symmetric_half_case(self):
        lo, hi = wilson_interval(5, 10)
        assert lo == pytest.approx(0.2366, abs=2e-4)
        assert hi == pytest.approx(0.7634, abs=2e-4)
        assert lo + hi == pytest.approx(1.0, abs=1e-12)

    def test_contains_point_estimate(self):
        for hits, trials in ((3, 20), (17, 20), (250, 1000)):
            lo, hi = wilson_interval(hits, trials)
            assert lo < hits / trials < hi

    def test_narrows_with_trials(self):
        w100 = np.diff(wilson_interval(50, 100))[0]
        w1000 = np.diff(wilson_interval(500, 1000))[0]
        assert w1000 < w100 / 2

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            wilson_interval(0, 0)


class TestPowerCurve:
    def test_rows_sorted_and_complete(self):
        points = power_curve(
            [SCAN_TEST, THRESHOLD_TEST], [20, 5, 20], d=6, k=2, epsilon=1.0,
            alpha=0.05, trials=30, seed=17,
        )
        keys = [(p.test, p.n) for p in points]
        assert keys == sorted(keys)
        # Duplicate n collapses; two tests times two sizes.
        assert len(points) == 4

    def test_row_schema(self):
        points = power_curve([THRESHOLD_TEST], [10], d=6, k=2, epsilon=1.0,
                             alpha=0.05, trials=20, seed=18)
        row = points[0].to_row()
        assert len(row) == len(POWER_CSV_HEADER)
        assert row[0] == THRESHOLD_TEST
        assert 0.0 <= points[0].ci_lo <= points[0].power <= points[0].ci_hi <= 1.0

    def test_default_draw_count(self):
        assert NULL_DRAWS == 2000
