import numpy as np
import pytest
from scipy.stats import norm

from dtebounds.distributions import ecdf, kendall_tau
from dtebounds.errors import SeparationDetected, SingularDesign, TooFewTreatedUnits
from dtebounds.first_step import (
    add_intercept,
    check_loss,
    conditional_cdf_y1,
    default_tau_grid,
    default_threshold_grid,
    EmpiricalConditionalCdf,
    fit_distribution_regression,
    fit_quantile_regression,
    invert_qr_to_cdf,
    make_generated_regressor,
    monotone_rearrange,
)
from dtebounds.panel import from_arrays


class TestQuantileRegression:
    def test_intercept_only_matches_sample_quantile(self):
        rng = np.random.default_rng(11)
        y = rng.normal(size=101)  # n*tau non-integer => unique minimizer
        taus = np.array([0.1, 0.25, 0.5, 0.9])
        model = fit_quantile_regression(y, np.ones((101, 1)), taus)
        expected = np.quantile(y, taus, method="inverted_cdf")
        assert np.allclose(model.coef[:, 0], expected, atol=1e-6)

    def test_slope_recovery_median(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=5000)
        y = 2.0 + 3.0 * x + rng.standard_t(df=5, size=5000)
        model = fit_quantile_regression(y, add_intercept(x), np.array([0.5]))
        assert model.coef[0, 1] == pytest.approx(3.0, abs=0.1)

    def test_location_scale_slopes_ordered(self):
        rng = np.random.default_rng(31)
        x = rng.uniform(0.5, 2.0, size=4000)
        y = x * rng.exponential(size=4000)
        model = fit_quantile_regression(y, add_intercept(x), np.array([0.1, 0.9]))
        assert model.coef[1, 1] > model.coef[0, 1]

    def test_check_loss_near_optimum(self):
        rng = np.random.default_rng(41)
        x = rng.normal(size=400)
        y = 1.0 + 0.5 * x + rng.normal(size=400)
        design = add_intercept(x)
        tau = 0.3
        model = fit_quantile_regression(y, design, np.array([tau]))
        loss = check_loss(y, design, model.coef[0], tau)
        for _ in range(200):
            other = model.coef[0] + rng.normal(scale=0.05, size=2)
            assert check_loss(y, design, other, tau) >= loss - 1e-6

    def test_singular_design(self):
        y = np.arange(10.0)
        design = np.column_stack([np.ones(10), np.ones(10)])
        with pytest.raises(SingularDesign):
            fit_quantile_regression(y, design, np.array([0.5]))

    def test_rearranged_quantiles_monotone(self):
        rng = np.random.default_rng(51)
        x = rng.normal(size=300)
        y = x + rng.normal(size=300)
        model = fit_quantile_regression(y, add_intercept(x), default_tau_grid(19))
        preds = model.predict_quantiles(add_intercept(np.array([-2.0, 0.0, 2.0])))
        assert np.all(np.diff(preds, axis=1) >= 0)


class TestInvertQr:
    def test_intercept_only_recovers_ecdf(self):
        rng = np.random.default_rng(61)
        y = rng.normal(size=500)
        taus = default_tau_grid(99)
        model = fit_quantile_regression(y, np.ones((500, 1)), taus)
        f = invert_qr_to_cdf(model, [1.0])
        g = ecdf(y)
        ys = np.linspace(y.min(), y.max(), 200)
        assert np.max(np.abs(f(ys) - g(ys))) <= 1.5 / 100 + 1e-9

    def test_at_most_grid_plus_one_values(self):
        rng = np.random.default_rng(71)
        y = rng.normal(size=200)
        model = fit_quantile_regression(y, np.ones((200, 1)), default_tau_grid(99))
        f = invert_qr_to_cdf(model, [1.0])
        assert np.unique(f(np.sort(y))).size <= 100

    def test_galois_vs_rearranged_quantiles(self):
        rng = np.random.default_rng(81)
        x = rng.normal(size=400)
        y = 1 + x + rng.normal(size=400)
        taus = default_tau_grid(49)
        model = fit_quantile_regression(y, add_intercept(x), taus)
        row = add_intercept(np.array([0.7]))
        preds = model.predict_quantiles(row)[0]
        f = invert_qr_to_cdf(model, row[0])
        # F(q_tau) >= tau exactly on the grid
        ks = (np.arange(taus.size) + 1) / taus.size
        assert np.all(f(preds) >= ks - 1e-12)


class TestDistributionRegression:
    def test_intercept_only_matches_fraction(self):
        rng = np.random.default_rng(91)
        y = rng.normal(size=300)
        qs = np.quantile(y, [0.2, 0.5, 0.8])
        model = fit_distribution_regression(y, np.ones((300, 1)), qs)
        preds = model.predict_cdf(np.array([[1.0]]))[0]
        fracs = np.array([(y <= q).mean() for q in qs])
        assert np.allclose(preds, fracs, atol=1e-8)

    def test_threshold_below_support_is_zero(self):
        y = np.linspace(1, 2, 50)
        model = fit_distribution_regression(y, np.ones((50, 1)), np.array([0.0, 1.5]))
        preds = model.predict_cdf(np.array([[1.0]]))[0]
        assert preds[0] == 0.0
        assert model.const_zero[0]

    def test_probit_gaussian_dgp(self):
        rng = np.random.default_rng(101)
        n = 5000
        x = rng.normal(size=n)
        y = x + rng.normal(size=n)
        qs = default_threshold_grid(y, 99)
        model = fit_distribution_regression(y, add_intercept(x), qs, link="probit")
        for x0 in (-1.0, 0.0, 1.0):
            fitted = model.predict_cdf(np.array([[1.0, x0]]))[0]
            truth = norm.cdf(qs - x0)
            assert np.max(np.abs(fitted - truth)) < 0.05

    def test_ecdf_exact_at_every_threshold_saturated(self):
        rng = np.random.default_rng(111)
        y = rng.normal(size=150)
        qs = np.sort(rng.choice(y, size=40, replace=False))
        model = fit_distribution_regression(y, np.ones((150, 1)), qs)
        preds = model.predict_cdf(np.array([[1.0]]))[0]
        assert np.allclose(preds, ecdf(y)(qs), atol=1e-8)

    def test_separation_flagged_and_clamped(self):
        # perfectly separated indicator in x
        x = np.concatenate([np.full(20, -1.0), np.full(20, 1.0)])
        y = np.concatenate([np.zeros(20), np.ones(20)])
        with pytest.warns(SeparationDetected):
            model = fit_distribution_regression(
                y, add_intercept(x), np.array([0.5]), max_iter=25
            )
        preds = model.predict_cdf(add_intercept(np.array([-1.0, 1.0])), rearrange=False)
        assert np.all(preds >= 1e-6) and np.all(preds <= 1 - 1e-6)

    def test_qr_and_dr_agree_on_location_shift(self):
        rng = np.random.default_rng(121)
        n = 5000
        x = rng.normal(size=n)
        y = 0.5 + x + rng.normal(size=n)
        design = add_intercept(x)
        qr = fit_quantile_regression(y, design, default_tau_grid(99))
        qs = default_threshold_grid(y, 99)
        dr = fit_distribution_regression(y, design, qs)
        for x0 in (-1.0, 0.0, 1.0):
            f_qr = invert_qr_to_cdf(qr, [1.0, x0])
            f_dr = dr.predict_cdf(np.array([[1.0, x0]]))[0]
            assert np.max(np.abs(f_qr(qs) - f_dr)) < 0.05


class TestRearrangement:
    def test_idempotent(self):
        rng = np.random.default_rng(131)
        vals = rng.uniform(size=(7, 30))
        once = monotone_rearrange(vals)
        assert np.array_equal(once, monotone_rearrange(once))

    def test_preserves_marginal(self):
        vals = np.array([[0.3, 0.1, 0.9]])
        assert sorted(vals[0]) == list(monotone_rearrange(vals)[0])


class TestGeneratedRegressor:
    def test_identity_when_margins_match(self):
        rng = np.random.default_rng(141)
        y = rng.normal(size=60)
        f = ecdf(y)
        out = make_generated_regressor(y, f, f)
        assert np.allclose(out, y)

    def test_uniform_grid_map(self):
        f_source = ecdf([1.0, 2.0, 3.0])
        f_target = ecdf([10.0, 20.0, 30.0])
        out = make_generated_regressor(np.array([1.0, 2.0, 3.0]), f_source, f_target)
        assert np.allclose(out, [10.0, 20.0, 30.0])

    def test_monotone_transform_kendall_one(self):
        rng = np.random.default_rng(151)
        y = rng.normal(size=40)
        f_source = ecdf(y)
        f_target = ecdf(rng.normal(loc=3.0, size=55))
        out = make_generated_regressor(y, f_source, f_target)
        assert kendall_tau(y, out) == pytest.approx(1.0)


class TestConditionalCdfY1:
    @staticmethod
    def make_data(n=2000, seed=5, dependent=False):
        rng = np.random.default_rng(seed)
        y_tm1 = rng.normal(size=n)
        y_t = (0.8 * y_tm1 if dependent else 0.0) + rng.normal(size=n)
        return from_arrays(
            y_t=y_t,
            y_tm1=y_tm1,
            y_tm2=rng.normal(size=n),
            treated=np.ones(n, dtype=int),
        )

    def test_independent_case_slope_insignificant(self):
        data = self.make_data(dependent=False)
        cond = conditional_cdf_y1(data)
        model = cond.model
        fit_cols = ~(model.const_zero | model.const_one)
        z = np.abs(model.coef[fit_cols, 1] / model.coef_se[fit_cols, 1])
        assert np.mean(z < 3) >= 0.95

    def test_saturates_at_top_of_grid(self):
        data = self.make_data(dependent=True)
        cond = conditional_cdf_y1(data)
        top = cond.thresholds[-1]
        val = cond(top, y_lag=0.0)
        assert val == pytest.approx(cond.prob_matrix(np.array([0.0]))[0, -1], abs=1e-12)
        assert val > 0.95

    def test_monotone_in_y_at_random_lags(self):
        data = self.make_data(dependent=True)
        cond = conditional_cdf_y1(data)
        rng = np.random.default_rng(6)
        lags = rng.normal(size=100)
        rows = cond.prob_matrix(lags)
        assert np.all(np.diff(rows, axis=1) >= 0)

    def test_too_few_units(self):
        data = self.make_data(n=10)
        with pytest.raises(TooFewTreatedUnits):
            conditional_cdf_y1(data)


class TestEmpiricalConditional:
    def test_recovers_conditional_mean_structure(self):
        rng = np.random.default_rng(161)
        n = 4000
        w = rng.normal(size=n)
        y = w + 0.5 * rng.normal(size=n)
        thresholds = default_threshold_grid(y, 60)
        cond = EmpiricalConditionalCdf(w, y, thresholds, bandwidth=0.10)
        for w0 in (-1.0, 0.0, 1.0):
            fitted = cond.prob_matrix(np.array([w0]))[0]
            truth = norm.cdf((thresholds - w0) / 0.5)
            assert np.max(np.abs(fitted - truth)) < 0.12

    def test_rows_are_cdfs(self):
        rng = np.random.default_rng(171)
        w = rng.normal(size=500)
        y = rng.normal(size=500)
        cond = EmpiricalConditionalCdf(w, y, default_threshold_grid(y, 30))
        rows = cond.prob_matrix(np.array([-2.0, 0.0, 2.0]))
        assert np.all(rows >= 0) and np.all(rows <= 1)
        assert np.all(np.diff(rows, axis=1) >= 0)
