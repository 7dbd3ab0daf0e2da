import numpy as np
import pytest

from dtebounds.cic import (
    att_qtt,
    cic_counterfactual,
    cic_counterfactual_conditional,
    cic_transform_lags,
)
from dtebounds.distributions import ecdf
from dtebounds.errors import EmptySample
from dtebounds.first_step import add_intercept, default_tau_grid, fit_quantile_regression


class TestCicCounterfactual:
    def test_time_invariant_controls_identity(self):
        rng = np.random.default_rng(1)
        treated_tm1 = rng.normal(size=300)
        control = rng.normal(size=600) * 1.5  # same sample in both periods
        cf = cic_counterfactual(treated_tm1, control, control)
        f = ecdf(treated_tm1)
        assert np.allclose(cf(cf.grid), f(cf.grid))

    def test_location_shift(self):
        rng = np.random.default_rng(2)
        a = 1.7
        treated_tm1 = np.linspace(0.01, 0.99, 99)
        control_tm1 = rng.uniform(size=5000)
        control_t = control_tm1 + a  # control shifted by +a between periods
        cf = cic_counterfactual(treated_tm1, control_tm1, control_t)
        shifted = ecdf(treated_tm1 + a)
        grid_step = np.max(np.diff(np.sort(control_t)))
        ys = np.linspace(a + 0.05, a + 0.95, 50)
        # same mass within one grid step in the argument
        for y in ys:
            lo, hi = shifted(y - grid_step), shifted(y + grid_step)
            assert lo - 1e-12 <= cf(y) <= hi + 1e-12

    def test_empty_sample(self):
        with pytest.raises(EmptySample):
            cic_counterfactual([], [1.0], [1.0])

    def test_monotone(self):
        rng = np.random.default_rng(3)
        cf = cic_counterfactual(
            rng.normal(size=200), rng.normal(size=300), rng.normal(size=300) + 0.3
        )
        assert np.all(np.diff(cf.probs) >= -1e-12)

    def test_mean_matches_transformed_draws(self):
        rng = np.random.default_rng(4)
        treated_tm1 = rng.normal(size=500)
        control_tm1 = rng.normal(size=700)
        control_t = 2 * control_tm1 + rng.normal(size=700) * 0.0 + 0.5
        cf = cic_counterfactual(treated_tm1, control_tm1, control_t)
        draws = cic_transform_lags(treated_tm1, control_tm1, control_t)
        assert cf.mean() == pytest.approx(draws.mean(), abs=1e-9)

    def test_equivariance_to_increasing_relabeling(self):
        # applying a strictly increasing map to all period-t outcomes maps
        # the counterfactual through the same relabeling
        rng = np.random.default_rng(5)
        treated_tm1 = rng.normal(size=300)
        control_tm1 = rng.normal(size=400)
        control_t = control_tm1 * 1.5 + 0.2
        g = np.tanh  # strictly increasing
        cf = cic_counterfactual(treated_tm1, control_tm1, control_t)
        cf_g = cic_counterfactual(treated_tm1, control_tm1, g(control_t))
        assert np.allclose(cf_g.grid, g(cf.grid))
        assert np.allclose(cf_g.probs, cf.probs)


class TestAttQtt:
    def test_zero_when_counterfactual_is_ecdf(self):
        rng = np.random.default_rng(6)
        y = rng.normal(size=400)
        res = att_qtt(y, ecdf(y))
        assert res.att == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(res.qtt, 0.0)

    def test_pure_shift(self):
        rng = np.random.default_rng(7)
        y = rng.normal(size=400)
        res = att_qtt(y, ecdf(y + 2.0))
        assert res.att == pytest.approx(-2.0, abs=1e-12)
        assert np.allclose(res.qtt, -2.0)


class TestConditionalCic:
    def test_covariate_free_collapses_to_unconditional(self):
        rng = np.random.default_rng(8)
        n = 3000
        treated_tm1 = rng.normal(size=n)
        control_tm1 = rng.normal(size=n)
        control_t = 0.4 + control_tm1 * 1.1 + 0.0 * rng.normal(size=n)
        taus = default_tau_grid(99)
        ones = np.ones((n, 1))
        qr_tm1_treated = fit_quantile_regression(treated_tm1, ones, taus)
        qr_tm1_control = fit_quantile_regression(control_tm1, ones, taus)
        qr_t_control = fit_quantile_regression(control_t, ones, taus)
        thresholds = np.quantile(control_t, np.linspace(0.02, 0.98, 60))
        cond = cic_counterfactual_conditional(
            qr_tm1_treated, qr_tm1_control, qr_t_control, thresholds
        )
        row = cond.prob_matrix(x=np.empty((1, 0)))[0]
        uncond = cic_counterfactual(treated_tm1, control_tm1, control_t)
        # agreement up to tau-grid resolution (three composed 99-point grids)
        assert np.max(np.abs(row - uncond(thresholds))) <= 3.0 / 100 + 1e-9

    def test_conditional_location_shifts(self):
        # outcomes shift by group-, period-, and x-specific locations;
        # the conditional counterfactual is then a known normal CDF
        rng = np.random.default_rng(9)
        n = 10_000
        x = rng.normal(size=n)
        d = (rng.uniform(size=n) < 0.5).astype(int)
        eta = rng.normal(size=n)

        def draw(period_shift, x_coef):
            return period_shift + x_coef * x + eta + 0.5 * rng.normal(size=n)

        y_tm1 = draw(0.0, 1.0) + 0.5 * d
        y_t0 = draw(1.0, 1.0) + 0.5 * d  # untreated period-t outcome
        taus = default_tau_grid(99)
        qr_tm1_treated = fit_quantile_regression(
            y_tm1[d == 1], add_intercept(x[d == 1]), taus
        )
        qr_tm1_control = fit_quantile_regression(
            y_tm1[d == 0], add_intercept(x[d == 0]), taus
        )
        qr_t_control = fit_quantile_regression(
            y_t0[d == 0], add_intercept(x[d == 0]), taus
        )
        thresholds = np.quantile(y_t0, np.linspace(0.02, 0.98, 80))
        cond = cic_counterfactual_conditional(
            qr_tm1_treated, qr_tm1_control, qr_t_control, thresholds
        )
        from scipy.stats import norm

        sigma = np.sqrt(1.0 + 0.25)  # eta plus noise
        for x0 in (-1.0, 0.0, 1.0):
            fitted = cond.prob_matrix(x=np.array([[x0]]))[0]
            truth = norm.cdf(thresholds, loc=1.0 + x0 + 0.5, scale=sigma)
            assert np.max(np.abs(fitted - truth)) < 0.07

    def test_monotone_in_y_at_random_x(self):
        rng = np.random.default_rng(10)
        n = 1000
        x = rng.normal(size=n)
        y0 = x + rng.normal(size=n)
        y1 = 0.5 + x + rng.normal(size=n)
        taus = default_tau_grid(49)
        qr_a = fit_quantile_regression(y0, add_intercept(x), taus)
        qr_b = fit_quantile_regression(y0, add_intercept(x), taus)
        qr_c = fit_quantile_regression(y1, add_intercept(x), taus)
        cond = cic_counterfactual_conditional(
            qr_a, qr_b, qr_c, np.linspace(-3, 4, 40)
        )
        rows = cond.prob_matrix(x=rng.normal(size=(25, 1)))
        assert np.all(np.diff(rows, axis=1) >= 0)
