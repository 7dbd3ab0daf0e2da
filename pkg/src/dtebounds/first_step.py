"""First-step conditional distribution estimators.

Two flexible parametric routes are provided:

* quantile regression over a grid of levels, inverted into conditional
  CDFs (used for the covariate-conditional marginals), and
* distribution regression: binary-response fits of threshold indicators
  over a grid of thresholds (used for the outcome-on-lagged-outcome
  conditionals, including the generated-regressor case where the lag is
  first adjusted to a reference marginal).

Monotonicity of fitted CDFs and quantile curves is enforced by sorting
fitted values (monotone rearrangement) at evaluation time.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, sparse
from scipy.special import expit, log_ndtr, ndtr, ndtri

from .distributions import StepCdf
from .errors import (
    SeparationDetected,
    SingularDesign,
    SolverNonconvergence,
    TooFewTreatedUnits,
)

IRLS_SMOOTH_FLOOR = 1e-6
CLAMP = 1e-6


def monotone_rearrange(values, axis=-1):
    """Sort fitted values along ``axis``; idempotent, preserves marginals."""
    return np.sort(np.asarray(values, dtype=float), axis=axis)


def add_intercept(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(len(x)), x])


def check_loss(y, design, beta, tau):
    r = np.asarray(y, dtype=float) - np.asarray(design, dtype=float) @ beta
    return float(np.sum(r * (tau - (r < 0))))


def _solve_wls(design, y, w):
    xw = design * w[:, None]
    gram = design.T @ xw
    try:
        return np.linalg.solve(gram, xw.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign("weighted design matrix is singular") from exc


def _qr_irls(design, y, tau, tol, max_iter):
    """Smoothed iteratively reweighted least squares for one quantile level.

    Weights ``|tau - 1{r<0}| / sqrt(r^2 + eps^2)`` reproduce the
    check-loss subgradient condition as eps -> 0; eps is driven down a
    geometric path to 1e-6.
    """
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    scale = max(float(np.std(resid)), 1e-3)
    eps_path = np.geomspace(scale, IRLS_SMOOTH_FLOOR, num=10)
    converged = False
    for eps in eps_path:
        for _ in range(max_iter):
            r = y - design @ beta
            a = np.abs(tau - (r < 0))
            w = a / np.sqrt(r**2 + eps**2)
            new_beta = _solve_wls(design, y, w)
            step = np.max(np.abs(new_beta - beta))
            beta = new_beta
            if not np.all(np.isfinite(beta)):
                return beta, False
            if step < tol * (1.0 + np.max(np.abs(beta))):
                break
    # declare convergence off the final smoothing level's fixed point
    r = y - design @ beta
    grad = design.T @ (tau - (r < 0) - 0.0) / len(y)
    # the subgradient at zero residuals allows slack of one atom per point
    slack = np.abs(design).T @ (np.abs(r) < 10 * IRLS_SMOOTH_FLOOR) / len(y)
    converged = bool(np.all(np.abs(grad) <= slack + 1e-6))
    return beta, converged


def _qr_linprog(design, y, tau):
    """Exact LP formulation, solved by HiGHS (interior point / simplex)."""
    n, p = design.shape
    c = np.concatenate([np.zeros(p), np.full(n, tau), np.full(n, 1.0 - tau)])
    eye = sparse.eye(n, format="csc")
    a_eq = sparse.hstack([sparse.csc_matrix(design), eye, -eye], format="csc")
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = optimize.linprog(c, A_eq=a_eq, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        return None
    return res.x[:p]


@dataclass(frozen=True, eq=False)
class QrModel:
    """Quantile-regression coefficients over a grid of levels.

    ``coef`` has one row per level in ``tau_grid`` (including the
    intercept column). Predicted quantile curves are monotone after
    rearrangement across levels.
    """

    tau_grid: np.ndarray
    coef: np.ndarray

    def predict_quantiles(self, design, rearrange=True):
        design = np.atleast_2d(np.asarray(design, dtype=float))
        preds = design @ self.coef.T
        return monotone_rearrange(preds, axis=-1) if rearrange else preds


def fit_quantile_regression(y, design, tau_grid, tol=1e-8, max_iter=100) -> QrModel:
    """Fit check-loss minimizing coefficients at each level of ``tau_grid``.

    IRLS with a decreasing smoothing parameter; levels that fail to
    converge are re-solved as exact linear programs. Raises
    :class:`SolverNonconvergence` listing levels that failed both.
    """
    y = np.asarray(y, dtype=float)
    design = np.atleast_2d(np.asarray(design, dtype=float))
    n, p = design.shape
    tau_grid = np.asarray(tau_grid, dtype=float)
    if np.any(tau_grid <= 0) or np.any(tau_grid >= 1):
        raise ValueError("tau_grid must lie strictly inside (0, 1)")
    if n <= p:
        raise SingularDesign(f"need more observations ({n}) than regressors ({p})")
    if np.linalg.matrix_rank(design) < p:
        raise SingularDesign("design matrix is rank deficient")

    coef = np.empty((tau_grid.size, p))
    failed = []
    for k, tau in enumerate(tau_grid):
        beta, ok = _qr_irls(design, y, tau, tol, max_iter)
        if not ok:
            lp = _qr_linprog(design, y, tau)
            if lp is None:
                failed.append(float(tau))
                coef[k] = beta
                continue
            if check_loss(y, design, lp, tau) < check_loss(y, design, beta, tau):
                beta = lp
        coef[k] = beta
    if failed:
        raise SolverNonconvergence(failed)
    return QrModel(tau_grid=tau_grid, coef=coef)


def invert_qr_to_cdf(model: QrModel, x) -> StepCdf:
    """Conditional CDF at covariate value ``x`` (a full design row).

    F(y|x) is the fraction of grid levels whose (rearranged) predicted
    quantile is <= y.
    """
    preds = model.predict_quantiles(np.atleast_2d(x))[0]
    values, counts = np.unique(preds, return_counts=True)
    probs = np.cumsum(counts) / preds.size
    return StepCdf(values, probs)


def default_tau_grid(num=99):
    return np.arange(1, num + 1) / (num + 1)


def default_threshold_grid(y, num=99):
    """Empirical quantiles of the response at evenly spaced levels."""
    levels = default_tau_grid(num)
    return np.unique(np.quantile(np.asarray(y, dtype=float), levels))


# ---------------------------------------------------------------------------
# distribution regression
# ---------------------------------------------------------------------------


def _link_funcs(link):
    if link == "logit":
        def inv(eta):
            return expit(eta)

        def loglik(z, eta):
            return z * eta - np.logaddexp(0.0, eta)

        def score_weight(z, eta, p):
            return z - p, p * (1.0 - p)

        def init(mean):
            return np.log(mean / (1.0 - mean))

    elif link == "probit":
        def inv(eta):
            return ndtr(eta)

        def loglik(z, eta):
            return z * log_ndtr(eta) + (1.0 - z) * log_ndtr(-eta)

        def score_weight(z, eta, p):
            pq = np.clip(p * (1.0 - p), 1e-12, None)
            phi = np.exp(-0.5 * eta**2) / np.sqrt(2.0 * np.pi)
            return phi * (z - p) / pq, phi**2 / pq

        def init(mean):
            return ndtri(mean)

    else:
        raise ValueError(f"unknown link {link!r}; use 'logit' or 'probit'")
    return inv, loglik, score_weight, init


def _newton_batched(design, z, link, tol, max_iter, warm_start=None, compute_se=True):
    """Newton--Raphson across all threshold columns of ``z`` at once.

    Returns coefficients, standard errors, a converged mask, and a
    separation mask for columns that diverged.
    """
    inv, loglik, score_weight, init = _link_funcs(link)
    n, p = design.shape
    m = z.shape[1]
    beta = np.zeros((m, p))
    means = np.clip(z.mean(axis=0), 1e-6, 1 - 1e-6)
    beta[:, 0] = init(means)
    if warm_start is not None:
        beta = warm_start.copy()
        zero_rows = ~np.any(beta != 0.0, axis=1)
        beta[zero_rows, 0] = init(means[zero_rows])
    active = np.ones(m, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        eta = design @ beta[idx].T
        pr = np.clip(inv(eta), 1e-12, 1.0 - 1e-12)
        s, w = score_weight(z[:, idx], eta, pr)
        grad = design.T @ s  # p x k
        done = np.max(np.abs(grad), axis=0) / n < tol
        if done.any():
            active[idx[done]] = False
            idx = idx[~done]
            if idx.size == 0:
                continue
            grad = grad[:, ~done]
            w = w[:, ~done]
        hess = np.einsum("nk,np,nq->kpq", w, design, design)
        try:
            step = np.linalg.solve(hess, grad.T[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            step = np.stack(
                [np.linalg.lstsq(hess[j], grad[:, j], rcond=None)[0] for j in range(len(idx))]
            )
        # small steps are inside the quadratic basin; the likelihood check
        # (an extra full-data pass) is only worth it for large moves
        if np.max(np.abs(step)) > 0.25 * (1.0 + np.max(np.abs(beta[idx]))):
            ll_cur = loglik(z[:, idx], design @ beta[idx].T).sum(axis=0)
            factor = np.ones(len(idx))
            for _ in range(30):
                cand = beta[idx] + factor[:, None] * step
                ll_new = loglik(z[:, idx], design @ cand.T).sum(axis=0)
                improved = ll_new >= ll_cur - 1e-10
                if improved.all():
                    break
                factor[~improved] *= 0.5
            beta[idx] = beta[idx] + factor[:, None] * step
        else:
            beta[idx] = beta[idx] + step

    converged = ~active
    eta = design @ beta.T
    # a diverging fit can meet the gradient tolerance; flag columns whose
    # index perfectly classifies the indicator at an extreme magnitude
    perfect = np.all((z > 0.5) == (eta > 0), axis=0) & (
        np.max(np.abs(eta), axis=0) > 15.0
    )
    separated = ~converged | perfect
    se = np.full((m, p), np.nan)
    if compute_se:
        # standard errors from the final information matrix
        pr = np.clip(inv(eta), 1e-12, 1.0 - 1e-12)
        _, w = score_weight(z, eta, pr)
        hess = np.einsum("nm,np,nq->mpq", w, design, design)
        for j in range(m):
            try:
                se[j] = np.sqrt(np.diag(np.linalg.inv(hess[j])))
            except np.linalg.LinAlgError:
                pass
    return beta, se, converged, separated


@dataclass(frozen=True, eq=False)
class DrModel:
    """Distribution-regression fits over a threshold grid.

    ``const_zero`` / ``const_one`` mark degenerate thresholds (all
    indicators 0 or 1) whose predictions are the constants; ``separated``
    marks thresholds where the binary fit did not converge and whose
    predictions are clamped away from {0, 1}.
    """

    thresholds: np.ndarray
    coef: np.ndarray
    link: str
    const_zero: np.ndarray
    const_one: np.ndarray
    separated: np.ndarray
    coef_se: np.ndarray = None

    def predict_cdf(self, design, rearrange=True):
        """CDF values over the threshold grid for each design row."""
        design = np.atleast_2d(np.asarray(design, dtype=float))
        inv, *_ = _link_funcs(self.link)
        out = np.empty((design.shape[0], self.thresholds.size))
        fit_cols = ~(self.const_zero | self.const_one)
        if fit_cols.any():
            out[:, fit_cols] = inv(design @ self.coef[fit_cols].T)
        out[:, self.const_zero] = 0.0
        out[:, self.const_one] = 1.0
        sep = self.separated & fit_cols
        if sep.any():
            out[:, sep] = np.clip(out[:, sep], CLAMP, 1.0 - CLAMP)
        return monotone_rearrange(out, axis=-1) if rearrange else out


def fit_distribution_regression(
    y, design, thresholds, link="logit", tol=1e-8, max_iter=60, warm_start=None,
    compute_se=True,
) -> DrModel:
    """Binary-response MLE of ``1{y <= q}`` on ``design`` for each threshold.

    Degenerate thresholds (nothing on one side) become constant 0/1
    predictions. Separation is flagged via :class:`SeparationDetected`
    and the affected fitted values are clamped to [1e-6, 1 - 1e-6].
    """
    y = np.asarray(y, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    z = (y[:, None] <= thresholds[None, :]).astype(float)
    return fit_dr_from_indicators(
        z, design, thresholds, link=link, tol=tol, max_iter=max_iter,
        warm_start=warm_start, compute_se=compute_se,
    )


def fit_dr_from_indicators(
    z, design, thresholds, link="logit", tol=1e-8, max_iter=60, warm_start=None,
    compute_se=True,
) -> DrModel:
    """Distribution regression from a precomputed indicator matrix.

    Needed when the effective threshold differs across observations
    (index transformations estimated in an earlier step); ``thresholds``
    only labels the columns of ``z``.
    """
    design = np.atleast_2d(np.asarray(design, dtype=float))
    thresholds = np.asarray(thresholds, dtype=float)
    z = np.asarray(z, dtype=float)
    n, p = design.shape
    if np.linalg.matrix_rank(design) < p:
        raise SingularDesign("design matrix is rank deficient")
    means = z.mean(axis=0)
    const_zero = means == 0.0
    const_one = means == 1.0
    fit_cols = ~(const_zero | const_one)

    coef = np.zeros((thresholds.size, p))
    se = np.full((thresholds.size, p), np.nan)
    separated = np.zeros(thresholds.size, dtype=bool)
    if fit_cols.any():
        ws = warm_start[fit_cols] if warm_start is not None else None
        b, s, conv, sep = _newton_batched(
            design, z[:, fit_cols], link, tol, max_iter, warm_start=ws,
            compute_se=compute_se,
        )
        coef[fit_cols] = b
        se[fit_cols] = s
        separated[fit_cols] = sep
        if sep.any():
            flagged = thresholds[fit_cols][sep]
            warnings.warn(
                f"separation detected at {sep.sum()} threshold(s) "
                f"(first few: {np.round(flagged[:4], 4).tolist()}); "
                "fitted values clamped",
                SeparationDetected,
                stacklevel=2,
            )
    return DrModel(
        thresholds=thresholds,
        coef=coef,
        link=link,
        const_zero=const_zero,
        const_one=const_one,
        separated=separated,
        coef_se=se,
    )


def make_generated_regressor(y_source, f_source: StepCdf, f_target: StepCdf):
    """Adjust draws from one marginal onto another: ``Q_target(F_source(y))``.

    A monotone transform of the input; used to express the twice-lagged
    outcome on the scale of the once-lagged outcome.
    """
    taus = np.clip(f_source(np.asarray(y_source, dtype=float)), 1e-12, 1.0)
    return f_target.quantile(taus)


# ---------------------------------------------------------------------------
# conditional CDF evaluators
# ---------------------------------------------------------------------------


class ConditionalCdf:
    """Evaluator mapping (y, conditioning values) to probabilities.

    Subclasses provide ``prob_matrix`` returning, for each conditioning
    point, the (monotone) CDF over ``self.thresholds``; ``__call__``
    step-evaluates those rows at arbitrary ``y``.
    """

    thresholds: np.ndarray
    uses_lag: bool = True
    uses_x: bool = False

    def prob_matrix(self, y_lag=None, x=None):
        raise NotImplementedError

    def __call__(self, y, y_lag=None, x=None):
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        rows = self.prob_matrix(
            y_lag=None if y_lag is None else np.atleast_1d(y_lag),
            x=None if x is None else np.atleast_2d(x),
        )
        idx = np.searchsorted(self.thresholds, y_arr, side="right") - 1
        vals = np.where(idx >= 0, rows[:, np.clip(idx, 0, None)], 0.0)
        if vals.shape[0] == 1:
            vals = vals[0]
            if np.ndim(y) == 0:
                return float(vals[0])
        return vals


def _stack_design(y_lag, x, uses_lag, uses_x):
    cols = [np.ones(len(y_lag) if y_lag is not None else len(x))]
    if uses_lag:
        if y_lag is None:
            raise ValueError("this conditional CDF requires a lag value")
        cols.append(np.asarray(y_lag, dtype=float))
    if uses_x:
        if x is None:
            raise ValueError("this conditional CDF requires covariates")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols.extend(x.T)
    return np.column_stack(cols)


class DrConditionalCdf(ConditionalCdf):
    """Conditional CDF backed by a distribution-regression model.

    ``thresholds`` gives the y-grid on which the CDF is reported; it may
    differ from the model's internal (adjusted) threshold grid.
    """

    def __init__(self, model: DrModel, thresholds=None, uses_lag=True, uses_x=False):
        self.model = model
        self.thresholds = (
            model.thresholds if thresholds is None else np.asarray(thresholds, dtype=float)
        )
        if self.thresholds.size != model.thresholds.size:
            raise ValueError("reported thresholds must match the model grid size")
        self.uses_lag = uses_lag
        self.uses_x = uses_x

    def prob_matrix(self, y_lag=None, x=None):
        design = _stack_design(y_lag, x, self.uses_lag, self.uses_x)
        return self.model.predict_cdf(design)


class EmpiricalConditionalCdf(ConditionalCdf):
    """Nearest-neighbor band estimator in (transformed) lag space.

    For a query lag value, averages threshold indicators over the units
    whose lag ranks fall in a centered window holding ``bandwidth`` of
    the sample.
    """

    uses_x = False

    def __init__(self, lag_values, y_values, thresholds, bandwidth=0.10):
        lag_values = np.asarray(lag_values, dtype=float)
        y_values = np.asarray(y_values, dtype=float)
        self.thresholds = np.asarray(thresholds, dtype=float)
        order = np.argsort(lag_values, kind="stable")
        self._sorted_lag = lag_values[order]
        z = (y_values[order, None] <= self.thresholds[None, :]).astype(float)
        self._prefix = np.vstack([np.zeros(self.thresholds.size), np.cumsum(z, axis=0)])
        self.bandwidth = bandwidth
        self._k = max(1, int(np.ceil(bandwidth * lag_values.size)))

    def prob_matrix(self, y_lag=None, x=None):
        q = np.atleast_1d(np.asarray(y_lag, dtype=float))
        n = self._sorted_lag.size
        pos = np.searchsorted(self._sorted_lag, q)
        lo = np.clip(pos - self._k // 2, 0, n - self._k)
        counts = self._prefix[lo + self._k] - self._prefix[lo]
        return monotone_rearrange(counts / self._k, axis=-1)


class MatrixConditionalCdf(ConditionalCdf):
    """Precomputed CDF rows for a fixed set of conditioning atoms."""

    def __init__(self, thresholds, matrix, uses_lag=False, uses_x=False):
        self.thresholds = np.asarray(thresholds, dtype=float)
        self.matrix = np.asarray(matrix, dtype=float)
        self.uses_lag = uses_lag
        self.uses_x = uses_x

    def prob_matrix(self, y_lag=None, x=None):
        return self.matrix


def conditional_cdf_y1(
    treated_data,
    use_covariates=False,
    n_thresholds=99,
    thresholds=None,
    link="logit",
    min_units=30,
) -> DrConditionalCdf:
    """Conditional CDF of the period-t outcome given the lagged outcome
    (and covariates) on the treated group, by distribution regression.
    """
    if treated_data.n < min_units:
        raise TooFewTreatedUnits(
            f"{treated_data.n} treated units; floor is {min_units}"
        )
    if thresholds is None:
        thresholds = default_threshold_grid(treated_data.y_t, n_thresholds)
    design = _stack_design(
        treated_data.y_tm1,
        treated_data.x if use_covariates else None,
        uses_lag=True,
        uses_x=use_covariates,
    )
    model = fit_distribution_regression(treated_data.y_t, design, thresholds, link=link)
    return DrConditionalCdf(model, uses_lag=True, uses_x=use_covariates)
