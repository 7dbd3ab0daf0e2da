"""Joint and conditional recovery of untreated outcomes over time for the
treated group under copula stability.

With stable dependence across adjacent periods, the unobservable joint of
(period-t, period-t-1) untreated outcomes equals the observed joint of
(period-t-1, period-t-2) outcomes evaluated at margin-adjusted arguments:
each argument is pushed through its own marginal and pulled back through
the corresponding earlier-period quantile function.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .distributions import StepCdf, empirical_copula, tie_fraction, CopulaGrid
from .errors import HeavyTies, InsufficientPairs
from .first_step import (
    ConditionalCdf,
    DrConditionalCdf,
    EmpiricalConditionalCdf,
    default_threshold_grid,
    fit_distribution_regression,
    make_generated_regressor,
)

TIE_WARN_FRACTION = 0.01


@dataclass(frozen=True, eq=False)
class CsaInputs:
    """Ingredients for the joint recovery.

    ``f_t`` is the (counterfactual) period-t marginal for the treated
    group, ``f_tm1`` / ``f_tm2`` the lagged marginals, and
    ``y_tm1`` / ``y_tm2`` the observed treated pairs that carry the
    dependence information.
    """

    f_t: StepCdf
    f_tm1: StepCdf
    f_tm2: StepCdf
    y_tm1: np.ndarray
    y_tm2: np.ndarray
    x: np.ndarray = None
    min_pairs: int = 30

    def __post_init__(self):
        y_tm1 = np.asarray(self.y_tm1, dtype=float)
        y_tm2 = np.asarray(self.y_tm2, dtype=float)
        if y_tm1.size != y_tm2.size:
            raise InsufficientPairs("lagged outcome vectors differ in length")
        if y_tm1.size < self.min_pairs:
            raise InsufficientPairs(
                f"{y_tm1.size} treated pairs; floor is {self.min_pairs}"
            )
        object.__setattr__(self, "y_tm1", y_tm1)
        object.__setattr__(self, "y_tm2", y_tm2)
        if self.x is not None:
            x = np.atleast_2d(np.asarray(self.x, dtype=float))
            if x.shape[0] != y_tm1.size:
                raise InsufficientPairs("covariate rows must match pair count")
            object.__setattr__(self, "x", x)
        worst = max(tie_fraction(y_tm1), tie_fraction(y_tm2))
        if worst > TIE_WARN_FRACTION:
            warnings.warn(
                f"tie fraction {worst:.1%} in treated lagged outcomes; "
                "continuity-based joint recovery may be fragile",
                HeavyTies,
                stacklevel=2,
            )

    @property
    def n_pairs(self) -> int:
        return self.y_tm1.size

    def transformed_lag(self) -> np.ndarray:
        """Twice-lagged outcome adjusted onto the once-lagged marginal."""
        return make_generated_regressor(self.y_tm2, self.f_tm2, self.f_tm1)


class CsaJointCdf:
    """Bivariate CDF evaluator for (period-t, period-t-1) untreated
    outcomes of the treated group."""

    def __init__(self, inputs: CsaInputs):
        self.inputs = inputs
        self._tm1_sorted = np.sort(inputs.y_tm1)
        self._tm2_sorted = np.sort(inputs.y_tm2)
        order = np.argsort(inputs.y_tm1, kind="stable")
        self._pairs_tm1 = inputs.y_tm1[order]
        self._pairs_tm2 = inputs.y_tm2[order]

    @staticmethod
    def _adjust(values, f_from, f_to):
        taus = np.atleast_1d(f_from(np.asarray(values, dtype=float)))
        out = np.full(taus.shape, -np.inf)
        pos = taus > 0
        if np.any(pos):
            out[pos] = f_to.quantile(np.minimum(taus[pos], 1.0))
        return out

    def _adjust_t(self, y0):
        return self._adjust(y0, self.inputs.f_t, self.inputs.f_tm1)

    def _adjust_tm1(self, y_prime):
        return self._adjust(y_prime, self.inputs.f_tm1, self.inputs.f_tm2)

    def __call__(self, y0, y_prime):
        """Joint CDF at margin-adjusted arguments, broadcasting elementwise."""
        a = self._adjust_t(y0)
        b = self._adjust_tm1(y_prime)
        a, b = np.broadcast_arrays(a, b)
        n = self.inputs.n_pairs
        vals = np.empty(a.shape, dtype=float)
        flat_a, flat_b = a.ravel(), b.ravel()
        flat_v = vals.ravel()
        for i in range(flat_a.size):
            hi = np.searchsorted(self._pairs_tm1, flat_a[i], side="right")
            flat_v[i] = np.count_nonzero(self._pairs_tm2[:hi] <= flat_b[i]) / n
        if np.ndim(y0) == 0 and np.ndim(y_prime) == 0:
            return float(vals.reshape(-1)[0])
        return vals

    def on_grid(self, y0_grid, y_prime_grid):
        """Joint CDF on the product grid, vectorized."""
        a = self._adjust_t(np.asarray(y0_grid, dtype=float))
        b = self._adjust_tm1(np.asarray(y_prime_grid, dtype=float))
        ind_1 = self.inputs.y_tm1[:, None] <= a[None, :]
        ind_2 = self.inputs.y_tm2[:, None] <= b[None, :]
        return (ind_1.T.astype(float) @ ind_2.astype(float)) / self.inputs.n_pairs

    def copula_grid(self, resolution=101) -> CopulaGrid:
        """Copula implied by the recovered joint; under stability this
        matches the empirical copula of the observed lagged pairs."""
        lattice = np.linspace(0.0, 1.0, resolution)
        pos = lattice > 0
        y0 = np.full(resolution, -np.inf)
        yp = np.full(resolution, -np.inf)
        y0[pos] = self.inputs.f_t.quantile(lattice[pos])
        yp[pos] = self.inputs.f_tm1.quantile(lattice[pos])
        values = self.on_grid(y0, yp)
        return CopulaGrid(lattice, lattice, values)


def csa_joint_cdf(inputs: CsaInputs) -> CsaJointCdf:
    """Bivariate CDF evaluator for the treated group's untreated outcomes
    in the last two periods, identified by copula stability."""
    return CsaJointCdf(inputs)


def csa_conditional_cdf(
    inputs: CsaInputs,
    estimator="distribution_regression",
    n_thresholds=99,
    thresholds=None,
    bandwidth=0.10,
    link="logit",
    use_covariates=False,
    warm_start=None,
    compute_se=True,
) -> ConditionalCdf:
    """Conditional CDF of the period-t untreated outcome given the
    once-lagged outcome, for the treated group.

    The conditioning variable is the transformed twice-lagged outcome
    (adjusted onto the once-lagged marginal); thresholds are adjusted
    from period-t scale back to the once-lagged scale. Two estimators:
    ``distribution_regression`` (binary fits on the transformed lag) and
    ``empirical`` (nearest-neighbor rank window).
    """
    if thresholds is None:
        levels = (np.arange(1, n_thresholds + 1)) / (n_thresholds + 1)
        thresholds = np.unique(inputs.f_t.quantile(levels))
    thresholds = np.asarray(thresholds, dtype=float)
    taus = np.clip(inputs.f_t(thresholds), 1e-12, 1.0)
    adjusted = inputs.f_tm1.quantile(taus)
    below = inputs.f_t(thresholds) <= 0
    adjusted[below] = -np.inf
    w = inputs.transformed_lag()

    if estimator == "empirical":
        cond = EmpiricalConditionalCdf(w, inputs.y_tm1, adjusted, bandwidth=bandwidth)
        cond.thresholds = thresholds  # report on the period-t scale
        return cond
    if estimator != "distribution_regression":
        raise ValueError(f"unknown estimator {estimator!r}")

    cols = [np.ones(inputs.n_pairs), w]
    if use_covariates:
        if inputs.x is None:
            raise InsufficientPairs("covariates requested but not supplied")
        cols.extend(np.atleast_2d(inputs.x).T)
    design = np.column_stack(cols)
    model = fit_distribution_regression(
        inputs.y_tm1, design, adjusted, link=link,
        warm_start=warm_start, compute_se=compute_se,
    )
    return DrConditionalCdf(
        model, thresholds=thresholds, uses_lag=True, uses_x=use_covariates
    )
