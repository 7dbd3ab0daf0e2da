"""Synthetic three-period panel generators with oracle access.

Each generator draws BOTH potential outcomes in every period, so the
true effect distribution is observable to the test suites. Untreated
outcomes follow one of three models:

* ``twfe``: time effect + unit heterogeneity + time-varying shock
* ``cic_panel``: strictly increasing period maps of a stationary index
* ``interactive_fe``: adds a loading times a period-varying factor
  (stability of the over-time dependence fails when the factor path is
  nonmonotone)

Shocks are drawn from a Markov chain whose adjacent-period copula is
specified per pair (Gaussian, Clayton, or Frank family); identical
per-pair copulas with stationary margins make the over-time dependence
of untreated outcomes stable by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import norm

from .distributions import StepCdf, ecdf
from .errors import InvalidSpec
from .first_step import ConditionalCdf, monotone_rearrange
from .panel import PanelDataset, from_arrays

VALID_MODELS = ("twfe", "cic_panel", "interactive_fe")
COPULA_FAMILIES = ("gaussian", "clayton", "frank")


@dataclass(frozen=True)
class EtaSpec:
    """Unit-heterogeneity distribution: normal, with an optional location
    shift for treated units (used with group-based assignment)."""

    mean: float = 0.0
    sd: float = 1.0
    treated_shift: float = 0.0


@dataclass(frozen=True)
class CopulaSpec:
    """Adjacent-period shock copula; ``param`` is a scalar (stable
    dependence) or a per-adjacent-pair sequence (length periods - 1)."""

    family: str = "gaussian"
    param: object = 0.5

    def params_for(self, n_periods):
        p = self.param
        if np.isscalar(p):
            params = [float(p)] * (n_periods - 1)
        else:
            params = [float(v) for v in p]
            if len(params) != n_periods - 1:
                raise InvalidSpec(
                    f"copula needs {n_periods - 1} pair parameters, got {len(params)}"
                )
        for v in params:
            _check_copula_param(self.family, v)
        return params


def _check_copula_param(family, v):
    if family == "gaussian":
        if not -1 < v < 1:
            raise InvalidSpec(f"gaussian copula parameter {v} outside (-1, 1)")
    elif family == "clayton":
        if v <= 0:
            raise InvalidSpec(f"clayton copula parameter {v} must be positive")
    elif family == "frank":
        if v == 0:
            raise InvalidSpec("frank copula parameter must be nonzero")
    else:
        raise InvalidSpec(f"unknown copula family {family!r}")


@dataclass(frozen=True)
class EffectSpec:
    """Treated-outcome rule mapping the untreated period-t outcome.

    ``constant``: add ``params[0]``. ``rank_heterosked``: add a constant
    plus a slope on the centered untreated outcome (rank preserving for
    slope > -1). ``rank_swap``: constant shift plus independent noise
    (breaks rank invariance in both directions).
    """

    kind: str = "constant"
    params: tuple = (1.0,)

    def __post_init__(self):
        if self.kind not in ("constant", "rank_heterosked", "rank_swap"):
            raise InvalidSpec(f"unknown effect map {self.kind!r}")
        if self.kind == "rank_heterosked" and 1.0 + self.params[1] <= 0:
            raise InvalidSpec("rank_heterosked slope must exceed -1")

    def apply(self, y0_t, rng):
        if self.kind == "constant":
            return y0_t + self.params[0]
        if self.kind == "rank_heterosked":
            c, b = self.params[0], self.params[1]
            return y0_t + c + b * (y0_t - np.median(y0_t))
        c, sd = self.params[0], self.params[1]
        return y0_t + c + sd * rng.normal(size=y0_t.size)


@dataclass(frozen=True)
class FactorSpec:
    """Interactive heterogeneity: loading sd and the factor path per period."""

    loading_sd: float = 1.0
    path: tuple = (1.0, -1.0, 1.0)


def _make_h_map(spec):
    kind = spec[0]
    if kind == "linear":
        _, a, b = spec
        if b <= 0:
            raise InvalidSpec("linear period map needs positive slope")
        return lambda u: a + b * u
    if kind == "exp":
        _, a, b = spec
        if b <= 0:
            raise InvalidSpec("exp period map needs positive scale")
        return lambda u: a + b * np.exp(u / 2.0)
    raise InvalidSpec(f"unknown period map {spec!r}")


@dataclass(frozen=True)
class DgpSpec:
    model: str = "twfe"
    n: int = 1000
    p_treated: float = 0.5
    theta: tuple = (0.0, 0.0, 0.0)  # oldest first; length 3 + extra_pre_periods
    eta: EtaSpec = field(default_factory=EtaSpec)
    v_copula: CopulaSpec = field(default_factory=CopulaSpec)
    v_sd: float = 1.0
    h_maps: tuple = None  # cic_panel only, one spec per period
    factor: FactorSpec = None  # interactive_fe only
    effect: EffectSpec = field(default_factory=EffectSpec)
    x_coef: float = 0.0  # > 0 adds one standard-normal covariate
    extra_pre_periods: int = 0
    selection: str = "logistic"  # logistic | independent | group
    selection_slope: float = 1.0
    seed: int = 0

    @property
    def n_periods(self):
        return 3 + self.extra_pre_periods

    def validate(self):
        if self.model not in VALID_MODELS:
            raise InvalidSpec(f"unknown model {self.model!r}")
        if self.n < 10:
            raise InvalidSpec("n must be at least 10")
        if not 0 < self.p_treated < 1:
            raise InvalidSpec("p_treated must lie strictly inside (0, 1)")
        if len(self.theta) != self.n_periods:
            raise InvalidSpec(
                f"theta needs {self.n_periods} entries, got {len(self.theta)}"
            )
        self.v_copula.params_for(self.n_periods)
        if self.model == "cic_panel":
            if self.h_maps is None or len(self.h_maps) != self.n_periods:
                raise InvalidSpec("cic_panel needs one period map per period")
            grid = np.linspace(-3, 3, 25)
            for spec in self.h_maps:
                vals = _make_h_map(spec)(grid)
                if np.any(np.diff(vals) <= 0):
                    raise InvalidSpec(f"period map {spec!r} is not strictly increasing")
        if self.model == "interactive_fe":
            if self.factor is None or len(self.factor.path) != self.n_periods:
                raise InvalidSpec("interactive_fe needs a factor path per period")
        if self.selection not in ("logistic", "independent", "group"):
            raise InvalidSpec(f"unknown selection mode {self.selection!r}")
        return self


# ---------------------------------------------------------------------------
# copula chains
# ---------------------------------------------------------------------------


def _clayton_conditional_inverse(w, u, theta):
    return (u ** (-theta) * (w ** (-theta / (1.0 + theta)) - 1.0) + 1.0) ** (-1.0 / theta)


def _frank_conditional_inverse(w, u, theta):
    num = w * np.expm1(-theta)
    den = w + (1.0 - w) * np.exp(-theta * u)
    return -np.log1p(num / den) / theta


def sample_copula_chain(rng, n, n_periods, family, params):
    """Uniform margins with the given adjacent-pair copulas (Markov chain)."""
    u = np.empty((n, n_periods))
    if family == "gaussian":
        z = np.empty((n, n_periods))
        z[:, 0] = rng.normal(size=n)
        for k, rho in enumerate(params):
            z[:, k + 1] = rho * z[:, k] + np.sqrt(1 - rho**2) * rng.normal(size=n)
        u = norm.cdf(z)
    else:
        inverse = (
            _clayton_conditional_inverse if family == "clayton" else _frank_conditional_inverse
        )
        u[:, 0] = rng.uniform(size=n)
        for k, theta in enumerate(params):
            w = rng.uniform(size=n)
            u[:, k + 1] = inverse(w, u[:, k], theta)
    return np.clip(u, 1e-12, 1 - 1e-12)


def copula_cdf(family, param, u, v):
    """Closed-form bivariate copula CDF, used as a simulation oracle."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if family == "gaussian":
        from scipy.stats import multivariate_normal

        uu, vv = np.broadcast_arrays(u, v)
        out = np.empty(uu.shape)
        flat_u, flat_v, flat_o = uu.ravel(), vv.ravel(), out.ravel()
        cov = np.array([[1.0, param], [param, 1.0]])
        for i in range(flat_u.size):
            if flat_u[i] <= 0 or flat_v[i] <= 0:
                flat_o[i] = 0.0
            else:
                flat_o[i] = multivariate_normal.cdf(
                    [ndtri(min(flat_u[i], 1.0)), ndtri(min(flat_v[i], 1.0))], cov=cov
                )
        return out
    if family == "clayton":
        return np.maximum(u ** (-param) + v ** (-param) - 1.0, 0.0) ** (-1.0 / param)
    if family == "frank":
        return (
            -np.log1p(np.expm1(-param * u) * np.expm1(-param * v) / np.expm1(-param))
            / param
        )
    raise InvalidSpec(f"unknown copula family {family!r}")


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OracleSet:
    """Per-unit latent state: both potential outcomes in all periods."""

    y0: np.ndarray  # n x n_periods, oldest first
    y1_t: np.ndarray
    treated: np.ndarray
    eta: np.ndarray
    v: np.ndarray
    x: np.ndarray

    @property
    def effects(self):
        """Treatment effects y1 - y0 in the last period, treated units."""
        mask = self.treated.astype(bool)
        return self.y1_t[mask] - self.y0[mask, -1]

    def to_frame(self):
        import pandas as pd

        cols = {f"y0_p{k}": self.y0[:, k] for k in range(self.y0.shape[1])}
        cols["y1_t"] = self.y1_t
        cols["treated"] = self.treated
        cols["eta"] = self.eta
        for j in range(self.x.shape[1]):
            cols[f"x{j}"] = self.x[:, j]
        return pd.DataFrame(cols)


def oracle_dott(oracle: OracleSet, delta_grid):
    """Exact empirical effect distribution of the treated units."""
    effects = oracle.effects
    delta_grid = np.asarray(delta_grid, dtype=float)
    return np.array([(effects <= d).mean() for d in delta_grid])


def oracle_qott(oracle: OracleSet, tau_grid):
    return ecdf(oracle.effects).quantile(np.asarray(tau_grid, dtype=float))


def _assign_treatment(rng, spec, eta):
    if spec.selection == "independent":
        return (rng.uniform(size=spec.n) < spec.p_treated).astype(np.int8)
    if spec.selection == "group":
        return (rng.uniform(size=spec.n) < spec.p_treated).astype(np.int8)
    # logistic in the unit heterogeneity, intercept calibrated so that the
    # average selection probability hits the target fraction
    slope = spec.selection_slope
    lo, hi = -50.0, 50.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        mean_p = np.mean(1.0 / (1.0 + np.exp(-(slope * eta - mid))))
        if mean_p > spec.p_treated:
            lo = mid
        else:
            hi = mid
    probs = 1.0 / (1.0 + np.exp(-(slope * eta - 0.5 * (lo + hi))))
    return (rng.uniform(size=spec.n) < probs).astype(np.int8)


def generate(spec: DgpSpec):
    """Draw a synthetic panel; returns (observed dataset, oracle set)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, periods = spec.n, spec.n_periods

    eta = spec.eta.mean + spec.eta.sd * rng.normal(size=n)
    u = sample_copula_chain(
        rng, n, periods, spec.v_copula.family, spec.v_copula.params_for(periods)
    )
    v = spec.v_sd * ndtri(u)
    x = rng.normal(size=(n, 1)) if spec.x_coef != 0.0 else np.empty((n, 0))
    x_term = spec.x_coef * x[:, 0] if spec.x_coef != 0.0 else 0.0

    treated = _assign_treatment(rng, spec, eta)
    if treated.sum() == 0 or treated.sum() == n:
        raise InvalidSpec("treatment assignment produced a degenerate split")
    if spec.selection == "group" and spec.eta.treated_shift != 0.0:
        eta = eta + spec.eta.treated_shift * treated

    theta = np.asarray(spec.theta, dtype=float)
    if spec.model == "twfe":
        y0 = theta[None, :] + eta[:, None] + v
    elif spec.model == "cic_panel":
        idx = eta[:, None] + v
        y0 = np.column_stack(
            [_make_h_map(spec.h_maps[s])(idx[:, s]) for s in range(periods)]
        )
        y0 = y0 + theta[None, :]
    else:  # interactive_fe
        lam = spec.factor.loading_sd * rng.normal(size=n)
        path = np.asarray(spec.factor.path, dtype=float)
        y0 = theta[None, :] + eta[:, None] + lam[:, None] * path[None, :] + v
    if spec.x_coef != 0.0:
        y0 = y0 + np.asarray(x_term)[:, None]

    y1_t = spec.effect.apply(y0[:, -1], rng)
    y_t = np.where(treated == 1, y1_t, y0[:, -1])

    observed = from_arrays(
        y_t=y_t,
        y_tm1=y0[:, -2],
        y_tm2=y0[:, -3],
        treated=treated,
        x=x if spec.x_coef != 0.0 else None,
        y_pre=y0[:, : periods - 3] if periods > 3 else None,
    )
    oracle = OracleSet(y0=y0, y1_t=y1_t, treated=treated, eta=eta, v=v, x=x)
    return observed, oracle


# ---------------------------------------------------------------------------
# population-level oracles (analytic conditionals)
# ---------------------------------------------------------------------------


class GaussianConditionalCdf(ConditionalCdf):
    """Analytic conditional CDF ``N(intercept + slope * w, sigma^2)`` over a
    threshold grid; used for population-level bound computations."""

    uses_lag = True
    uses_x = False

    def __init__(self, intercept, slope, sigma, thresholds):
        self.intercept = intercept
        self.slope = slope
        self.sigma = sigma
        self.thresholds = np.asarray(thresholds, dtype=float)

    def prob_matrix(self, y_lag=None, x=None):
        w = np.atleast_1d(np.asarray(y_lag, dtype=float))
        rows = norm.cdf(
            (self.thresholds[None, :] - self.intercept - self.slope * w[:, None])
            / self.sigma
        )
        return monotone_rearrange(rows, axis=-1)


@dataclass(frozen=True)
class GaussianPopulation:
    """Trivariate-normal population: the lagged outcome is standard normal;
    treated and untreated period-t outcomes correlate with it through
    ``rho1`` and ``rho0`` and the treated margin is shifted by ``shift``."""

    rho0: float
    rho1: float
    shift: float = 1.0

    def conditionals(self, n_thresholds=801, span=6.0):
        q0 = np.linspace(-span, span, n_thresholds)
        q1 = np.linspace(-span + self.shift, span + self.shift, n_thresholds)
        cond_y0 = GaussianConditionalCdf(
            0.0, self.rho0, np.sqrt(1 - self.rho0**2), q0
        )
        cond_y1 = GaussianConditionalCdf(
            self.shift, self.rho1, np.sqrt(1 - self.rho1**2), q1
        )
        return cond_y1, cond_y0

    def lag_nodes(self, n_nodes=401):
        """Equal-weight quantile nodes of the standard-normal lag."""
        return ndtri((np.arange(n_nodes) + 0.5) / n_nodes)

    def dott_bounds(self, delta_grid, n_nodes=401, n_thresholds=801):
        from .bounds import dott_bounds

        cond_y1, cond_y0 = self.conditionals(n_thresholds)
        return dott_bounds(cond_y1, cond_y0, self.lag_nodes(n_nodes), delta_grid)

    def worst_case_bounds(self, delta_grid, n_nodes=401, n_thresholds=801):
        from .bounds import makarov_bounds_from_matrices, BoundsCurve

        cond_y1, cond_y0 = self.conditionals(n_thresholds)
        nodes = self.lag_nodes(n_nodes)
        p1 = cond_y1.prob_matrix(nodes).mean(axis=0, keepdims=True)
        p0 = cond_y0.prob_matrix(nodes).mean(axis=0, keepdims=True)
        lo, up = makarov_bounds_from_matrices(
            cond_y1.thresholds, p1, cond_y0.thresholds, p0, delta_grid
        )
        return BoundsCurve(
            delta_grid=np.asarray(delta_grid, float),
            lower=lo,
            upper=up,
            raw_lower=lo,
            raw_upper=up,
        )
