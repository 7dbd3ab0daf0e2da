"""Bounds on joint distributions and on the distribution/quantiles of the
treatment effect for the treated group.

Conditional Frechet-Hoeffding bounds on the joint of treated and
untreated period-t outcomes, conditional Makarov bounds on the CDF of
their difference, and their aggregation over the lagged-outcome
distribution yield DoTT bounds; inverting those yields QoTT bounds.
Worst-case (marginals-only) variants and point-identified
rank-invariance baselines are provided for comparison.

All sup/inf computations are exact over the merged finite grids: with
step-function inputs the extrema are attained at grid points and their
delta-shifts, so no continuous optimization is involved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import StepCdf, ecdf
from .errors import GridCoverage, TauOutsideRange
from .first_step import ConditionalCdf, monotone_rearrange

DEFAULT_TAU_GRID = np.round(np.arange(0.05, 0.951, 0.05), 10)


@dataclass(frozen=True, eq=False)
class BoundsCurve:
    """Lower/upper bounds on P(effect <= delta) over a delta grid.

    ``lower``/``upper`` are monotone (rearranged) curves with
    ``lower <= upper`` pointwise; the raw aggregated curves are kept for
    diagnostics since finite-sample aggregation can break monotonicity
    by grid noise.
    """

    delta_grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    raw_lower: np.ndarray = None
    raw_upper: np.ndarray = None

    def __post_init__(self):
        delta = np.asarray(self.delta_grid, dtype=float)
        raw_lower = np.asarray(
            self.lower if self.raw_lower is None else self.raw_lower, dtype=float
        )
        raw_upper = np.asarray(
            self.upper if self.raw_upper is None else self.raw_upper, dtype=float
        )
        lower = monotone_rearrange(np.asarray(self.lower, dtype=float))
        upper = monotone_rearrange(np.asarray(self.upper, dtype=float))
        if delta.size and np.any(np.diff(delta) <= 0):
            raise ValueError("delta_grid must be strictly increasing")
        if np.any(lower > upper + 1e-9):
            raise ValueError("lower bound exceeds upper bound")
        for arr in (delta, lower, upper, raw_lower, raw_upper):
            arr.setflags(write=False)
        object.__setattr__(self, "delta_grid", delta)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "raw_lower", raw_lower)
        object.__setattr__(self, "raw_upper", raw_upper)

    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def mean_width(self) -> float:
        return float(np.mean(self.width()))


@dataclass(frozen=True, eq=False)
class QuantileBoundsCurve:
    """Lower/upper bounds on the effect quantile over a tau grid.

    ``lower_at_edge`` / ``upper_at_edge`` flag levels where the
    inversion hit the bottom of the delta grid, meaning the true
    infimum lies at or below the grid minimum.
    """

    tau_grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    lower_at_edge: np.ndarray = None
    upper_at_edge: np.ndarray = None

    def __post_init__(self):
        tau = np.asarray(self.tau_grid, dtype=float)
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if np.any(lower > upper + 1e-9):
            raise ValueError("lower bound exceeds upper bound")
        for name in ("lower_at_edge", "upper_at_edge"):
            val = getattr(self, name)
            val = np.zeros(tau.size, dtype=bool) if val is None else np.asarray(val, bool)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "tau_grid", tau)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)


def fh_conditional_joint_bounds(f1, f0):
    """Frechet-Hoeffding bounds ``(max(F1+F0-1, 0), min(F1, F0))``.

    Accepts scalars or arrays of probabilities; point-identifies the
    joint when either margin is 0 or 1.
    """
    f1 = np.asarray(f1, dtype=float)
    f0 = np.asarray(f0, dtype=float)
    if np.any(f1 < -1e-12) or np.any(f1 > 1 + 1e-12) or np.any(f0 < -1e-12) or np.any(f0 > 1 + 1e-12):
        raise ValueError("margins must lie in [0, 1]")
    upper = np.minimum(f1, f0)
    lower = np.minimum(np.maximum(f1 + f0 - 1.0, 0.0), upper)
    if f1.ndim == 0 and f0.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


# ---------------------------------------------------------------------------
# Makarov machinery on grids
# ---------------------------------------------------------------------------


def _pad_zero(p):
    """Prepend a zero column: index -1 becomes 'below the grid'."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    return np.concatenate([np.zeros((p.shape[0], 1)), p], axis=1)


def _makarov_per_condition(q1, p1_pad, q0, p0_pad, delta, work=None):
    """Conditional Makarov bounds at one delta for every conditioning row.

    The sup/inf of F1(y) - F0(y - delta) over y is attained on the union
    of q1 and q0 + delta; returns (lower, upper) arrays over rows. Grid
    points of each CDF index themselves exactly (no float round trip).
    """
    m1 = q1.size
    m0 = q0.size
    n = p1_pad.shape[0]
    if work is None:
        work = np.empty((n, m1 + m0))
    a = work[:, :m1]
    b = work[:, m1:]
    # block A: y on the q1 grid
    np.take(p0_pad, np.searchsorted(q0, q1 - delta, side="right"), axis=1, out=a)
    np.subtract(p1_pad[:, 1:], a, out=a)
    # block B: y on the shifted q0 grid
    np.take(p1_pad, np.searchsorted(q1, q0 + delta, side="right"), axis=1, out=b)
    np.subtract(b, p0_pad[:, 1:], out=b)
    lower = np.maximum(work.max(axis=1), 0.0)
    upper = 1.0 + np.minimum(work.min(axis=1), 0.0)
    return lower, upper


def makarov_bounds_from_matrices(q1, p1, q0, p0, delta_grid, weights=None):
    """Aggregate conditional Makarov bounds over conditioning rows.

    ``p1`` (rows x len(q1)) and ``p0`` (rows x len(q0)) hold conditional
    CDF values over their threshold grids; rows are averaged with
    ``weights`` (uniform by default). Returns raw (lower, upper) curves
    over ``delta_grid``; negative weights are allowed (needed by the
    perturbed inputs of the numerical bootstrap).
    """
    q1 = np.asarray(q1, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    delta_grid = np.asarray(delta_grid, dtype=float)
    if delta_grid.size == 0:
        raise GridCoverage("delta grid is empty")
    if q1.size == 0 or q0.size == 0:
        raise GridCoverage("threshold grids must be nonempty")
    p1_pad = _pad_zero(p1)
    p0_pad = _pad_zero(p0)
    n_rows = p1_pad.shape[0]
    if p0_pad.shape[0] != n_rows:
        raise ValueError("conditional CDF matrices have different row counts")
    if weights is None:
        weights = np.full(n_rows, 1.0 / n_rows)
    else:
        weights = np.asarray(weights, dtype=float)
    lower = np.empty(delta_grid.size)
    upper = np.empty(delta_grid.size)
    work = np.empty((n_rows, q1.size + q0.size))
    for k, delta in enumerate(delta_grid):
        lo, up = _makarov_per_condition(q1, p1_pad, q0, p0_pad, delta, work=work)
        lower[k] = float(weights @ lo)
        upper[k] = float(weights @ up)
    return lower, upper


def makarov_conditional(f1_slice: StepCdf, f0_slice: StepCdf, delta):
    """Makarov bounds on P(Y1 - Y0 <= delta) for one pair of margins.

    lower = sup_y max(F1(y) - F0(y - delta), 0)
    upper = 1 + inf_y min(F1(y) - F0(y - delta), 0)
    """
    deltas = np.atleast_1d(np.asarray(delta, dtype=float))
    lower, upper = makarov_bounds_from_matrices(
        f1_slice.grid,
        f1_slice.probs[None, :],
        f0_slice.grid,
        f0_slice.probs[None, :],
        deltas,
    )
    if np.ndim(delta) == 0:
        return float(lower[0]), float(upper[0])
    return lower, upper


def _conditional_matrices(cond_y1, cond_y0, y_lag_sample, x_sample=None):
    y_lag_sample = np.asarray(y_lag_sample, dtype=float)
    p1 = cond_y1.prob_matrix(
        y_lag=y_lag_sample if cond_y1.uses_lag else None,
        x=x_sample if cond_y1.uses_x else None,
    )
    p0 = cond_y0.prob_matrix(
        y_lag=y_lag_sample if cond_y0.uses_lag else None,
        x=x_sample if cond_y0.uses_x else None,
    )
    return p1, p0


def dott_bounds(
    cond_y1: ConditionalCdf,
    cond_y0: ConditionalCdf,
    y_lag_sample,
    delta_grid,
    weights=None,
    x_sample=None,
) -> BoundsCurve:
    """Bounds on the effect distribution for the treated group.

    Conditional Makarov bounds given the lagged outcome (and covariates,
    when the evaluators condition on them) are averaged over the treated
    units' observed conditioning values.
    """
    delta_grid = np.asarray(delta_grid, dtype=float)
    p1, p0 = _conditional_matrices(cond_y1, cond_y0, y_lag_sample, x_sample)
    raw_lower, raw_upper = makarov_bounds_from_matrices(
        cond_y1.thresholds, p1, cond_y0.thresholds, p0, delta_grid, weights
    )
    return BoundsCurve(
        delta_grid=delta_grid,
        lower=raw_lower,
        upper=raw_upper,
        raw_lower=raw_lower,
        raw_upper=raw_upper,
    )


def dott_bounds_worst_case(f1: StepCdf, f0: StepCdf, delta_grid) -> BoundsCurve:
    """Makarov bounds using the two marginals alone (no conditioning)."""
    delta_grid = np.asarray(delta_grid, dtype=float)
    raw_lower, raw_upper = makarov_bounds_from_matrices(
        f1.grid, f1.probs[None, :], f0.grid, f0.probs[None, :], delta_grid
    )
    return BoundsCurve(
        delta_grid=delta_grid,
        lower=raw_lower,
        upper=raw_upper,
        raw_lower=raw_lower,
        raw_upper=raw_upper,
    )


def default_delta_grid(f1: StepCdf, f0: StepCdf, num=201):
    """Evenly spaced grid spanning the representable effect range."""
    lo = f1.grid[0] - f0.grid[-1]
    hi = f1.grid[-1] - f0.grid[0]
    return np.linspace(lo, hi, num)


# ---------------------------------------------------------------------------
# joint-distribution bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JointBoundsSurfaces:
    """Bivariate CDF bound surfaces over a (y1, y0) lattice."""

    y1_grid: np.ndarray
    y0_grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def joint_bounds_from_matrices(q1, p1, q0, p0, y1_grid, y0_grid, weights=None, chunk=512):
    q1 = np.asarray(q1, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    y1_grid = np.asarray(y1_grid, dtype=float)
    y0_grid = np.asarray(y0_grid, dtype=float)
    if y1_grid.size == 0 or y0_grid.size == 0:
        raise GridCoverage("evaluation grid is empty")
    if y1_grid[0] > q1[-1] or y1_grid[-1] < q1[0] or y0_grid[0] > q0[-1] or y0_grid[-1] < q0[0]:
        raise GridCoverage("evaluation grid does not overlap the threshold grids")
    p1_pad = _pad_zero(p1)
    p0_pad = _pad_zero(p0)
    n = p1_pad.shape[0]
    if weights is None:
        weights = np.full(n, 1.0 / n)
    else:
        weights = np.asarray(weights, dtype=float)
    idx1 = np.searchsorted(q1, y1_grid, side="right")
    idx0 = np.searchsorted(q0, y0_grid, side="right")
    lower = np.zeros((y1_grid.size, y0_grid.size))
    upper = np.zeros_like(lower)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        a = p1_pad[sl][:, idx1]  # rows x |y1|
        b = p0_pad[sl][:, idx0]  # rows x |y0|
        w = weights[sl]
        lo = np.maximum(a[:, :, None] + b[:, None, :] - 1.0, 0.0)
        up = np.minimum(a[:, :, None], b[:, None, :])
        lower += np.tensordot(w, lo, axes=(0, 0))
        upper += np.tensordot(w, up, axes=(0, 0))
    return lower, upper


def joint_bounds(
    cond_y1: ConditionalCdf,
    cond_y0: ConditionalCdf,
    y_lag_sample,
    eval_grid,
    weights=None,
    x_sample=None,
) -> JointBoundsSurfaces:
    """Bounds on the joint CDF of (treated, untreated) period-t outcomes.

    Averages conditional Frechet-Hoeffding bounds over the treated
    lagged-outcome distribution; ``eval_grid`` is a (y1_grid, y0_grid)
    pair defining the evaluation lattice.
    """
    y1_grid, y0_grid = (np.asarray(g, dtype=float) for g in eval_grid)
    p1, p0 = _conditional_matrices(cond_y1, cond_y0, y_lag_sample, x_sample)
    lower, upper = joint_bounds_from_matrices(
        cond_y1.thresholds, p1, cond_y0.thresholds, p0, y1_grid, y0_grid, weights
    )
    return JointBoundsSurfaces(y1_grid=y1_grid, y0_grid=y0_grid, lower=lower, upper=upper)


# ---------------------------------------------------------------------------
# quantile bounds and baselines
# ---------------------------------------------------------------------------


def qott_bounds(dott: BoundsCurve, tau_grid=None) -> QuantileBoundsCurve:
    """Invert DoTT bounds into QoTT bounds.

    The lower quantile bound inverts the UPPER distribution bound and
    vice versa; inversions are generalized inverses on the delta grid.
    Levels the upper curve never attains raise :class:`TauOutsideRange`;
    levels already attained at the grid minimum return the grid minimum
    with the at-edge flag set.
    """
    if tau_grid is None:
        tau_grid = DEFAULT_TAU_GRID
    tau_grid = np.asarray(tau_grid, dtype=float)

    def invert(curve):
        idx = np.searchsorted(curve, tau_grid, side="left")
        out_of_range = idx >= curve.size
        if np.any(out_of_range):
            raise TauOutsideRange(
                f"curve never reaches tau={tau_grid[out_of_range][0]:.3f} "
                "on the delta grid"
            )
        values = dott.delta_grid[idx]
        at_edge = idx == 0
        return values, at_edge

    lower, lower_edge = invert(dott.upper)
    upper, upper_edge = invert(dott.lower)
    return QuantileBoundsCurve(
        tau_grid=tau_grid,
        lower=lower,
        upper=upper,
        lower_at_edge=lower_edge,
        upper_at_edge=upper_edge,
    )


def spearman_rho_bounds(rho13, rho23):
    """Feasible interval for the third rank correlation of a trivariate
    system when two are known, from positive semidefiniteness; clipped
    to [-1, 1]."""
    if abs(rho13) > 1 or abs(rho23) > 1:
        raise ValueError("rank correlations must lie in [-1, 1]")
    center = rho13 * rho23
    rad_sq = rho13**2 * rho23**2 + (1.0 - rho13**2 - rho23**2)
    radius = np.sqrt(max(rad_sq, 0.0))
    return (
        float(np.clip(center - radius, -1.0, 1.0)),
        float(np.clip(center + radius, -1.0, 1.0)),
    )


def qott_rank_invariance(
    f1: StepCdf,
    f0: StepCdf,
    pairing="cross_sectional",
    treated_t=None,
    treated_tm1=None,
    tau_grid=None,
):
    """Point-identified QoTT baselines under rank invariance.

    ``cross_sectional``: quantiles of ``Q1(U) - Q0(U)`` with U uniform on
    the tau grid (the sorted QTT curve). ``over_time``: per-unit effects
    ``y_t - Q0(F_tm1(y_tm1))`` for treated units, with quantiles taken at
    the tau grid.
    """
    if tau_grid is None:
        tau_grid = DEFAULT_TAU_GRID
    tau_grid = np.asarray(tau_grid, dtype=float)
    if pairing == "cross_sectional":
        diffs = f1.quantile(tau_grid) - f0.quantile(tau_grid)
        return np.sort(diffs)
    if pairing == "over_time":
        if treated_t is None or treated_tm1 is None:
            raise ValueError("over_time pairing needs treated (y_t, y_tm1) pairs")
        treated_t = np.asarray(treated_t, dtype=float)
        treated_tm1 = np.asarray(treated_tm1, dtype=float)
        f_tm1 = ecdf(treated_tm1)
        effects = treated_t - f0.quantile(np.clip(f_tm1(treated_tm1), 1e-12, 1.0))
        return ecdf(effects).quantile(tau_grid)
    raise ValueError(f"unknown pairing {pairing!r}")
