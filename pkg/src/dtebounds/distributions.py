"""Empirical distribution machinery.

Step CDFs with generalized inverses, rank statistics, and empirical
copulas. Marginal distributions enter the identification and bounds
layers as :class:`StepCdf` objects; dependence summaries enter through
ranks (Spearman's rho, Kendall's tau) and lattice copulas.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import (
    DegenerateVariance,
    EmptySample,
    LengthMismatch,
    TauOutOfRange,
)

PROB_TOL = 1e-9


def _as_float_1d(values, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class StepCdf:
    """Right-continuous step distribution function on a finite grid.

    ``F(y)`` equals ``probs[i]`` for the largest ``grid[i] <= y`` and 0
    for ``y`` below the grid. ``grid`` is strictly increasing and
    ``probs`` is nondecreasing in [0, 1] with final element 1.
    """

    grid: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        grid = _as_float_1d(self.grid, "grid")
        probs = _as_float_1d(self.probs, "probs")
        if grid.size == 0:
            raise EmptySample("StepCdf needs at least one grid point")
        if grid.size != probs.size:
            raise ValueError("grid and probs must have equal length")
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(probs < -PROB_TOL) or np.any(probs > 1 + PROB_TOL):
            raise ValueError("probs must lie in [0, 1]")
        if np.any(np.diff(probs) < -PROB_TOL):
            raise ValueError("probs must be nondecreasing")
        if abs(probs[-1] - 1.0) > PROB_TOL:
            raise ValueError("final probability must equal 1")
        probs = np.ascontiguousarray(
            np.minimum.accumulate(np.clip(probs, 0.0, 1.0)[::-1])[::-1]
        )
        probs[-1] = 1.0
        grid = grid.copy()
        grid.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "probs", probs)

    def __call__(self, y):
        y_arr = np.asarray(y, dtype=float)
        idx = np.searchsorted(self.grid, y_arr, side="right") - 1
        out = np.where(idx >= 0, self.probs[np.clip(idx, 0, None)], 0.0)
        return out if y_arr.ndim else float(out)

    def quantile(self, tau):
        """Generalized inverse ``inf{y : F(y) >= tau}`` for tau in (0, 1]."""
        tau_arr = np.asarray(tau, dtype=float)
        if np.any(tau_arr <= 0) or np.any(tau_arr > 1):
            raise TauOutOfRange("tau must lie in (0, 1]")
        idx = np.searchsorted(self.probs, tau_arr, side="left")
        out = self.grid[np.clip(idx, 0, self.grid.size - 1)]
        return out if tau_arr.ndim else float(out)

    def quantile_fn(self):
        return QuantileFn(self)

    def mean(self):
        jumps = np.diff(np.concatenate(([0.0], self.probs)))
        return float(np.dot(self.grid, jumps))

    @property
    def support(self):
        return float(self.grid[0]), float(self.grid[-1])


@dataclass(frozen=True, eq=False)
class QuantileFn:
    """Generalized inverse of a :class:`StepCdf`.

    Satisfies the Galois property ``Q(tau) <= y  iff  tau <= F(y)``.
    """

    cdf: StepCdf

    def __call__(self, tau):
        return self.cdf.quantile(tau)


def ecdf(sample) -> StepCdf:
    """Empirical CDF: grid of sorted unique values, cumulative fractions."""
    arr = _as_float_1d(sample, "sample")
    if arr.size == 0:
        raise EmptySample("cannot build an ECDF from an empty sample")
    values, counts = np.unique(arr, return_counts=True)
    probs = np.cumsum(counts) / arr.size
    return StepCdf(values, probs)


def quantile(cdf: StepCdf, tau):
    """Generalized inverse of ``cdf`` at ``tau``; see :meth:`StepCdf.quantile`."""
    return cdf.quantile(tau)


def midranks(x):
    """Mid-ranks (ties get the average rank), 1-based."""
    return stats.rankdata(np.asarray(x, dtype=float), method="average")


def _check_paired(x, y, min_len=3):
    x = _as_float_1d(x, "x")
    y = _as_float_1d(y, "y")
    if x.size != y.size:
        raise LengthMismatch(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise LengthMismatch(f"need at least {min_len} paired observations")
    return x, y


def spearman_rho(x, y) -> float:
    """Sample correlation of mid-ranks."""
    x, y = _check_paired(x, y)
    rx = midranks(x)
    ry = midranks(y)
    if np.std(rx) == 0 or np.std(ry) == 0:
        raise DegenerateVariance("rank variance is zero")
    return float(np.corrcoef(rx, ry)[0, 1])


def kendall_tau(x, y) -> float:
    x, y = _check_paired(x, y)
    if np.std(x) == 0 or np.std(y) == 0:
        raise DegenerateVariance("variance is zero")
    return float(stats.kendalltau(x, y).statistic)


@dataclass(frozen=True, eq=False)
class CopulaGrid:
    """Copula values ``C(u, v)`` on a regular lattice over [0, 1]^2."""

    u: np.ndarray
    v: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        u = _as_float_1d(self.u, "u")
        v = _as_float_1d(self.v, "v")
        values = np.asarray(self.values, dtype=float)
        if values.shape != (u.size, v.size):
            raise ValueError("values must have shape (len(u), len(v))")
        for arr in (u, v, values):
            arr.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "values", values)

    def validate(self, tol=1e-9):
        """Check copula axioms on the lattice; raises ValueError on failure.

        Exact copulas satisfy the axioms to ~1e-9; empirical copulas only
        to O(1/n), so pass a tolerance appropriate to the source.
        """
        c = self.values
        problems = []
        if np.any(np.abs(c[:, self.v == 0.0]) > tol) or np.any(
            np.abs(c[self.u == 0.0, :]) > tol
        ):
            problems.append("C(u,0) or C(0,v) differs from 0")
        if np.any(self.u == 1.0) and np.max(np.abs(c[self.u == 1.0, :] - self.v)) > tol:
            problems.append("C(1,v) differs from v")
        if np.any(self.v == 1.0) and np.max(np.abs(c[:, self.v == 1.0].T - self.u)) > tol:
            problems.append("C(u,1) differs from u")
        vol = c[1:, 1:] - c[:-1, 1:] - c[1:, :-1] + c[:-1, :-1]
        if np.any(vol < -tol):
            problems.append(f"negative cell volume (min {vol.min():.3g})")
        if problems:
            raise ValueError("; ".join(problems))

    def max_abs_diff(self, other: "CopulaGrid") -> float:
        if self.values.shape != other.values.shape:
            raise ValueError("lattice shapes differ")
        return float(np.max(np.abs(self.values - other.values)))


def _le_ranks(x):
    """Normalized <=-count ranks: rank_i = #{j : x_j <= x_i} / n."""
    srt = np.sort(x)
    return np.searchsorted(srt, x, side="right") / x.size


def empirical_copula(x, y, resolution=101) -> CopulaGrid:
    """Empirical copula on a regular ``resolution`` x ``resolution`` lattice.

    ``C(u, v)`` is the fraction of pairs whose normalized <=-count ranks
    satisfy ``rank_x/n <= u`` and ``rank_y/n <= v``.
    """
    x, y = _check_paired(x, y, min_len=1)
    if resolution < 10:
        raise ValueError("lattice resolution must be at least 10")
    ux = _le_ranks(x)
    uy = _le_ranks(y)
    lattice = np.linspace(0.0, 1.0, resolution)
    ind_x = ux[:, None] <= lattice[None, :]
    ind_y = uy[:, None] <= lattice[None, :]
    values = (ind_x.T.astype(float) @ ind_y.astype(float)) / x.size
    return CopulaGrid(lattice, lattice, values)


def independence_copula(resolution=101) -> CopulaGrid:
    lattice = np.linspace(0.0, 1.0, resolution)
    return CopulaGrid(lattice, lattice, np.outer(lattice, lattice))


def frechet_upper_copula(resolution=101) -> CopulaGrid:
    lattice = np.linspace(0.0, 1.0, resolution)
    return CopulaGrid(lattice, lattice, np.minimum.outer(lattice, lattice))


def frechet_lower_copula(resolution=101) -> CopulaGrid:
    lattice = np.linspace(0.0, 1.0, resolution)
    values = np.maximum(np.add.outer(lattice, lattice) - 1.0, 0.0)
    return CopulaGrid(lattice, lattice, values)


def tie_fraction(values) -> float:
    """Fraction of observations sharing a value with another observation."""
    arr = _as_float_1d(values, "values")
    if arr.size == 0:
        return 0.0
    _, counts = np.unique(arr, return_counts=True)
    return float(np.sum(counts[counts > 1]) / arr.size)
