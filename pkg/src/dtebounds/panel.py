"""Three-period panel ingestion, validation, and group views.

Wide format: one row per unit with outcome columns for periods t, t-1,
and t-2, a binary treatment indicator (treatment occurring in the last
period only), optional covariates, and optional additional
pre-treatment outcome columns (ordered oldest first) used by the
copula-stability pre-test.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .distributions import tie_fraction
from .errors import (
    EmptyGroup,
    HeavyTies,
    MissingColumn,
    NoVariationInTreatment,
    NonBinaryTreatment,
    NonNumericOutcome,
)

TIE_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class ColumnMap:
    """Maps dataset roles to CSV column names."""

    id: str    # noqa: A003 - matches the CSV role name
    y_t: str
    y_tm1: str
    y_tm2: str
    treated: str
    covariates: tuple = ()
    pre_periods: tuple = ()  # extra pre-treatment outcomes, oldest first

    def required(self):
        return (self.id, self.y_t, self.y_tm1, self.y_tm2, self.treated) + tuple(
            self.covariates
        ) + tuple(self.pre_periods)


@dataclass(frozen=True)
class UnitRecord:
    id: object  # noqa: A003
    y_t: float
    y_tm1: float
    y_tm2: float
    treated: int
    x: tuple = ()
    y_pre: tuple = ()


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Immutable panel of units observed in (at least) three periods.

    Treatment occurs in the last period only, so ``y_tm1`` and ``y_tm2``
    are untreated outcomes for every unit. Arrays are read-only; views
    produced by :func:`split_by_group` or :meth:`subset` share no state
    with callers.
    """

    ids: np.ndarray
    y_t: np.ndarray
    y_tm1: np.ndarray
    y_tm2: np.ndarray
    treated: np.ndarray
    x: np.ndarray
    y_pre: np.ndarray
    covariate_names: tuple = ()
    rejections: tuple = ()

    def __post_init__(self):
        for name in ("y_t", "y_tm1", "y_tm2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise NonNumericOutcome(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ids = np.asarray(self.ids)
        treated = np.asarray(self.treated)
        if treated.size and not np.all(np.isin(treated, (0, 1))):
            raise NonBinaryTreatment("treatment indicator must be 0/1")
        treated = treated.astype(np.int8)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(ids), -1) if x.size else np.empty((len(ids), 0))
        y_pre = np.asarray(self.y_pre, dtype=float)
        if y_pre.ndim == 1:
            y_pre = y_pre.reshape(len(ids), -1) if y_pre.size else np.empty((len(ids), 0))
        n = len(ids)
        for name, arr in (("treated", treated), ("y_t", self.y_t)):
            if len(arr) != n:
                raise ValueError(f"{name} length {len(arr)} != n {n}")
        if x.shape[0] != n or y_pre.shape[0] != n:
            raise ValueError("covariate / pre-period arrays have wrong length")
        if x.shape[1] != len(self.covariate_names):
            raise ValueError("covariate_names does not match covariate width")
        for arr in (ids, treated, x, y_pre):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "treated", treated)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y_pre", y_pre)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "rejections", tuple(self.rejections))

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n_treated(self) -> int:
        return int(self.treated.sum())

    @property
    def p_treated(self) -> float:
        return self.n_treated / self.n if self.n else float("nan")

    @property
    def n_pre_periods(self) -> int:
        """Number of pre-treatment periods (t-1 and t-2 plus extras)."""
        return 2 + self.y_pre.shape[1]

    def pre_outcome_matrix(self) -> np.ndarray:
        """Pre-treatment outcomes per unit, columns ordered oldest first."""
        return np.column_stack([self.y_pre, self.y_tm2, self.y_tm1])

    @property
    def units(self):
        return tuple(
            UnitRecord(
                id=self.ids[i],
                y_t=float(self.y_t[i]),
                y_tm1=float(self.y_tm1[i]),
                y_tm2=float(self.y_tm2[i]),
                treated=int(self.treated[i]),
                x=tuple(self.x[i]),
                y_pre=tuple(self.y_pre[i]),
            )
            for i in range(self.n)
        )

    def subset(self, indices) -> "PanelDataset":
        idx = np.asarray(indices)
        return PanelDataset(
            ids=self.ids[idx],
            y_t=self.y_t[idx],
            y_tm1=self.y_tm1[idx],
            y_tm2=self.y_tm2[idx],
            treated=self.treated[idx],
            x=self.x[idx],
            y_pre=self.y_pre[idx],
            covariate_names=self.covariate_names,
        )

    def require_variation(self):
        if self.n == 0 or self.n_treated == 0 or self.n_treated == self.n:
            raise NoVariationInTreatment(
                f"need both groups for estimation (n={self.n}, treated={self.n_treated})"
            )
        return self

    def equals(self, other: "PanelDataset") -> bool:
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.y_t, other.y_t)
            and np.array_equal(self.y_tm1, other.y_tm1)
            and np.array_equal(self.y_tm2, other.y_tm2)
            and np.array_equal(self.treated, other.treated)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y_pre, other.y_pre)
            and self.covariate_names == other.covariate_names
        )


def split_by_group(data: PanelDataset):
    """Disjoint, exhaustive (treated, control) views preserving row order."""
    mask = data.treated.astype(bool)
    treated = data.subset(np.flatnonzero(mask))
    control = data.subset(np.flatnonzero(~mask))
    if treated.n == 0:
        warnings.warn("treated view is empty", EmptyGroup, stacklevel=2)
    if control.n == 0:
        warnings.warn("control view is empty", EmptyGroup, stacklevel=2)
    return treated, control


def _coerce_treated(value):
    """Map a raw treatment cell to 0/1, or return None if not binary."""
    if isinstance(value, str):
        value = value.strip().lower()
        if value in ("0", "false"):
            return 0
        if value in ("1", "true"):
            return 1
        return None
    if pd.isna(value):
        return None
    f = float(value)
    if f in (0.0, 1.0):
        return int(f)
    return None


def load_panel(path, schema: ColumnMap, report_path=None) -> PanelDataset:
    """Load and validate a wide-format panel CSV.

    Rows with missing or non-numeric required fields are dropped and
    reported (written as JSON lines to ``report_path`` when given, and
    kept on ``dataset.rejections``). Column-level problems raise:
    :class:`MissingColumn`, :class:`NonBinaryTreatment`,
    :class:`NonNumericOutcome`, :class:`NoVariationInTreatment`.
    """
    frame = pd.read_csv(path, encoding="utf-8")
    missing = [c for c in schema.required() if c not in frame.columns]
    if missing:
        raise MissingColumn(f"missing columns: {missing}")

    numeric_cols = (
        [schema.y_t, schema.y_tm1, schema.y_tm2]
        + list(schema.covariates)
        + list(schema.pre_periods)
    )
    parsed = {}
    for col in numeric_cols:
        values = pd.to_numeric(frame[col], errors="coerce")
        if frame[col].notna().any() and values.isna().all():
            raise NonNumericOutcome(f"column {col!r} is entirely non-numeric")
        parsed[col] = values.to_numpy(dtype=float)

    treated_raw = [_coerce_treated(v) for v in frame[schema.treated]]
    non_binary = [
        v
        for v, c in zip(frame[schema.treated], treated_raw)
        if c is None and not pd.isna(v)
    ]
    if non_binary:
        raise NonBinaryTreatment(
            f"treatment column {schema.treated!r} has non-binary values: "
            f"{sorted(set(map(str, non_binary)))[:5]}"
        )

    rejections = []
    keep = []
    for i in range(len(frame)):
        reasons = [col for col in numeric_cols if not np.isfinite(parsed[col][i])]
        if treated_raw[i] is None:
            reasons.append(schema.treated)
        if reasons:
            rejections.append(
                {
                    "row": int(i),
                    "id": str(frame[schema.id].iloc[i]),
                    "missing_or_invalid": reasons,
                }
            )
        else:
            keep.append(i)

    if report_path is not None:
        with open(report_path, "w", encoding="utf-8") as fh:
            for rec in rejections:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    keep = np.asarray(keep, dtype=int)
    data = PanelDataset(
        ids=frame[schema.id].to_numpy()[keep],
        y_t=parsed[schema.y_t][keep],
        y_tm1=parsed[schema.y_tm1][keep],
        y_tm2=parsed[schema.y_tm2][keep],
        treated=np.asarray([treated_raw[i] for i in keep], dtype=np.int8),
        x=np.column_stack([parsed[c][keep] for c in schema.covariates])
        if schema.covariates
        else np.empty((len(keep), 0)),
        y_pre=np.column_stack([parsed[c][keep] for c in schema.pre_periods])
        if schema.pre_periods
        else np.empty((len(keep), 0)),
        covariate_names=tuple(schema.covariates),
        rejections=tuple(json.dumps(r, sort_keys=True) for r in rejections),
    )
    data.require_variation()

    untreated_pool = np.concatenate([data.y_tm1, data.y_tm2])
    frac = tie_fraction(untreated_pool)
    if frac > TIE_WARN_FRACTION:
        warnings.warn(
            f"tie fraction {frac:.1%} in untreated outcomes exceeds "
            f"{TIE_WARN_FRACTION:.0%}; continuity-based identification may be fragile",
            HeavyTies,
            stacklevel=2,
        )
    return data


def from_arrays(
    y_t,
    y_tm1,
    y_tm2,
    treated,
    x=None,
    y_pre=None,
    ids=None,
    covariate_names=None,
) -> PanelDataset:
    """Build a :class:`PanelDataset` directly from arrays (ids default 0..n-1)."""
    y_t = np.asarray(y_t, dtype=float)
    n = len(y_t)
    if ids is None:
        ids = np.arange(n)
    x = np.empty((n, 0)) if x is None else np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if covariate_names is None:
        covariate_names = tuple(f"x{j}" for j in range(x.shape[1]))
    y_pre = np.empty((n, 0)) if y_pre is None else np.asarray(y_pre, dtype=float)
    return PanelDataset(
        ids=np.asarray(ids),
        y_t=y_t,
        y_tm1=np.asarray(y_tm1, dtype=float),
        y_tm2=np.asarray(y_tm2, dtype=float),
        treated=np.asarray(treated),
        x=x,
        y_pre=y_pre,
        covariate_names=tuple(covariate_names),
    )
