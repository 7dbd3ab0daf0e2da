"""Change in Changes counterfactual distributions, ATT, and QTT.

The untreated counterfactual marginal for the treated group in the last
period is recovered by mapping the control group's period-to-period
quantile transformation onto the treated group's lagged distribution:

    F_cf(y) = F_tm1,treated( Q_tm1,control( F_t,control(y) ) )

A covariate-conditional version composes the same three maps at each
covariate value, with the conditional marginals supplied by inverted
quantile regressions.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .distributions import StepCdf, ecdf
from .errors import ClampedSupport, EmptySample
from .first_step import ConditionalCdf, QrModel, invert_qr_to_cdf, monotone_rearrange


def cic_counterfactual(treated_tm1, control_tm1, control_t) -> StepCdf:
    """Counterfactual CDF of the treated group's untreated period-t outcome.

    Evaluations of the control quantile map outside the treated lag
    support are clamped to the sample extremes; any resulting unplaced
    top mass is assigned to the largest grid point and flagged.
    """
    treated_tm1 = np.asarray(treated_tm1, dtype=float)
    control_tm1 = np.asarray(control_tm1, dtype=float)
    control_t = np.asarray(control_t, dtype=float)
    for name, arr in (
        ("treated_tm1", treated_tm1),
        ("control_tm1", control_tm1),
        ("control_t", control_t),
    ):
        if arr.size == 0:
            raise EmptySample(f"{name} is empty")
    f_t0 = ecdf(control_t)
    f_tm10 = ecdf(control_tm1)
    f_tm11 = ecdf(treated_tm1)
    q = f_tm10.quantile(f_t0.probs)
    vals = f_tm11(q)
    top_gap = 1.0 - vals[-1]
    if top_gap > 0:
        warnings.warn(
            f"{top_gap:.4f} of treated lag mass lies above the control lag "
            "support; assigned to the top grid point",
            ClampedSupport,
            stacklevel=2,
        )
        vals = vals.copy()
        vals[-1] = 1.0
    return StepCdf(f_t0.grid, vals)


def cic_transform_lags(treated_tm1, control_tm1, control_t):
    """Per-unit counterfactual draws implied by the CIC step estimator.

    Each treated lag is sent to the control period-t order statistic at
    the rank of the first control lag reaching it (left-continuous
    composition); values beyond the control support clamp to the
    extremes. The empirical distribution of these draws reproduces the
    counterfactual CDF of :func:`cic_counterfactual` on its grid, so in
    particular the means agree exactly.
    """
    control_tm1 = np.sort(np.asarray(control_tm1, dtype=float))
    f_t0 = ecdf(np.asarray(control_t, dtype=float))
    below = np.searchsorted(control_tm1, np.asarray(treated_tm1, dtype=float), side="left")
    taus = np.minimum((below + 1) / control_tm1.size, 1.0)
    return f_t0.quantile(taus)


@dataclass(frozen=True, eq=False)
class AttQtt:
    att: float
    tau_grid: np.ndarray
    qtt: np.ndarray


def att_qtt(treated_t, counterfactual: StepCdf, tau_grid=None) -> AttQtt:
    """ATT and the QTT curve from the observed treated outcomes and the
    counterfactual marginal."""
    treated_t = np.asarray(treated_t, dtype=float)
    if treated_t.size == 0:
        raise EmptySample("treated_t is empty")
    if tau_grid is None:
        tau_grid = np.arange(0.05, 0.951, 0.05)
    tau_grid = np.asarray(tau_grid, dtype=float)
    f1 = ecdf(treated_t)
    att = float(treated_t.mean() - counterfactual.mean())
    qtt = f1.quantile(tau_grid) - counterfactual.quantile(tau_grid)
    return AttQtt(att=att, tau_grid=tau_grid, qtt=qtt)


class CicConditionalCdf(ConditionalCdf):
    """Covariate-conditional counterfactual CDF built from three inverted
    quantile-regression models (treated lag, control lag, control t)."""

    uses_lag = False
    uses_x = True

    def __init__(self, qr_tm1_treated: QrModel, qr_tm1_control: QrModel,
                 qr_t_control: QrModel, thresholds):
        self.qr_tm1_treated = qr_tm1_treated
        self.qr_tm1_control = qr_tm1_control
        self.qr_t_control = qr_t_control
        self.thresholds = np.asarray(thresholds, dtype=float)

    def stepcdf_at(self, x_row) -> StepCdf:
        f_t0 = invert_qr_to_cdf(self.qr_t_control, x_row)
        f_tm10 = invert_qr_to_cdf(self.qr_tm1_control, x_row)
        f_tm11 = invert_qr_to_cdf(self.qr_tm1_treated, x_row)
        vals = f_tm11(f_tm10.quantile(np.clip(f_t0(self.thresholds), 1e-12, 1.0)))
        low = f_t0(self.thresholds) <= 0
        vals = np.where(low, 0.0, vals)
        return StepCdf(
            self.thresholds,
            np.concatenate([vals[:-1], [1.0]]) if vals[-1] < 1.0 else vals,
        )

    def prob_matrix(self, y_lag=None, x=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rows = np.empty((x.shape[0], self.thresholds.size))
        for i, xi in enumerate(x):
            row = np.ones(xi.size + 1)
            row[1:] = xi
            rows[i] = self.stepcdf_at(row)(self.thresholds)
        return monotone_rearrange(rows, axis=-1)


def cic_counterfactual_conditional(
    qr_tm1_treated: QrModel,
    qr_tm1_control: QrModel,
    qr_t_control: QrModel,
    thresholds,
) -> CicConditionalCdf:
    """Compose the three conditional CDFs/inverses at each covariate value."""
    return CicConditionalCdf(qr_tm1_treated, qr_tm1_control, qr_t_control, thresholds)
