"""End-to-end estimation pipelines and batch runners.

The estimation chain is: load panel -> group split -> counterfactual
marginal (Change in Changes) -> conditional CDFs (outcome given lag,
and the stability-identified counterfactual conditional) -> DoTT/QoTT
bounds (worst-case and stability-based, with optional covariate
tightening) -> numerical-bootstrap bands -> dependence pre-test.

``CsaBoundsPipeline`` and ``WorstCaseBoundsPipeline`` package the chain
as (fit, phi) pairs operating on grids frozen at construction, which is
the shape the numerical bootstrap needs.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import __version__
from .bounds import (
    BoundsCurve,
    default_delta_grid,
    dott_bounds,
    dott_bounds_worst_case,
    makarov_bounds_from_matrices,
    qott_bounds,
)
from .cic import CicConditionalCdf, att_qtt, cic_counterfactual, cic_counterfactual_conditional
from .config import RunConfig
from .csa import CsaInputs, csa_conditional_cdf
from .dgp import generate, oracle_dott
from .distributions import StepCdf, ecdf, spearman_rho
from .errors import ConfigError, InsufficientPeriods
from .first_step import (
    DrConditionalCdf,
    add_intercept,
    conditional_cdf_y1,
    default_tau_grid,
    fit_dr_from_indicators,
    fit_distribution_regression,
    fit_quantile_regression,
    invert_qr_to_cdf,
    monotone_rearrange,
)
from .inference import BootConfig, numerical_bootstrap, pretest_csa_rho, spawn_rngs
from .panel import PanelDataset, load_panel, split_by_group


import contextlib


@contextlib.contextmanager
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def _threshold_levels(num):
    return np.arange(1, num + 1) / (num + 1)

def _grid_from_sample(sample, num):
    # quantile thresholds extended by the sample extremes so that bound
    # curves can attain 0 and 1 on a spanning delta grid
    qs = np.quantile(sample, _threshold_levels(num))
    return np.unique(np.concatenate([qs, [np.min(sample), np.max(sample)]]))

def _grid_from_cdf(cdf, num):
    qs = cdf.quantile(_threshold_levels(num))
    return np.unique(np.concatenate([qs, [cdf.grid[0], cdf.grid[-1]]]))


def _rearranged(lo, up, delta_grid):
    return BoundsCurve(
        delta_grid=delta_grid, lower=lo, upper=up, raw_lower=lo, raw_upper=up
    )


def _invert_clamped(curve_vals, delta_grid, tau_grid):
    """Generalized inverse clamped to the grid (bootstrap-perturbed curves
    may not span [0, 1])."""
    idx = np.minimum(
        np.searchsorted(curve_vals, tau_grid, side="left"), delta_grid.size - 1
    )
    return delta_grid[idx]


class CsaBoundsPipeline:
    """Stability-based DoTT/QoTT bounds as a (fit, phi) pair.

    Threshold grids, the conditioning atoms (the base treated units'
    lagged outcomes), and the output grids are frozen at construction;
    ``fit`` re-estimates every first step on the data it is handed and
    evaluates on the frozen grids, which is what makes the perturbation
    arithmetic of the numerical bootstrap well defined.
    """

    def __init__(
        self,
        base_data: PanelDataset,
        delta_grid=None,
        tau_grid=None,
        n_thresholds=99,
        link="logit",
        estimator="distribution_regression",
        bandwidth=0.10,
        min_pairs=30,
    ):
        self.link = link
        self.estimator = estimator
        self.bandwidth = bandwidth
        self.min_pairs = min_pairs
        with _quiet():
            treated, control = split_by_group(base_data)
            f_t = cic_counterfactual(treated.y_tm1, control.y_tm1, control.y_t)
        self.q1 = _grid_from_sample(treated.y_t, n_thresholds)
        self.q0 = _grid_from_cdf(f_t, n_thresholds)
        self.atom_lags = treated.y_tm1.copy()
        self._atom_index = {uid: k for k, uid in enumerate(treated.ids)}
        if delta_grid is None:
            delta_grid = default_delta_grid(ecdf(treated.y_t), f_t, 201)
        self.delta_grid = np.asarray(delta_grid, dtype=float)
        self.tau_grid = None if tau_grid is None else np.asarray(tau_grid, dtype=float)
        self.grid = (
            self.delta_grid
            if self.tau_grid is None
            else np.concatenate([self.delta_grid, self.tau_grid])
        )
        self.segments = (
            (("dott", self.delta_grid.size),)
            if self.tau_grid is None
            else (("dott", self.delta_grid.size), ("qott", self.tau_grid.size))
        )
        # warm starts for replicate refits, set by the first (base) fit
        self._warm_y1 = None
        self._warm_y0 = None

    def fit(self, data: PanelDataset):
        """First steps on ``data``, evaluated on the frozen grids."""
        is_base = self._warm_y1 is None
        with _quiet():
            treated, control = split_by_group(data)
            f_t = cic_counterfactual(treated.y_tm1, control.y_tm1, control.y_t)
            design = add_intercept(treated.y_tm1)
            model_y1 = fit_distribution_regression(
                treated.y_t, design, self.q1, link=self.link,
                warm_start=self._warm_y1, compute_se=is_base,
            )
            p1 = model_y1.predict_cdf(add_intercept(self.atom_lags))
            inputs = CsaInputs(
                f_t=f_t,
                f_tm1=ecdf(treated.y_tm1),
                f_tm2=ecdf(treated.y_tm2),
                y_tm1=treated.y_tm1,
                y_tm2=treated.y_tm2,
                min_pairs=self.min_pairs,
            )
            cond0 = csa_conditional_cdf(
                inputs,
                estimator=self.estimator,
                thresholds=self.q0,
                bandwidth=self.bandwidth,
                link=self.link,
                warm_start=self._warm_y0,
                compute_se=is_base,
            )
            p0 = cond0.prob_matrix(self.atom_lags)
        if is_base:
            self._warm_y1 = model_y1.coef.copy()
            if hasattr(cond0, "model"):
                self._warm_y0 = cond0.model.coef.copy()
        counts = np.zeros(len(self._atom_index))
        for uid in treated.ids:
            counts[self._atom_index[uid]] += 1
        weights = counts / counts.sum()
        return p1, p0, weights

    def phi(self, fit):
        p1, p0, weights = fit
        lo, up = makarov_bounds_from_matrices(
            self.q1, p1, self.q0, p0, self.delta_grid, weights
        )
        lo = monotone_rearrange(lo)
        up = monotone_rearrange(up)
        if self.tau_grid is None:
            return np.concatenate([lo, up])
        qott_lo = _invert_clamped(up, self.delta_grid, self.tau_grid)
        qott_up = _invert_clamped(lo, self.delta_grid, self.tau_grid)
        return np.concatenate([lo, qott_lo, up, qott_up])

    def curve(self, data: PanelDataset) -> BoundsCurve:
        p1, p0, weights = self.fit(data)
        lo, up = makarov_bounds_from_matrices(
            self.q1, p1, self.q0, p0, self.delta_grid, weights
        )
        return _rearranged(lo, up, self.delta_grid)


class WorstCaseBoundsPipeline:
    """Marginals-only DoTT/QoTT bounds as a (fit, phi) pair."""

    def __init__(self, base_data: PanelDataset, delta_grid=None, tau_grid=None,
                 n_thresholds=199):
        with _quiet():
            treated, control = split_by_group(base_data)
            f_t_cf = cic_counterfactual(treated.y_tm1, control.y_tm1, control.y_t)
        self.q1 = _grid_from_sample(treated.y_t, n_thresholds)
        self.q0 = _grid_from_cdf(f_t_cf, n_thresholds)
        if delta_grid is None:
            delta_grid = default_delta_grid(ecdf(treated.y_t), f_t_cf, 201)
        self.delta_grid = np.asarray(delta_grid, dtype=float)
        self.tau_grid = None if tau_grid is None else np.asarray(tau_grid, dtype=float)
        self.grid = (
            self.delta_grid
            if self.tau_grid is None
            else np.concatenate([self.delta_grid, self.tau_grid])
        )
        self.segments = (
            (("dott", self.delta_grid.size),)
            if self.tau_grid is None
            else (("dott", self.delta_grid.size), ("qott", self.tau_grid.size))
        )

    def fit(self, data: PanelDataset):
        with _quiet():
            treated, control = split_by_group(data)
            f1 = ecdf(treated.y_t)
            f0 = cic_counterfactual(treated.y_tm1, control.y_tm1, control.y_t)
        return f1(self.q1)[None, :], f0(self.q0)[None, :]

    def phi(self, fit):
        p1, p0 = fit
        lo, up = makarov_bounds_from_matrices(self.q1, p1, self.q0, p0, self.delta_grid)
        lo = monotone_rearrange(lo)
        up = monotone_rearrange(up)
        if self.tau_grid is None:
            return np.concatenate([lo, up])
        qott_lo = _invert_clamped(up, self.delta_grid, self.tau_grid)
        qott_up = _invert_clamped(lo, self.delta_grid, self.tau_grid)
        return np.concatenate([lo, qott_lo, up, qott_up])

    def curve(self, data: PanelDataset) -> BoundsCurve:
        p1, p0 = self.fit(data)
        lo, up = makarov_bounds_from_matrices(self.q1, p1, self.q0, p0, self.delta_grid)
        return _rearranged(lo, up, self.delta_grid)


# ---------------------------------------------------------------------------
# covariate-tightened variants
# ---------------------------------------------------------------------------


def _conditional_marginal_models(data: PanelDataset, n_tau=99):
    """Quantile-regression fits of the three CIC ingredients on covariates."""
    treated, control = split_by_group(data)
    taus = default_tau_grid(n_tau)
    qr_tm1_treated = fit_quantile_regression(
        treated.y_tm1, add_intercept(treated.x), taus
    )
    qr_tm1_control = fit_quantile_regression(
        control.y_tm1, add_intercept(control.x), taus
    )
    qr_t_control = fit_quantile_regression(control.y_t, add_intercept(control.x), taus)
    qr_tm2_treated = fit_quantile_regression(
        treated.y_tm2, add_intercept(treated.x), taus
    )
    return qr_tm1_treated, qr_tm1_control, qr_t_control, qr_tm2_treated


def worst_case_bounds_covariates(
    data: PanelDataset, delta_grid, n_thresholds=99, link="logit", n_tau=99
) -> BoundsCurve:
    """Worst-case bounds tightened by conditioning both marginals on
    covariates and averaging over the treated covariate distribution."""
    treated, control = split_by_group(data)
    with _quiet():
        qr_a, qr_b, qr_c, _ = _conditional_marginal_models(data, n_tau)
        f_t_cf = cic_counterfactual(treated.y_tm1, control.y_tm1, control.y_t)
        q1 = _grid_from_sample(treated.y_t, n_thresholds)
        q0 = _grid_from_cdf(f_t_cf, n_thresholds)
        model_y1 = fit_distribution_regression(
            treated.y_t, add_intercept(treated.x), q1, link=link
        )
        cond_y1 = DrConditionalCdf(model_y1, uses_lag=False, uses_x=True)
        cond_y0 = cic_counterfactual_conditional(qr_a, qr_b, qr_c, q0)
        return dott_bounds(
            cond_y1, cond_y0, treated.y_tm1, delta_grid, x_sample=treated.x
        )


def csa_bounds_covariates(
    data: PanelDataset, delta_grid, n_thresholds=99, link="logit", n_tau=99
) -> BoundsCurve:
    """Stability-based bounds conditioning on both the lagged outcome and
    covariates (margin adjustments done at each covariate value)."""
    treated, control = split_by_group(data)
    with _quiet():
        qr_tm1_t, qr_tm1_c, qr_t_c, qr_tm2_t = _conditional_marginal_models(data, n_tau)
        f_t_cf = cic_counterfactual(treated.y_tm1, control.y_tm1, control.y_t)
        q1 = _grid_from_sample(treated.y_t, n_thresholds)
        q0 = _grid_from_cdf(f_t_cf, n_thresholds)
        cond_cf = cic_counterfactual_conditional(qr_tm1_t, qr_tm1_c, qr_t_c, q0)

        n1 = treated.n
        z = np.empty((n1, q0.size))
        w = np.empty(n1)
        for i in range(n1):
            row = np.concatenate([[1.0], treated.x[i]])
            f_t_x = cond_cf.stepcdf_at(row)
            f_tm1_x = invert_qr_to_cdf(qr_tm1_t, row)
            f_tm2_x = invert_qr_to_cdf(qr_tm2_t, row)
            taus_i = np.clip(f_t_x(q0), 1e-12, 1.0)
            adjusted_i = f_tm1_x.quantile(taus_i)
            z[i] = treated.y_tm1[i] <= adjusted_i
            w[i] = f_tm1_x.quantile(
                np.clip(f_tm2_x(np.array([treated.y_tm2[i]])), 1e-12, 1.0)
            )[0]
        design = np.column_stack([np.ones(n1), w, treated.x])
        model_y0 = fit_dr_from_indicators(z, design, q0, link=link)
        cond_y0 = DrConditionalCdf(model_y0, thresholds=q0, uses_lag=True, uses_x=True)
        cond_y1 = conditional_cdf_y1(treated, use_covariates=True, thresholds=q1, link=link)
        return dott_bounds(
            cond_y1, cond_y0, treated.y_tm1, delta_grid, x_sample=treated.x
        )


# ---------------------------------------------------------------------------
# batch runners
# ---------------------------------------------------------------------------


def reshape_long_to_wide(frame: pd.DataFrame, spec) -> pd.DataFrame:
    """Long panel (unit, period, outcome) to one row per unit.

    ``spec.periods`` lists the period labels oldest first; the last
    three become the twice-lagged, lagged, and treatment-period outcome
    columns, earlier ones become extra pre-treatment columns.
    """
    frame = frame[frame[spec.period].isin(list(spec.periods))]
    wide = frame.pivot(index=spec.unit, columns=spec.period, values=spec.outcome)
    missing = [p for p in spec.periods if p not in wide.columns]
    if missing:
        raise ConfigError(f"periods {missing} absent from long data", field="data.csv.long")
    wide = wide[list(spec.periods)]
    labels = [f"pre_{p}" for p in spec.periods[:-3]] + ["y_tm2", "y_tm1", "y_t"]
    wide.columns = labels
    per_unit = frame.groupby(spec.unit).first()
    wide["treated"] = per_unit[spec.treated]
    for cov in spec.covariates:
        wide[cov] = per_unit[cov]
    return wide.reset_index().rename(columns={spec.unit: "unit"})


def _load_data(cfg: RunConfig, workdir=".") -> tuple:
    """Returns (dataset, oracle-or-None, rejections)."""
    import os

    if cfg.source == "dgp":
        data, oracle = generate(cfg.dgp)
        return data, oracle, ()
    src = cfg.csv
    path = src.path if os.path.isabs(src.path) else os.path.join(workdir, src.path)
    if src.long is not None:
        frame = pd.read_csv(path, encoding="utf-8")
        wide = reshape_long_to_wide(frame, src.long)
        from .panel import ColumnMap

        schema = ColumnMap(
            id="unit",
            y_t="y_t",
            y_tm1="y_tm1",
            y_tm2="y_tm2",
            treated="treated",
            covariates=tuple(src.long.covariates),
            pre_periods=tuple(f"pre_{p}" for p in src.long.periods[:-3]),
        )
        tmp = path + ".wide.csv"
        wide.to_csv(tmp, index=False)
        data = load_panel(tmp, schema)
        os.remove(tmp)
    else:
        data = load_panel(path, src.schema)
    return data, None, data.rejections


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


@dataclass
class AnalysisResult:
    manifest: dict
    dott: pd.DataFrame
    qott: pd.DataFrame


def run_analysis(cfg: RunConfig, out_dir, seed=None, threads=1) -> AnalysisResult:
    """Execute the full chain and write the artifact set to ``out_dir``."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    est = cfg.estimation
    data, oracle, rejections = _load_data(cfg)
    data.require_variation()
    with open(os.path.join(out_dir, "rejections.jsonl"), "w", encoding="utf-8") as fh:
        for rec in rejections:
            fh.write(rec + "\n")

    treated, control = split_by_group(data)
    if treated.n < est.min_treated:
        from .errors import TooFewTreatedUnits

        raise TooFewTreatedUnits(
            f"{treated.n} treated units; floor is {est.min_treated}"
        )
    tau_grid = est.tau_grid()

    with _quiet():
        f_t_cf = cic_counterfactual(treated.y_tm1, control.y_tm1, control.y_t)
    f1 = ecdf(treated.y_t)
    delta_grid = default_delta_grid(f1, f_t_cf, est.delta_points)

    # ATT / QTT
    res_att = att_qtt(treated.y_t, f_t_cf, tau_grid)
    att_frame = pd.DataFrame(
        {"tau": res_att.tau_grid, "qtt": res_att.qtt, "att": res_att.att}
    )
    att_frame.to_csv(os.path.join(out_dir, "att_qtt.csv"), index=False)

    # bounds, all configured variants
    wc_pipe = WorstCaseBoundsPipeline(data, delta_grid, tau_grid)
    csa_pipe = CsaBoundsPipeline(
        data,
        delta_grid,
        tau_grid,
        n_thresholds=est.n_thresholds,
        link=est.link,
        estimator=est.conditional_estimator,
        bandwidth=est.bandwidth,
        min_pairs=est.min_pairs,
    )
    wc_curve = wc_pipe.curve(data)
    csa_curve = csa_pipe.curve(data)
    dott_cols = {
        "delta": delta_grid,
        "worst_case_lower": wc_curve.lower,
        "worst_case_upper": wc_curve.upper,
        "csa_lower": csa_curve.lower,
        "csa_upper": csa_curve.upper,
    }
    curves = {"worst_case": wc_curve, "csa": csa_curve}
    if est.use_covariates and data.covariate_names:
        wc_cov = worst_case_bounds_covariates(
            data, delta_grid, est.n_thresholds, est.link, est.n_tau_qr
        )
        csa_cov = csa_bounds_covariates(
            data, delta_grid, est.n_thresholds, est.link, est.n_tau_qr
        )
        dott_cols.update(
            {
                "worst_case_cov_lower": wc_cov.lower,
                "worst_case_cov_upper": wc_cov.upper,
                "csa_cov_lower": csa_cov.lower,
                "csa_cov_upper": csa_cov.upper,
            }
        )
        curves.update({"worst_case_cov": wc_cov, "csa_cov": csa_cov})
    dott_frame = pd.DataFrame(dott_cols)
    dott_frame.to_csv(os.path.join(out_dir, "dott_bounds.csv"), index=False)

    qott_cols = {"tau": tau_grid}
    for name, curve in curves.items():
        q = qott_bounds(curve, tau_grid)
        qott_cols[f"{name}_lower"] = q.lower
        qott_cols[f"{name}_upper"] = q.upper
        qott_cols[f"{name}_lower_at_edge"] = q.lower_at_edge
        qott_cols[f"{name}_upper_at_edge"] = q.upper_at_edge
    qott_frame = pd.DataFrame(qott_cols)
    qott_frame.to_csv(os.path.join(out_dir, "qott_bounds.csv"), index=False)

    # dependence path (adjacent-pair rank correlations with bootstrap SEs)
    spearman_rows = []
    rngs = spawn_rngs(seed + 1, 1)
    rho_rng = rngs[0]
    for group_name, group in (("treated", treated), ("control", control)):
        pre = group.pre_outcome_matrix()
        cols = [pre[:, k] for k in range(pre.shape[1])]
        if group_name == "control":
            cols.append(group.y_t)
        for k in range(len(cols) - 1):
            rho = spearman_rho(cols[k], cols[k + 1])
            boots = np.empty(200)
            for b in range(200):
                idx = rho_rng.integers(0, group.n, size=group.n)
                boots[b] = spearman_rho(cols[k][idx], cols[k + 1][idx])
            spearman_rows.append(
                {
                    "group": group_name,
                    "pair": f"period_{k}_to_{k + 1}",
                    "rho": rho,
                    "se_boot": float(boots.std(ddof=1)),
                    "n_units": group.n,
                }
            )
    pd.DataFrame(spearman_rows).to_csv(
        os.path.join(out_dir, "spearman_path.csv"), index=False
    )

    # pre-test
    pretest_payload = {"status": "skipped", "reason": "fewer than 3 pre-periods"}
    if cfg.pretest != "off":
        try:
            report = pretest_csa_rho(
                data,
                BootConfig(
                    n_boot=max(cfg.bootstrap.n_boot, 200),
                    epsilon=cfg.bootstrap.epsilon,
                    seed=seed + 2,
                    alpha=cfg.bootstrap.alpha,
                ),
            )
            pretest_payload = {
                "status": "ok",
                "statistic": report.statistic,
                "p_value": report.p_value,
                "rhos": list(report.rhos),
                "rho_ses": list(report.rho_ses),
                "pair_labels": list(report.pair_labels),
                "n_units": report.n_units,
                "n_boot": report.n_boot,
            }
        except InsufficientPeriods as exc:
            if cfg.pretest == "on":
                raise
            pretest_payload = {"status": "skipped", "reason": str(exc)}
    _write_json(os.path.join(out_dir, "pretest.json"), pretest_payload)

    # inference
    inference_note = "skipped"
    if cfg.bootstrap.enabled:
        boot_cfg = BootConfig(
            n_boot=cfg.bootstrap.n_boot,
            epsilon=cfg.bootstrap.epsilon,
            seed=seed + 3,
            alpha=cfg.bootstrap.alpha,
        )
        rows = []
        pipes = {"csa": csa_pipe, "worst_case": wc_pipe}
        for target in cfg.bootstrap.targets:
            band = numerical_bootstrap(data, pipes[target], boot_cfg, threads=threads)
            offset = 0
            for seg_name, size in pipes[target].segments:
                seg_grid = band.grid[offset : offset + size]
                for j in range(size):
                    rows.append(
                        {
                            "parameter": seg_name,
                            "variant": target,
                            "grid": seg_grid[j],
                            "lower_est": band.lower_est[offset + j],
                            "lower_ci": band.lower_ci[offset + j],
                            "upper_est": band.upper_est[offset + j],
                            "upper_ci": band.upper_ci[offset + j],
                        }
                    )
                offset += size
        pd.DataFrame(rows).to_csv(os.path.join(out_dir, "ci_bands.csv"), index=False)
        inference_note = f"numerical bootstrap, n_boot={boot_cfg.n_boot}"

    # oracle comparison on synthetic runs
    oracle_payload = None
    if oracle is not None:
        truth = oracle_dott(oracle, delta_grid)
        inside = np.all(
            (csa_curve.lower - 0.02 <= truth) & (truth <= csa_curve.upper + 0.02)
        )
        oracle_payload = {
            "oracle_inside_csa_bounds": bool(inside),
            "max_lower_violation": float(np.max(csa_curve.lower - truth)),
            "max_upper_violation": float(np.max(truth - csa_curve.upper)),
        }
        _write_json(os.path.join(out_dir, "oracle_check.json"), oracle_payload)

    manifest = {
        "config_hash": cfg.config_hash,
        "seed": seed,
        "n": data.n,
        "p_treated": data.p_treated,
        "inference": inference_note,
        "pretest": pretest_payload["status"],
        "artifacts": sorted(
            f for f in os.listdir(out_dir) if f != "run_manifest.json"
        ),
        "versions": {
            "dtebounds": __version__,
            "numpy": np.__version__,
            "pandas": pd.__version__,
        },
    }
    _write_json(os.path.join(out_dir, "run_manifest.json"), manifest)
    return AnalysisResult(manifest=manifest, dott=dott_frame, qott=qott_frame)


def run_montecarlo(cfg: RunConfig, out_dir, seed=None, threads=1) -> pd.DataFrame:
    """Per-cell summary metrics across a grid of generator settings."""
    import itertools
    import os

    if cfg.montecarlo is None:
        raise ConfigError("montecarlo section missing", field="montecarlo")
    if cfg.source != "dgp":
        raise ConfigError("montecarlo needs a dgp data source", field="data.source")
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    mc = cfg.montecarlo
    est = cfg.estimation

    grid_keys = sorted(mc.grid.keys())
    grid_values = [mc.grid[k] for k in grid_keys]
    cells = list(itertools.product(*grid_values)) if grid_keys else [()]

    rows = []
    if mc.repetitions == 0:
        warnings.warn("montecarlo configured with 0 repetitions", stacklevel=2)
    for cell_id, cell in enumerate(cells):
        overrides = dict(zip(grid_keys, cell))
        widths_csa, widths_wc, covered, rejected = [], [], [], []
        for rep in range(mc.repetitions):
            rep_seed = seed + 1000 * cell_id + rep
            spec = _apply_overrides(cfg.dgp, overrides, rep_seed)
            data, oracle = generate(spec)
            with _quiet():
                pipe = CsaBoundsPipeline(
                    data,
                    n_thresholds=est.n_thresholds,
                    link=est.link,
                    estimator=est.conditional_estimator,
                    bandwidth=est.bandwidth,
                    min_pairs=est.min_pairs,
                )
                csa_curve = pipe.curve(data)
                wc_pipe = WorstCaseBoundsPipeline(data, pipe.delta_grid)
                wc_curve = wc_pipe.curve(data)
            widths_csa.append(csa_curve.mean_width())
            widths_wc.append(wc_curve.mean_width())
            if "coverage" in mc.metrics:
                truth = oracle_dott(oracle, pipe.delta_grid)
                covered.append(
                    bool(
                        np.all(
                            (csa_curve.lower - mc.oracle_slack <= truth)
                            & (truth <= csa_curve.upper + mc.oracle_slack)
                        )
                    )
                )
            if "pretest" in mc.metrics and data.n_pre_periods >= 3:
                report = pretest_csa_rho(
                    data, BootConfig(n_boot=200, seed=rep_seed + 7)
                )
                rejected.append(report.p_value < 0.05)
        row = dict(zip(grid_keys, cell))
        row["repetitions"] = mc.repetitions
        row["mean_width_csa"] = float(np.mean(widths_csa)) if widths_csa else np.nan
        row["mean_width_worst_case"] = float(np.mean(widths_wc)) if widths_wc else np.nan
        if "coverage" in mc.metrics:
            row["oracle_coverage"] = float(np.mean(covered)) if covered else np.nan
        if "pretest" in mc.metrics:
            row["pretest_rejection_rate"] = (
                float(np.mean(rejected)) if rejected else np.nan
            )
        rows.append(row)

    columns = grid_keys + [
        "repetitions",
        "mean_width_csa",
        "mean_width_worst_case",
    ]
    if "coverage" in mc.metrics:
        columns.append("oracle_coverage")
    if "pretest" in mc.metrics:
        columns.append("pretest_rejection_rate")
    table = pd.DataFrame(rows, columns=columns)
    table.to_csv(os.path.join(out_dir, "montecarlo_summary.csv"), index=False)
    _write_json(
        os.path.join(out_dir, "run_manifest.json"),
        {
            "config_hash": cfg.config_hash,
            "seed": seed,
            "cells": len(cells),
            "repetitions": mc.repetitions,
            "versions": {"dtebounds": __version__, "numpy": np.__version__},
        },
    )
    return table


def _apply_overrides(spec, overrides, seed):
    """Copy a generator spec with grid overrides and a fresh seed."""
    from dataclasses import replace

    from .dgp import CopulaSpec

    kwargs = {"seed": seed}
    for key, value in overrides.items():
        if key == "v_copula_param":
            kwargs["v_copula"] = CopulaSpec(spec.v_copula.family, value)
        elif key == "n":
            kwargs["n"] = int(value)
        elif key == "effect_param":
            from .dgp import EffectSpec

            kwargs["effect"] = EffectSpec(spec.effect.kind, (value,) + spec.effect.params[1:])
        else:
            kwargs[key] = value
    return replace(spec, **kwargs)


def simulate_to_csv(cfg: RunConfig, out_dir, seed=None):
    """Generate a synthetic panel and export observed + oracle tables."""
    import os

    if cfg.source != "dgp":
        raise ConfigError("simulate needs a dgp data source", field="data.source")
    os.makedirs(out_dir, exist_ok=True)
    spec = cfg.dgp if seed is None else _apply_overrides(cfg.dgp, {}, seed)
    data, oracle = generate(spec)
    observed = {
        "unit": data.ids,
        "y_t": data.y_t,
        "y_tm1": data.y_tm1,
        "y_tm2": data.y_tm2,
        "treated": data.treated,
    }
    for j, name in enumerate(data.covariate_names):
        observed[name] = data.x[:, j]
    for k in range(data.y_pre.shape[1]):
        observed[f"pre_{k}"] = data.y_pre[:, k]
    pd.DataFrame(observed).to_csv(os.path.join(out_dir, "observed.csv"), index=False)
    oracle.to_frame().to_csv(os.path.join(out_dir, "oracle.csv"), index=False)
    _write_json(
        os.path.join(out_dir, "run_manifest.json"),
        {
            "config_hash": cfg.config_hash,
            "seed": spec.seed,
            "n": data.n,
            "versions": {"dtebounds": __version__, "numpy": np.__version__},
        },
    )
