"""Numerical-bootstrap confidence intervals and the dependence-stability
pre-test.

The bound maps are directionally but not fully differentiable, so the
standard bootstrap is inconsistent for them. Confidence intervals come
from the numerical delta method: resample units, form perturbed
first-step inputs ``F + eps*sqrt(n)*(F* - F)``, push them through the
bound map, and scale the difference by ``1/eps``. The step ``eps`` must
shrink with n while ``eps*sqrt(n)`` grows; accepted rules are ``n**-a``
with a in (0, 0.5).
"""
from __future__ import annotations

import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributions import spearman_rho
from .errors import (
    ConfigError,
    DegenerateReplicate,
    InsufficientPeriods,
    PipelineFailure,
)
from .panel import PanelDataset

_RULE_RE = re.compile(r"^n\^(-\d*\.?\d+)$|^n\*\*(-\d*\.?\d+)$")


def parse_epsilon_rule(epsilon):
    """Return a function n -> eps_n.

    ``epsilon`` is either a positive float (used as-is) or a rule string
    like ``"n^-1/3"`` / ``"n^-0.25"`` with exponent a in (0, 0.5).
    """
    if isinstance(epsilon, (int, float)):
        if epsilon <= 0:
            raise ConfigError("epsilon must be positive", field="epsilon")
        return lambda n: float(epsilon)
    text = str(epsilon).strip().replace(" ", "")
    frac = re.match(r"^n\^-(\d+)/(\d+)$|^n\*\*-(\d+)/(\d+)$", text)
    if frac:
        groups = [g for g in frac.groups() if g is not None]
        a = float(groups[0]) / float(groups[1])
    else:
        m = _RULE_RE.match(text)
        if not m:
            raise ConfigError(
                f"epsilon rule {epsilon!r} not understood; use a float or 'n^-a'",
                field="epsilon",
            )
        a = -float(next(g for g in m.groups() if g is not None))
    if not 0 < a < 0.5:
        raise ConfigError(
            f"epsilon exponent {a} must lie in (0, 0.5) so that eps -> 0 "
            "and eps*sqrt(n) -> infinity",
            field="epsilon",
        )
    return lambda n: float(n) ** (-a)


@dataclass(frozen=True)
class BootConfig:
    n_boot: int = 999
    epsilon: object = "n^-1/3"
    seed: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)", field="alpha")
        parse_epsilon_rule(self.epsilon)

    def epsilon_value(self, n):
        return parse_epsilon_rule(self.epsilon)(n)


@dataclass(frozen=True, eq=False)
class CiBand:
    """One-sided confidence intervals for a pair of bound curves.

    ``lower_ci`` extends below the lower-bound estimate and ``upper_ci``
    above the upper-bound estimate, each at level 1 - alpha.
    """

    grid: np.ndarray
    lower_est: np.ndarray
    upper_est: np.ndarray
    lower_ci: np.ndarray
    upper_ci: np.ndarray
    alpha: float


def spawn_rngs(seed, count):
    """Deterministic per-replicate generators: children of the master seed
    by index (results merge by index, independent of execution order)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def resample_units(data: PanelDataset, rng, max_redraws=100):
    """Unit-level bootstrap resample preserving n and the within-unit joint.

    Resamples with no treated or no control units are redrawn; the redraw
    count is reported through a :class:`DegenerateReplicate` warning.
    """
    redraws = 0
    while True:
        idx = rng.integers(0, data.n, size=data.n)
        sub = data.subset(idx)
        if 0 < sub.n_treated < sub.n:
            if redraws:
                warnings.warn(
                    f"redrew {redraws} degenerate resample(s)",
                    DegenerateReplicate,
                    stacklevel=2,
                )
            return sub
        redraws += 1
        if redraws > max_redraws:
            raise PipelineFailure("resampling", "no nondegenerate resample found")


def _perturb(base, replicate, scale):
    return tuple(b + scale * (r - b) for b, r in zip(base, replicate))


def numerical_bootstrap(data: PanelDataset, pipeline, config: BootConfig, threads=1):
    """Directional-derivative bootstrap for the bound curves of ``pipeline``.

    ``pipeline`` must provide ``fit(data) -> tuple of ndarrays`` (the
    first-step objects, evaluated on grids frozen at construction) and
    ``phi(fit) -> ndarray`` (concatenated [lower curve, upper curve]),
    plus a ``grid`` attribute. Per-replicate derivative draws are

        (phi(F + eps*sqrt(n)*(F* - F)) - phi(F)) / eps

    and the one-sided intervals are ``lower - q_{1-alpha}/sqrt(n)`` and
    ``upper - q_{alpha}/sqrt(n)`` with quantiles taken per grid point.
    """
    if config.n_boot < 200:
        raise ConfigError("n_boot must be at least 200", field="n_boot")
    n = data.n
    eps = config.epsilon_value(n)
    scale = eps * np.sqrt(n)
    base_fit = pipeline.fit(data)
    point = np.asarray(pipeline.phi(base_fit), dtype=float)
    rngs = spawn_rngs(config.seed, config.n_boot)

    def one_replicate(b):
        try:
            star = pipeline.fit(resample_units(data, rngs[b]))
            perturbed = _perturb(base_fit, star, scale)
            return (np.asarray(pipeline.phi(perturbed), dtype=float) - point) / eps
        except Exception as exc:  # noqa: BLE001 - reported with replicate id
            raise PipelineFailure(b, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            draws = np.asarray(list(pool.map(one_replicate, range(config.n_boot))))
    else:
        draws = np.asarray([one_replicate(b) for b in range(config.n_boot)])

    g = point.size // 2
    lower_est, upper_est = point[:g], point[g:]
    crit_lower = np.quantile(draws[:, :g], 1.0 - config.alpha, axis=0)
    crit_upper = np.quantile(draws[:, g:], config.alpha, axis=0)
    return CiBand(
        grid=np.asarray(pipeline.grid, dtype=float),
        lower_est=lower_est,
        upper_est=upper_est,
        lower_ci=lower_est - crit_lower / np.sqrt(n),
        upper_ci=upper_est - crit_upper / np.sqrt(n),
        alpha=config.alpha,
    )


def epsilon_sensitivity(
    data: PanelDataset,
    pipeline,
    config: BootConfig,
    exponents=(0.25, 1.0 / 3.0, 0.4),
    spread_flag=0.5,
    threads=1,
):
    """Interval widths across step-size rules, reported side by side.

    Widths should vary continuously in the exponent; the report is
    flagged when the relative spread of mean widths exceeds
    ``spread_flag``.
    """
    bands = {}
    widths = {}
    for a in exponents:
        cfg = BootConfig(
            n_boot=config.n_boot, epsilon=f"n^-{a}", seed=config.seed, alpha=config.alpha
        )
        band = numerical_bootstrap(data, pipeline, cfg, threads=threads)
        bands[a] = band
        widths[a] = float(
            np.mean(np.abs(band.lower_est - band.lower_ci))
            + np.mean(np.abs(band.upper_ci - band.upper_est))
        )
    vals = np.array(list(widths.values()))
    spread = float((vals.max() - vals.min()) / max(vals.mean(), 1e-12))
    return {
        "bands": bands,
        "mean_widths": widths,
        "relative_spread": spread,
        "flagged": spread > spread_flag,
    }


# ---------------------------------------------------------------------------
# dependence-stability pre-test
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PretestReport:
    statistic: float
    p_value: float
    rhos: np.ndarray
    rho_ses: np.ndarray
    pair_labels: tuple
    n_units: int
    n_boot: int


def _adjacent_rhos(matrix):
    return np.array(
        [spearman_rho(matrix[:, k], matrix[:, k + 1]) for k in range(matrix.shape[1] - 1)]
    )


def pretest_csa_rho(data: PanelDataset, config: BootConfig) -> PretestReport:
    """Test whether the rank correlation of adjacent pre-treatment outcomes
    is constant over time for the treated group.

    Wald-type statistic on differences of consecutive rank correlations;
    the null distribution comes from recentred unit-level bootstrap draws.
    Point-identifying stability cannot be tested directly; this checks
    its observable pre-period implication.
    """
    if data.n_pre_periods < 3:
        raise InsufficientPeriods(
            f"need at least 3 pre-treatment periods, have {data.n_pre_periods}"
        )
    treated_mask = data.treated.astype(bool)
    pre = data.pre_outcome_matrix()[treated_mask]
    n_units = pre.shape[0]
    rhos = _adjacent_rhos(pre)
    d = np.diff(rhos)

    rngs = spawn_rngs(config.seed, config.n_boot)
    boot_rhos = np.empty((config.n_boot, rhos.size))
    for b in range(config.n_boot):
        idx = rngs[b].integers(0, n_units, size=n_units)
        boot_rhos[b] = _adjacent_rhos(pre[idx])
    boot_d = np.diff(boot_rhos, axis=1)
    sigma = np.cov(boot_d.T) if d.size > 1 else np.array([[np.var(boot_d[:, 0], ddof=1)]])
    sigma = np.atleast_2d(sigma)
    sigma_inv = np.linalg.pinv(sigma)
    stat = float(d @ sigma_inv @ d)
    centered = boot_d - d[None, :]
    null_draws = np.einsum("bi,ij,bj->b", centered, sigma_inv, centered)
    p_value = float((1 + np.sum(null_draws >= stat)) / (config.n_boot + 1))
    labels = tuple(f"pair_{k}" for k in range(rhos.size))
    return PretestReport(
        statistic=stat,
        p_value=p_value,
        rhos=rhos,
        rho_ses=boot_rhos.std(axis=0, ddof=1),
        pair_labels=labels,
        n_units=n_units,
        n_boot=config.n_boot,
    )
