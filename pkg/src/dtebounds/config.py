"""Configuration parsing for the batch front end.

A single YAML file drives a run: data source (CSV with a column map, or
a synthetic generator spec), estimation settings, bootstrap settings,
pre-test toggle, and (for the montecarlo subcommand) a cell grid and
repetition count. Validation raises :class:`ConfigError` with the
offending field path.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .dgp import CopulaSpec, DgpSpec, EffectSpec, EtaSpec, FactorSpec
from .errors import ConfigError
from .panel import ColumnMap


@dataclass(frozen=True)
class LongFormat:
    unit: str
    period: str
    outcome: str
    treated: str
    periods: tuple  # oldest first; last entry is the treatment period
    covariates: tuple = ()


@dataclass(frozen=True)
class CsvSource:
    path: str
    schema: ColumnMap = None
    long: LongFormat = None


@dataclass(frozen=True)
class EstimationSettings:
    use_covariates: bool = False
    conditional_estimator: str = "distribution_regression"
    link: str = "logit"
    n_thresholds: int = 99
    n_tau_qr: int = 99
    delta_points: int = 201
    tau_start: float = 0.05
    tau_stop: float = 0.95
    tau_step: float = 0.05
    min_treated: int = 30
    min_pairs: int = 30
    bandwidth: float = 0.10

    def tau_grid(self):
        import numpy as np

        count = int(round((self.tau_stop - self.tau_start) / self.tau_step)) + 1
        return np.round(self.tau_start + self.tau_step * np.arange(count), 10)


@dataclass(frozen=True)
class BootstrapSettings:
    enabled: bool = True
    n_boot: int = 999
    epsilon: object = "n^-1/3"
    alpha: float = 0.05
    targets: tuple = ("csa", "worst_case")
    sensitivity: bool = False


@dataclass(frozen=True)
class MonteCarloSettings:
    repetitions: int = 20
    metrics: tuple = ("width", "coverage", "pretest")
    grid: dict = field(default_factory=dict)
    oracle_slack: float = 0.02


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    source: str = "dgp"
    csv: CsvSource = None
    dgp: DgpSpec = None
    estimation: EstimationSettings = field(default_factory=EstimationSettings)
    bootstrap: BootstrapSettings = field(default_factory=BootstrapSettings)
    pretest: str = "auto"  # auto | on | off
    montecarlo: MonteCarloSettings = None
    config_hash: str = ""


def _require(mapping, key, where):
    if key not in mapping:
        raise ConfigError("missing required key", field=f"{where}.{key}")
    return mapping[key]


def _parse_dgp(raw, where="data.dgp") -> DgpSpec:
    if not isinstance(raw, dict):
        raise ConfigError("expected a mapping", field=where)
    known = {
        "model", "n", "p_treated", "theta", "eta", "v_copula", "v_sd", "h_maps",
        "factor", "effect", "x_coef", "extra_pre_periods", "selection",
        "selection_slope", "seed",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", field=where)
    kwargs = {}
    for key in ("model", "n", "p_treated", "v_sd", "x_coef",
                "extra_pre_periods", "selection", "selection_slope", "seed"):
        if key in raw:
            kwargs[key] = raw[key]
    if "theta" in raw:
        kwargs["theta"] = tuple(raw["theta"])
    if "eta" in raw:
        kwargs["eta"] = EtaSpec(**raw["eta"])
    if "v_copula" in raw:
        kwargs["v_copula"] = CopulaSpec(
            family=raw["v_copula"].get("family", "gaussian"),
            param=raw["v_copula"].get("param", 0.5),
        )
    if "h_maps" in raw:
        kwargs["h_maps"] = tuple(tuple(h) for h in raw["h_maps"])
    if "factor" in raw:
        kwargs["factor"] = FactorSpec(
            loading_sd=raw["factor"].get("loading_sd", 1.0),
            path=tuple(raw["factor"].get("path", (1.0, -1.0, 1.0))),
        )
    if "effect" in raw:
        kwargs["effect"] = EffectSpec(
            kind=raw["effect"].get("kind", "constant"),
            params=tuple(raw["effect"].get("params", (1.0,))),
        )
    try:
        spec = DgpSpec(**kwargs)
        spec.validate()
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc), field=where) from exc
    return spec


def _parse_csv(raw) -> CsvSource:
    path = _require(raw, "path", "data.csv")
    schema = None
    long = None
    if "schema" in raw:
        s = raw["schema"]
        schema = ColumnMap(
            id=_require(s, "id", "data.csv.schema"),
            y_t=_require(s, "y_t", "data.csv.schema"),
            y_tm1=_require(s, "y_tm1", "data.csv.schema"),
            y_tm2=_require(s, "y_tm2", "data.csv.schema"),
            treated=_require(s, "treated", "data.csv.schema"),
            covariates=tuple(s.get("covariates", ())),
            pre_periods=tuple(s.get("pre_periods", ())),
        )
    if "long" in raw:
        lraw = raw["long"]
        long = LongFormat(
            unit=_require(lraw, "unit", "data.csv.long"),
            period=_require(lraw, "period", "data.csv.long"),
            outcome=_require(lraw, "outcome", "data.csv.long"),
            treated=_require(lraw, "treated", "data.csv.long"),
            periods=tuple(_require(lraw, "periods", "data.csv.long")),
            covariates=tuple(lraw.get("covariates", ())),
        )
    if schema is None and long is None:
        raise ConfigError("needs either schema or long", field="data.csv")
    return CsvSource(path=path, schema=schema, long=long)


def _canonical_hash(raw):
    return hashlib.sha256(
        json.dumps(raw, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()[:16]


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    config_hash = _canonical_hash(raw)
    data = _require(raw, "data", "")
    source = _require(data, "source", "data")
    if source not in ("csv", "dgp"):
        raise ConfigError(f"source must be csv or dgp, got {source!r}", field="data.source")
    csv = _parse_csv(data["csv"]) if source == "csv" else None
    dgp = _parse_dgp(data["dgp"]) if source == "dgp" else None
    if source == "csv" and csv is None:
        raise ConfigError("csv source needs a data.csv section", field="data.csv")

    est_raw = dict(raw.get("estimation", {}) or {})
    tau = est_raw.pop("tau_grid", None)
    if tau:
        est_raw["tau_start"] = tau.get("start", 0.05)
        est_raw["tau_stop"] = tau.get("stop", 0.95)
        est_raw["tau_step"] = tau.get("step", 0.05)
    try:
        estimation = EstimationSettings(**est_raw)
    except TypeError as exc:
        raise ConfigError(str(exc), field="estimation") from exc
    if estimation.conditional_estimator not in ("distribution_regression", "empirical"):
        raise ConfigError(
            f"unknown estimator {estimation.conditional_estimator!r}",
            field="estimation.conditional_estimator",
        )
    if estimation.link not in ("logit", "probit"):
        raise ConfigError(f"unknown link {estimation.link!r}", field="estimation.link")

    boot_raw = dict(raw.get("bootstrap", {}) or {})
    if "targets" in boot_raw:
        boot_raw["targets"] = tuple(boot_raw["targets"])
    try:
        bootstrap = BootstrapSettings(**boot_raw)
    except TypeError as exc:
        raise ConfigError(str(exc), field="bootstrap") from exc
    for target in bootstrap.targets:
        if target not in ("csa", "worst_case"):
            raise ConfigError(f"unknown target {target!r}", field="bootstrap.targets")

    pretest = raw.get("pretest", {})
    if isinstance(pretest, dict):
        pretest = pretest.get("enabled", "auto")
    pretest = {True: "on", False: "off"}.get(pretest, pretest)
    if pretest not in ("auto", "on", "off"):
        raise ConfigError("pretest must be auto/on/off", field="pretest")

    mc = None
    if "montecarlo" in raw and raw["montecarlo"]:
        mraw = dict(raw["montecarlo"])
        mc = MonteCarloSettings(
            repetitions=mraw.get("repetitions", 20),
            metrics=tuple(mraw.get("metrics", ("width", "coverage", "pretest"))),
            grid={k: list(v) for k, v in (mraw.get("grid", {}) or {}).items()},
            oracle_slack=mraw.get("oracle_slack", 0.02),
        )
        for metric in mc.metrics:
            if metric not in ("width", "coverage", "pretest"):
                raise ConfigError(f"unknown metric {metric!r}", field="montecarlo.metrics")

    return RunConfig(
        seed=int(raw.get("seed", 0)),
        output_dir=str(raw.get("output_dir", "out")),
        source=source,
        csv=csv,
        dgp=dgp,
        estimation=estimation,
        bootstrap=bootstrap,
        pretest=pretest,
        montecarlo=mc,
        config_hash=config_hash,
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse config: {exc}") from exc
    return parse_config(raw)
