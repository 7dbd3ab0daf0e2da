"""Bounds on distributional treatment-effect parameters from short panels.

The package estimates bounds on the distribution (DoTT) and quantiles
(QoTT) of individual-level treatment effects for the treated group
using three periods of panel data. The identifying restriction is that
the copula of untreated outcomes across adjacent periods is stable over
time; the counterfactual marginal comes from Change in Changes, and
inference uses a numerical (directional-derivative) bootstrap.
"""

__version__ = "0.1.0"

from . import errors
from .distributions import (
    CopulaGrid,
    QuantileFn,
    StepCdf,
    ecdf,
    empirical_copula,
    kendall_tau,
    quantile,
    spearman_rho,
)
from .panel import ColumnMap, PanelDataset, UnitRecord, load_panel, split_by_group

__all__ = [
    "errors",
    "StepCdf",
    "QuantileFn",
    "CopulaGrid",
    "ecdf",
    "quantile",
    "spearman_rho",
    "kendall_tau",
    "empirical_copula",
    "ColumnMap",
    "UnitRecord",
    "PanelDataset",
    "load_panel",
    "split_by_group",
    "__version__",
]
