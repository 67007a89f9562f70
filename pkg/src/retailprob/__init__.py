"""Hierarchical probabilistic forecasting for intermittent retail sales."""

__version__ = "0.1.0"

from .classify import DemandClass, DemandProfile, demand_stats, partition_by_class
from .evaluation import mse, spl, spl_report, wspl
from .features import ForecastPath, LagMatrix, NumericalError, PadPolicy, embed, recursive_forecast
from .linear import NormalAccumulator, fit_lasso, fit_ols, solve_ols
from .series import DataError, Dataset, HierarchyMap, SalesSeries, build_aggregates, make_dataset
from .topdown import (
    M5_LEVELS,
    RETAIL_LEVELS,
    DistributionParams,
    ProportionMap,
    compute_proportions,
    disaggregate,
    estimate_params,
    in_sample_quantiles,
    quantiles,
)

__all__ = [
    "DataError",
    "Dataset",
    "DemandClass",
    "DemandProfile",
    "DistributionParams",
    "ForecastPath",
    "HierarchyMap",
    "LagMatrix",
    "M5_LEVELS",
    "NormalAccumulator",
    "NumericalError",
    "PadPolicy",
    "ProportionMap",
    "RETAIL_LEVELS",
    "SalesSeries",
    "build_aggregates",
    "compute_proportions",
    "demand_stats",
    "disaggregate",
    "embed",
    "estimate_params",
    "fit_lasso",
    "fit_ols",
    "in_sample_quantiles",
    "make_dataset",
    "mse",
    "partition_by_class",
    "quantiles",
    "recursive_forecast",
    "solve_ols",
    "spl",
    "spl_report",
    "wspl",
]
