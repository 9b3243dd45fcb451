"""covcast: covariance forecasting via a factor stochastic-volatility pipeline,
GARCH-family competitors, simulation designs, evaluation metrics and
portfolio backtests.
"""

from . import baselines, data_io, evaluate, factor_model, garch, msv, report, simulate, sparse_var
from .data_io import (
    CovPath,
    ReturnsPanel,
    SampleSplit,
    load_artifact,
    load_returns_csv,
    persist_artifact,
    split_sample,
)
from .errors import ConfigError, CovcastError, DataError, NumericsError
from .factor_model import (
    FactorFit,
    FactorSeries,
    factor_log_likelihood,
    fit_factor_model_em,
    gls_factor_scores,
    rotate_ic3_to_ic2,
)
from .msv import FmsvModel, fit_fmsv, forecast_covariance

__version__ = "0.1.0"

__all__ = [
    "CovPath",
    "ReturnsPanel",
    "SampleSplit",
    "CovcastError",
    "ConfigError",
    "DataError",
    "NumericsError",
    "FactorFit",
    "FactorSeries",
    "FmsvModel",
    "baselines",
    "data_io",
    "evaluate",
    "factor_model",
    "fit_factor_model_em",
    "fit_fmsv",
    "factor_log_likelihood",
    "forecast_covariance",
    "garch",
    "gls_factor_scores",
    "load_artifact",
    "load_returns_csv",
    "msv",
    "persist_artifact",
    "report",
    "rotate_ic3_to_ic2",
    "simulate",
    "sparse_var",
    "split_sample",
    "__version__",
]
