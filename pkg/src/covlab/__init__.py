"""High-dimensional precision-matrix estimators and portfolio backtesting."""

from covlab.errors import (
    AlignmentError,
    BacktestError,
    CovlabError,
    DataError,
    EstimationError,
    PortfolioError,
)

__version__ = "0.1.0"

METHODS = ("nw", "rnw", "poet", "oft", "lslw", "nls", "sfnl")
OBJECTIVES = ("gmv", "msr", "mv")

__all__ = [
    "AlignmentError",
    "BacktestError",
    "CovlabError",
    "DataError",
    "EstimationError",
    "PortfolioError",
    "METHODS",
    "OBJECTIVES",
]
