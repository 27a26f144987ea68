"""Exception hierarchy."""


class CovlabError(Exception):
    """Base class for every error raised by covlab."""


class DataError(CovlabError):
    """Malformed or inconsistent input panel."""


class AlignmentError(DataError):
    """Two panels whose dates do not line up."""


class EstimationError(CovlabError):
    """An estimator could not produce a usable matrix."""


class PortfolioError(CovlabError):
    """A closed-form weight formula hit a degenerate normalizer."""


class BacktestError(CovlabError):
    """Accounting failure inside a backtest (for example a wiped-out book)."""
