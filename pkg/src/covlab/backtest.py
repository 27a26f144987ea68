"""Rolling no-look-ahead backtest with proportional transaction costs."""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from covlab import METHODS
from covlab.data import FactorPanel, ReturnsPanel, rolling_windows
from covlab.errors import AlignmentError, BacktestError, CovlabError
from covlab.factor import oft_precision, poet_precision
from covlab.linalg import CovarianceEstimate
from covlab.nodewise import nodewise_precision, residual_nodewise_precision
from covlab.portfolio import DEFAULT_RHO1, DEFAULT_SIGMA, OBJECTIVES, weights_for
from covlab.shrinkage import linear_shrinkage, nls_shrinkage, sfnl_shrinkage

FACTOR_METHODS = frozenset({"rnw", "oft"})
_ESTIMATOR_ERRORS = (CovlabError, ValueError, ArithmeticError, np.linalg.LinAlgError)


def _first(result):
    return result[0] if isinstance(result, tuple) else result


# Each estimator takes demeaned training returns (T x p) and demeaned
# factors (K x T, or None) plus per-method keyword overrides.
ESTIMATORS: dict[str, Callable] = {
    "nw": lambda Y, X, **kw: nodewise_precision(Y, **kw),
    "rnw": lambda Y, X, **kw: residual_nodewise_precision(Y, X, **kw),
    "poet": lambda Y, X, **kw: poet_precision(Y, **kw),
    "oft": lambda Y, X, **kw: oft_precision(Y, X, **kw),
    "lslw": lambda Y, X, **kw: _first(linear_shrinkage(Y, **kw)),
    "nls": lambda Y, X, **kw: _first(nls_shrinkage(Y, **kw)),
    "sfnl": lambda Y, X, **kw: _first(sfnl_shrinkage(Y, **kw)),
}


@dataclass
class BacktestConfig:
    window: int = 180
    cost: float = 0.005
    methods: tuple = METHODS
    objectives: tuple = OBJECTIVES
    rho1: float = DEFAULT_RHO1
    sigma: float = DEFAULT_SIGMA
    free_initial: bool = False  # True: the first allocation costs nothing
    method_params: dict = field(default_factory=dict)
    threads: Optional[int] = None

    def __post_init__(self):
        if not 0 <= self.cost < 1:
            raise ValueError(f"cost must lie in [0, 1), got {self.cost}")
        if self.window < 2:
            raise ValueError("window length must be at least 2")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        for obj in self.objectives:
            if obj not in OBJECTIVES:
                raise ValueError(f"unknown objective {obj!r}; expected one of {', '.join(OBJECTIVES)}")
        unknown = set(self.method_params) - set(METHODS)
        if unknown:
            raise ValueError(f"parameters given for unknown methods: {sorted(unknown)}")


@dataclass
class WindowRecord:
    date: str
    gross: float
    net: float
    turnover: float
    digest: str


@dataclass
class BacktestReport:
    method: str
    objective: str
    records: list = field(default_factory=list)
    error: Optional[str] = None
    failed_window: Optional[int] = None
    benchmark: bool = False

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def net_returns(self) -> np.ndarray:
        return np.array([r.net for r in self.records])

    @property
    def mean_net(self) -> float:
        return float(np.mean(self.net_returns)) if self.records else float("nan")

    @property
    def variance_net(self) -> float:
        if len(self.records) < 2:
            return float("nan")
        net = self.net_returns
        if np.all(net == net[0]):
            return 0.0  # np.var would leave rounding residue here
        return float(np.var(net, ddof=1))

    @property
    def sharpe(self) -> float:
        m, v = self.mean_net, self.variance_net
        if v == 0:
            # constant net return: report the sign as an infinite ratio
            return float(np.sign(m) * np.inf) if m != 0 else float("nan")
        return float(m / np.sqrt(v))

    @property
    def mean_turnover(self) -> float:
        return float(np.mean([r.turnover for r in self.records])) if self.records else float("nan")

    def metric(self, name: str) -> float:
        return {
            "SR": self.sharpe,
            "Return": self.mean_net,
            "Variance": self.variance_net,
            "Turnover": self.mean_turnover,
        }[name]


def adjusted_weights(w_prev, asset_returns) -> np.ndarray:
    """Weights after one period of drift: ``w (1 + y) / (1 + w'y)``."""
    w = np.asarray(w_prev, dtype=float)
    y = np.asarray(asset_returns, dtype=float)
    growth = 1.0 + float(w @ y)
    if abs(growth) < 1e-15:
        raise BacktestError("wipeout: portfolio return of -100% leaves nothing to rebalance")
    return w * (1.0 + y) / growth


def net_return(w_new, w_drifted, asset_returns, c: float) -> tuple[float, float]:
    """Net-of-cost return and turnover for one rebalance.

    ``gross = w_new'y``; ``net = gross - c (1 + gross) sum|w_new - w_drifted|``.
    """
    w_new = np.asarray(w_new, dtype=float)
    w_drifted = np.asarray(w_drifted, dtype=float)
    y = np.asarray(asset_returns, dtype=float)
    if not w_new.shape == w_drifted.shape == y.shape:
        raise ValueError("weights and returns must have the same length")
    gross = float(w_new @ y)
    turnover = float(np.abs(w_new - w_drifted).sum())
    return gross - c * (1.0 + gross) * turnover, turnover


def weights_digest(w) -> str:
    return hashlib.sha256(np.ascontiguousarray(w, dtype=float).tobytes()).hexdigest()[:16]


def _thread_cap(config: BacktestConfig) -> int:
    if config.threads is not None:
        return max(1, int(config.threads))
    env = os.environ.get("COVLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"COVLAB_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _precision_of(result) -> np.ndarray:
    if isinstance(result, CovarianceEstimate):
        return result.precision
    return np.asarray(result, dtype=float)


def _run_method(method, estimator, params, windows, config) -> list[BacktestReport]:
    reports = {obj: BacktestReport(method, obj) for obj in config.objectives}
    prev = {obj: None for obj in config.objectives}  # (weights, test returns)
    for i, win in enumerate(windows):
        live = [obj for obj in config.objectives if not reports[obj].failed]
        if not live:
            break
        Y = np.array(win.train_returns, dtype=float)
        mu_hat = Y.mean(axis=0)
        Yc = Y - mu_hat
        Xc = None
        if win.train_factors is not None:
            X = np.array(win.train_factors, dtype=float)
            Xc = (X - X.mean(axis=0)).T
        try:
            theta = _precision_of(estimator(Yc, Xc, **params))
            if theta.shape != (Y.shape[1], Y.shape[1]) or not np.all(np.isfinite(theta)):
                raise CovlabError("estimator returned a malformed precision matrix")
        except _ESTIMATOR_ERRORS as exc:
            for obj in live:
                reports[obj].error = f"{method}: {exc}"
                reports[obj].failed_window = i
            break
        y = np.asarray(win.test_returns, dtype=float)
        for obj in live:
            rep = reports[obj]
            try:
                w_new = weights_for(obj, theta, mu_hat, config.rho1, config.sigma, method).weights
                if prev[obj] is None:
                    w_drift = w_new if config.free_initial else np.zeros_like(w_new)
                else:
                    w_drift = adjusted_weights(*prev[obj])
                net, turnover = net_return(w_new, w_drift, y, config.cost)
            except CovlabError as exc:
                rep.error = f"{method}/{obj}: {exc}"
                rep.failed_window = i
                continue
            rep.records.append(WindowRecord(win.test_date, float(w_new @ y), net, turnover, weights_digest(w_new)))
            prev[obj] = (w_new, y)
    return [reports[obj] for obj in config.objectives]


def _benchmark_reports(benchmark: ReturnsPanel, windows, config) -> list[BacktestReport]:
    if benchmark.p != 1:
        raise ValueError("benchmark must be a single-column panel")
    lookup = dict(zip(benchmark.dates, benchmark.values[:, 0]))
    missing = [w.test_date for w in windows if w.test_date not in lookup]
    if missing:
        raise AlignmentError(f"benchmark has no return for {missing[0]}")
    label = benchmark.assets[0]
    out = []
    for obj in config.objectives:
        rep = BacktestReport(label, obj, benchmark=True)
        for w in windows:
            r = float(lookup[w.test_date])
            # a one-asset book never needs rebalancing
            rep.records.append(WindowRecord(w.test_date, r, r, 0.0, ""))
        out.append(rep)
    return out


def run_backtest(panel: ReturnsPanel, factors: Optional[FactorPanel] = None,
                 config: Optional[BacktestConfig] = None,
                 benchmark: Optional[ReturnsPanel] = None,
                 estimators: Optional[dict] = None) -> list[BacktestReport]:
    """One report per method x objective, in ``config`` order, then the
    benchmark rows if a benchmark is supplied.

    ``estimators`` maps method tags to callables ``f(Y, X, **params)`` and
    overrides the built-in registry (handy for stubs).
    """
    config = config or BacktestConfig()
    registry = dict(ESTIMATORS)
    if estimators:
        registry.update(estimators)
    for m in config.methods:
        if m not in registry:
            raise ValueError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
        if m in FACTOR_METHODS and factors is None and not (estimators and m in estimators):
            raise ValueError(f"method {m!r} needs a factor panel")
    windows = rolling_windows(panel, factors, config.window)

    def job(m):
        return _run_method(m, registry[m], dict(config.method_params.get(m, {})), windows, config)

    n_workers = min(_thread_cap(config), len(config.methods)) or 1
    if n_workers == 1:
        results = [job(m) for m in config.methods]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(job, config.methods))
    reports = [r for group in results for r in group]
    if benchmark is not None:
        reports.extend(_benchmark_reports(benchmark, windows, config))
    return reports
