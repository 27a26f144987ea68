"""Return/factor panels, CSV ingestion, rolling windows and synthetic markets."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from covlab.errors import AlignmentError, DataError

_DATE_RE = re.compile(r"^\s*(\d{4})[-/]?(\d{1,2})(?:[-/]\d{1,2})?\s*$")


def normalize_date(label: str) -> str:
    """Normalize a monthly date label to ``YYYY-MM``.

    Accepts ``2000-01``, ``2000/1``, ``200001`` and ``2000-01-31``.
    """
    m = _DATE_RE.match(str(label))
    if m is None:
        raise DataError(f"unparseable date label {label!r}")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise DataError(f"month out of range in date label {label!r}")
    return f"{year:04d}-{month:02d}"


def _check_dates(dates: Sequence[str]) -> None:
    for i in range(1, len(dates)):
        if dates[i] == dates[i - 1]:
            raise DataError(f"duplicate date {dates[i]} at row {i + 1}")
        if dates[i] < dates[i - 1]:
            raise DataError(
                f"dates not strictly increasing: {dates[i]} follows {dates[i - 1]} (row {i + 1})"
            )


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ReturnsPanel:
    """Dated ``T x p`` matrix of simple excess returns (decimals)."""

    dates: tuple
    assets: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(normalize_date(d) for d in self.dates))
        object.__setattr__(self, "assets", tuple(str(a) for a in self.assets))
        object.__setattr__(self, "values", _frozen(self.values))
        T, p = self.values.shape if self.values.ndim == 2 else (0, 0)
        if self.values.ndim != 2:
            raise DataError("returns values must be a 2-D matrix")
        if T != len(self.dates) or p != len(self.assets):
            raise DataError(
                f"shape {self.values.shape} does not match {len(self.dates)} dates x {len(self.assets)} assets"
            )
        if T < 2:
            raise DataError("a returns panel needs at least 2 dates")
        if len(set(self.assets)) != p:
            raise DataError("duplicate asset identifiers")
        if not np.all(np.isfinite(self.values)):
            raise DataError("returns panel contains non-finite values")
        _check_dates(self.dates)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def subset(self, dates: Sequence[str]) -> "ReturnsPanel":
        idx = [self.dates.index(d) for d in dates]
        return ReturnsPanel(tuple(dates), self.assets, self.values[idx])


@dataclass(frozen=True)
class FactorPanel:
    """Dated ``T x K`` matrix of observed factor values."""

    dates: tuple
    factors: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(normalize_date(d) for d in self.dates))
        object.__setattr__(self, "factors", tuple(str(f) for f in self.factors))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 2:
            raise DataError("factor values must be a 2-D matrix")
        T, K = self.values.shape
        if T != len(self.dates) or K != len(self.factors):
            raise DataError("factor matrix shape does not match labels")
        if K < 1:
            raise DataError("a factor panel needs at least one factor")
        if K >= T:
            raise DataError(f"need fewer factors than dates (K={K}, T={T})")
        if not np.all(np.isfinite(self.values)):
            raise DataError("factor panel contains non-finite values")
        _check_dates(self.dates)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]

    def subset(self, dates: Sequence[str]) -> "FactorPanel":
        idx = [self.dates.index(d) for d in dates]
        return FactorPanel(tuple(dates), self.factors, self.values[idx])


@dataclass(frozen=True)
class RiskFreeSeries:
    dates: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(normalize_date(d) for d in self.dates))
        object.__setattr__(self, "values", _frozen(self.values).reshape(-1))
        if len(self.dates) != self.values.shape[0]:
            raise DataError("risk-free series length does not match its dates")
        _check_dates(self.dates)

    def subset(self, dates: Sequence[str]) -> "RiskFreeSeries":
        idx = [self.dates.index(d) for d in dates]
        return RiskFreeSeries(tuple(dates), self.values[idx])


def _read_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise DataError(f"{path}: need a date column and at least one value column")
    columns = header[1:]
    dates, data = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
        try:
            dates.append(normalize_date(row[0]))
        except DataError as exc:
            raise DataError(f"{path}: row {i}: {exc}") from None
        vals = []
        for j, cell in enumerate(row[1:], start=1):
            cell = cell.strip()
            if cell == "" or cell.lower() in ("na", "nan"):
                raise DataError(f"{path}: missing value at (row {i}, col {j + 1} '{header[j]}')")
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric value {cell!r} at (row {i}, col {j + 1} '{header[j]}')"
                ) from None
        data.append(vals)
    try:
        _check_dates(dates)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
    return dates, columns, np.array(data, dtype=float)


def load_panel(path, kind: str = "returns"):
    """Load a CSV panel. ``kind`` is one of ``returns``, ``factors``, ``riskfree``.

    The first column holds ``YYYY-MM`` dates; the rest are decimal values.
    """
    dates, columns, values = _read_csv(path)
    if kind == "returns":
        return ReturnsPanel(tuple(dates), tuple(columns), values)
    if kind == "factors":
        return FactorPanel(tuple(dates), tuple(columns), values)
    if kind == "riskfree":
        if values.shape[1] != 1:
            raise DataError(f"{path}: risk-free file must have exactly two columns (date,rf)")
        return RiskFreeSeries(tuple(dates), values[:, 0])
    raise ValueError(f"unknown panel kind {kind!r}")


def write_matrix_csv(path, row_labels, col_labels, matrix, first="date") -> None:
    """Write a labelled matrix with ``repr``-exact floats (round-trips bitwise)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([first, *col_labels])
        for lab, row in zip(row_labels, np.asarray(matrix)):
            w.writerow([lab, *(repr(float(x)) for x in row)])


def align(*panels):
    """Restrict every panel to the dates they all share (in order)."""
    panels = [p for p in panels]
    present = [p for p in panels if p is not None]
    if not present:
        return panels
    common = set(present[0].dates)
    for p in present[1:]:
        common &= set(p.dates)
    if not common:
        raise AlignmentError("panels share no dates")
    dates = [d for d in present[0].dates if d in common]
    return [None if p is None else p.subset(dates) for p in panels]


def to_excess(returns: ReturnsPanel, riskfree: RiskFreeSeries) -> ReturnsPanel:
    """Subtract the per-period risk-free rate from every asset."""
    if tuple(returns.dates) != tuple(riskfree.dates):
        raise AlignmentError("returns and risk-free dates differ; call align() first")
    return ReturnsPanel(returns.dates, returns.assets, returns.values - riskfree.values[:, None])


@dataclass(frozen=True)
class WindowView:
    """Training block plus the single out-of-sample row that follows it."""

    train_start: int
    train_end: int  # exclusive
    test_index: int
    test_date: str
    train_returns: np.ndarray = field(repr=False)
    test_returns: np.ndarray = field(repr=False)
    train_factors: Optional[np.ndarray] = field(default=None, repr=False)


def rolling_windows(returns: ReturnsPanel, factors: Optional[FactorPanel] = None,
                    window: int = 180) -> list[WindowView]:
    """Cut ``T - window`` no-look-ahead windows; window ``i`` trains on rows
    ``[i, i+window)`` and tests on row ``i+window``."""
    if window < 2:
        raise DataError("window length must be at least 2")
    T = returns.T
    if T <= window:
        raise DataError(f"insufficient history: T={T} must exceed window length {window}")
    if factors is not None and tuple(factors.dates) != tuple(returns.dates):
        raise AlignmentError("factor and return dates differ; call align() first")
    Y = returns.values
    X = None if factors is None else factors.values
    views = []
    for i in range(T - window):
        end = i + window
        views.append(WindowView(
            train_start=i,
            train_end=end,
            test_index=end,
            test_date=returns.dates[end],
            train_returns=Y[i:end],
            test_returns=Y[end],
            train_factors=None if X is None else X[i:end],
        ))
    return views


# ---------------------------------------------------------------------------
# synthetic markets

ERROR_STRUCTURES = ("diagonal", "banded-precision", "sparse-cov")


@dataclass(frozen=True)
class SyntheticMarketSpec:
    p: int
    T: int
    K: int = 1
    factor_cov: Optional[np.ndarray] = None
    loading_scale: float = 1.0
    error_structure: str = "diagonal"
    error_scale: float = 1.0
    bandwidth: int = 1
    band_value: float = 0.4
    density: float = 0.05
    drift: float = 0.0
    seed: int = 0


def _month_labels(n: int, start_year: int = 2000) -> tuple:
    if start_year + n // 12 > 9999:
        start_year = 1  # very long simulated panels still fit four-digit years
    return tuple(f"{start_year + k // 12:04d}-{k % 12 + 1:02d}" for k in range(n))


def _error_cov(spec: SyntheticMarketSpec, rng: np.random.Generator) -> np.ndarray:
    p = spec.p
    s2 = spec.error_scale ** 2
    if spec.error_structure == "diagonal":
        return s2 * np.eye(p)
    if spec.error_structure == "banded-precision":
        omega = np.eye(p)
        for k in range(1, spec.bandwidth + 1):
            idx = np.arange(p - k)
            omega[idx, idx + k] = spec.band_value
            omega[idx + k, idx] = spec.band_value
        try:
            np.linalg.cholesky(omega)
        except np.linalg.LinAlgError:
            raise DataError("banded precision is not positive definite; lower band_value") from None
        return s2 * np.linalg.inv(omega)
    if spec.error_structure == "sparse-cov":
        iu = np.triu_indices(p, 1)
        keep = rng.random(iu[0].size) < spec.density
        vals = rng.uniform(0.1, 0.3, iu[0].size) * rng.choice([-1.0, 1.0], iu[0].size)
        cov = np.eye(p)
        cov[iu[0][keep], iu[1][keep]] = vals[keep]
        cov[iu[1][keep], iu[0][keep]] = vals[keep]
        return s2 * cov
    raise DataError(f"unknown error structure {spec.error_structure!r}; expected one of {ERROR_STRUCTURES}")


def generate_synthetic(spec: SyntheticMarketSpec):
    """Draw returns from ``y_t = B f_t + u_t`` with Gaussian factors and errors.

    Returns ``(ReturnsPanel, FactorPanel, true_cov, true_precision)``; the
    precision is a direct dense inverse of ``B Sigma_f B' + Sigma_u``.
    """
    if spec.p < 2 or spec.T < 2 or spec.K < 1:
        raise DataError("synthetic market needs p >= 2, T >= 2, K >= 1")
    rng = np.random.default_rng(spec.seed)
    K, p, T = spec.K, spec.p, spec.T
    sigma_f = np.eye(K) if spec.factor_cov is None else np.asarray(spec.factor_cov, dtype=float)
    if sigma_f.shape != (K, K):
        raise DataError(f"factor_cov must be {K}x{K}")
    try:
        chol_f = np.linalg.cholesky(sigma_f)
    except np.linalg.LinAlgError:
        raise DataError("factor covariance is not positive definite") from None
    B = spec.loading_scale * rng.standard_normal((p, K))
    sigma_u = _error_cov(spec, rng)
    true_cov = B @ sigma_f @ B.T + sigma_u
    true_cov = 0.5 * (true_cov + true_cov.T)
    try:
        chol_u = np.linalg.cholesky(sigma_u)
        np.linalg.cholesky(true_cov)
    except np.linalg.LinAlgError:
        raise DataError("implied covariance is not positive definite") from None
    true_precision = np.linalg.inv(true_cov)
    true_precision = 0.5 * (true_precision + true_precision.T)

    F = rng.standard_normal((T, K)) @ chol_f.T
    U = rng.standard_normal((T, p)) @ chol_u.T
    Y = F @ B.T + U + spec.drift
    dates = _month_labels(T)
    returns = ReturnsPanel(dates, tuple(f"A{j + 1:04d}" for j in range(p)), Y)
    factors = FactorPanel(dates, tuple(f"F{k + 1}" for k in range(K)), F)
    return returns, factors, true_cov, true_precision
