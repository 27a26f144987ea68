"""Command-line front end: ``covlab estimate | backtest | simulate``."""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from covlab import METHODS, OBJECTIVES, __version__
from covlab.backtest import ESTIMATORS, FACTOR_METHODS, BacktestConfig, run_backtest
from covlab.data import (
    ERROR_STRUCTURES,
    SyntheticMarketSpec,
    align,
    generate_synthetic,
    load_panel,
    to_excess,
    write_matrix_csv,
)
from covlab.errors import CovlabError, DataError
from covlab.report import render_tables, write_tables

METHOD_HELP = {
    "nw": "nodewise regression",
    "rnw": "residual-based nodewise regression (needs factors)",
    "poet": "POET, latent factors plus thresholding",
    "oft": "observed-factor thresholded covariance (needs factors)",
    "lslw": "linear shrinkage",
    "nls": "nonlinear shrinkage",
    "sfnl": "single-factor nonlinear shrinkage",
}

# section -> key -> converter; anything else in a config file is rejected
CONFIG_SCHEMA = {
    "data": {"returns": str, "factors": str, "riskfree": str, "benchmark": str},
    "run": {"methods": str, "objectives": str, "t_i": int, "cost_bps": float, "rho1": float,
            "sigma": float, "seed": int, "out": str, "run_id": str, "free_initial": "bool"},
    "poet": {"max_factors": int, "c": float},
    "oft": {"omega_const": float, "c": float},
    "nw": {"n_grid": int, "ratio": float},
    "rnw": {"n_grid": int, "ratio": float},
}
# config key -> estimator keyword
PARAM_NAMES = {"max_factors": "M", "c": "C"}


@dataclass
class RunConfig:
    returns: Optional[str] = None
    factors: Optional[str] = None
    riskfree: Optional[str] = None
    benchmark: Optional[str] = None
    methods: tuple = METHODS
    objectives: tuple = OBJECTIVES
    t_i: int = 180
    cost_bps: float = 50.0
    rho1: float = 0.01
    sigma: float = 0.05
    seed: int = 0
    out: str = "."
    run_id: str = "run"
    free_initial: bool = False
    method_params: dict = field(default_factory=dict)

    def backtest_config(self) -> BacktestConfig:
        return BacktestConfig(
            window=self.t_i,
            cost=self.cost_bps / 1e4,
            methods=tuple(self.methods),
            objectives=tuple(self.objectives),
            rho1=self.rho1,
            sigma=self.sigma,
            free_initial=self.free_initial,
            method_params=self.method_params,
        )


class UsageError(Exception):
    pass


def _split(value: str, allowed, what: str) -> tuple:
    items = tuple(v.strip().lower() for v in str(value).split(",") if v.strip())
    bad = [v for v in items if v not in allowed]
    if bad or not items:
        raise UsageError(f"unknown {what} {', '.join(bad) or '(empty)'}; valid: {', '.join(allowed)}")
    return items


def read_config(path) -> RunConfig:
    """Parse an INI-style ``key = value`` file. Unknown sections or keys are errors."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file {path} does not exist")
    cp = configparser.ConfigParser()
    cp.read(path, encoding="utf-8")
    cfg = RunConfig()
    for section in cp.sections():
        schema = CONFIG_SCHEMA.get(section)
        if schema is None:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in schema:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            conv = schema[key]
            try:
                value = cp.getboolean(section, key) if conv == "bool" else conv(raw)
            except ValueError:
                raise UsageError(f"{path}: bad value {raw!r} for {section}.{key}") from None
            if section in ("data", "run"):
                if key == "methods":
                    value = _split(value, METHODS, "method")
                elif key == "objectives":
                    value = _split(value, OBJECTIVES, "objective")
                setattr(cfg, key, value)
            else:
                cfg.method_params.setdefault(section, {})[PARAM_NAMES.get(key, key)] = value
    return cfg


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    for name in ("returns", "factors", "riskfree", "benchmark", "t_i", "rho1", "sigma", "seed", "out", "run_id"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "cost", None) is not None:
        cfg.cost_bps = args.cost
    if getattr(args, "method", None) is not None:
        cfg.methods = _split(args.method, METHODS, "method")
    if getattr(args, "objective", None) is not None:
        cfg.objectives = _split(args.objective, OBJECTIVES, "objective")
    if getattr(args, "max_factors", None) is not None:
        cfg.method_params.setdefault("poet", {})["M"] = args.max_factors
    if getattr(args, "free_initial", False):
        cfg.free_initial = True
    for attr in ("returns", "factors", "riskfree", "benchmark"):
        p = getattr(cfg, attr)
        if p is not None and not Path(p).is_file():
            raise UsageError(f"{attr} file {p} does not exist")
    return cfg


def _load_inputs(cfg: RunConfig, need_factors: bool):
    if cfg.returns is None:
        raise UsageError("no returns file given (use --returns or [data] returns=)")
    returns = load_panel(cfg.returns, "returns")
    factors = load_panel(cfg.factors, "factors") if cfg.factors else None
    if need_factors and factors is None:
        raise UsageError("the selected methods need a factor file (--factors)")
    rf = load_panel(cfg.riskfree, "riskfree") if cfg.riskfree else None
    bench = load_panel(cfg.benchmark, "returns") if cfg.benchmark else None
    returns, factors, rf = align(returns, factors, rf)
    if rf is not None:
        returns = to_excess(returns, rf)
        if bench is not None:
            bench_aligned, rf_b = align(bench, rf)
            bench = to_excess(bench_aligned, rf_b)
    return returns, factors, bench


def _describe(value) -> str:
    if isinstance(value, np.ndarray):
        if value.size == 0:
            return "[]"
        return f"min {value.min():.6g}, median {np.median(value):.6g}, max {value.max():.6g}"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def cmd_estimate(cfg: RunConfig) -> int:
    if len(cfg.methods) != 1:
        raise UsageError("estimate takes exactly one --method")
    method = cfg.methods[0]
    returns, factors, _ = _load_inputs(cfg, method in FACTOR_METHODS)
    Y = returns.values - returns.values.mean(axis=0)
    X = None if factors is None else (factors.values - factors.values.mean(axis=0)).T
    try:
        est = ESTIMATORS[method](Y, X, **cfg.method_params.get(method, {}))
    except CovlabError as exc:
        raise CovlabError(f"{method} estimator: {exc}") from None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.run_id}_{method}_precision.csv"
    write_matrix_csv(path, returns.assets, returns.assets, est.precision, first="asset")
    print(f"method: {method}")
    print(f"panel: T={returns.T} p={returns.p}")
    for key, value in est.tuning.items():
        print(f"{key}: {_describe(value)}")
    print(f"wrote {path}")
    return 0


def cmd_backtest(cfg: RunConfig) -> int:
    bt = cfg.backtest_config()
    returns, factors, bench = _load_inputs(cfg, bool(set(bt.methods) & FACTOR_METHODS))
    if returns.T <= bt.window:
        raise UsageError(f"T_I={bt.window} leaves no test period: the panel has only T={returns.T} dates")
    reports = run_backtest(returns, factors, bt, benchmark=bench)
    dates = returns.dates[bt.window:]
    header = {
        "sigma": bt.sigma,
        "rho1": bt.rho1,
        "T_I": bt.window,
        "cost": bt.cost,
        "oos": f"{dates[0]}..{dates[-1]}",
    }
    paths = write_tables(render_tables(reports, header), cfg.out, cfg.run_id)
    failed = [r for r in reports if r.failed]
    for r in failed:
        print(f"FAILED {r.method}/{r.objective} at window {r.failed_window}: {r.error}", file=sys.stderr)
    print(f"{len(dates)} windows, {len(reports) - len(failed)}/{len(reports)} cells ok")
    for p in paths:
        print(f"wrote {p}")
    return 1 if failed else 0


def cmd_simulate(args) -> int:
    spec = SyntheticMarketSpec(
        p=args.p, T=args.T, K=args.K,
        factor_cov=(args.factor_sd ** 2) * np.eye(args.K),
        loading_scale=args.loading_scale,
        error_structure=args.error_structure,
        error_scale=args.error_scale,
        bandwidth=args.bandwidth,
        band_value=args.band_value,
        density=args.density,
        drift=args.drift,
        seed=args.seed,
    )
    returns, factors, cov, prec = generate_synthetic(spec)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "returns": (returns.dates, returns.assets, returns.values, "date"),
        "factors": (factors.dates, factors.factors, factors.values, "date"),
        "true_cov": (returns.assets, returns.assets, cov, "asset"),
        "true_precision": (returns.assets, returns.assets, prec, "asset"),
    }
    for name, (rows, cols, mat, first) in files.items():
        path = out / f"{name}.csv"
        write_matrix_csv(path, rows, cols, mat, first=first)
        print(f"wrote {path}")
    print(f"seed {args.seed}")
    return 0


def _method_epilog() -> str:
    lines = ["methods:"]
    lines += [f"  {tag:<6}{METHOD_HELP[tag]}" for tag in METHODS]
    lines.append("objectives: " + ", ".join(OBJECTIVES))
    lines.append("environment: COVLAB_THREADS caps the number of worker threads")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="covlab",
        description="Precision-matrix estimators, portfolio weights and rolling backtests.",
        epilog=_method_epilog(),
        formatter_class=fmt,
    )
    parser.add_argument("--version", action="version", version=f"covlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, backtest: bool):
        p.add_argument("--config", help="INI-style config file; flags override it")
        p.add_argument("--returns", help="CSV of asset returns (date column first)")
        p.add_argument("--factors", help="CSV of observed factors")
        p.add_argument("--riskfree", help="CSV with a risk-free column, subtracted from returns")
        p.add_argument("--method", help="method tag(s), comma separated: " + ", ".join(METHODS))
        p.add_argument("--max-factors", type=int, help="largest factor count POET may select (default 8)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--run-id", help="prefix for output files (default 'run')")
        if backtest:
            p.add_argument("--benchmark", help="one-column CSV of benchmark returns")
            p.add_argument("--objective", help="gmv, mv and/or msr, comma separated")
            p.add_argument("--t-i", type=int, help="training window length (default 180)")
            p.add_argument("--cost", type=float, help="proportional cost in basis points (default 50)")
            p.add_argument("--rho1", type=float, help="Markowitz target return per period (default 0.01)")
            p.add_argument("--sigma", type=float, help="maximum-Sharpe risk budget (default 0.05)")
            p.add_argument("--free-initial", action="store_true",
                           help="do not charge costs for the first allocation")

    common(sub.add_parser("estimate", help="estimate one precision matrix on a full panel",
                          epilog=_method_epilog(), formatter_class=fmt), backtest=False)
    common(sub.add_parser("backtest", help="rolling out-of-sample evaluation",
                          epilog=_method_epilog(), formatter_class=fmt), backtest=True)

    sim = sub.add_parser("simulate", help="write a synthetic factor market and its true covariance")
    sim.add_argument("--p", type=int, default=100, help="number of assets")
    sim.add_argument("--T", type=int, default=300, help="number of periods")
    sim.add_argument("--K", type=int, default=3, help="number of factors")
    sim.add_argument("--factor-sd", type=float, default=0.04)
    sim.add_argument("--loading-scale", type=float, default=1.0)
    sim.add_argument("--error-structure", choices=ERROR_STRUCTURES, default="diagonal")
    sim.add_argument("--error-scale", type=float, default=0.05)
    sim.add_argument("--bandwidth", type=int, default=1)
    sim.add_argument("--band-value", type=float, default=0.4)
    sim.add_argument("--density", type=float, default=0.05)
    sim.add_argument("--drift", type=float, default=0.008, help="constant mean return added to every asset")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        cfg = read_config(args.config) if args.config else RunConfig()
        cfg = _apply_flags(cfg, args)
        if args.command == "estimate":
            return cmd_estimate(cfg)
        return cmd_backtest(cfg)
    except UsageError as exc:
        parser.error(str(exc))
    except (CovlabError, ValueError) as exc:
        print(f"covlab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
