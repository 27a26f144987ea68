import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covlab.backtest import (
    BacktestConfig,
    BacktestReport,
    WindowRecord,
    adjusted_weights,
    net_return,
    run_backtest,
)
from covlab.data import FactorPanel, ReturnsPanel
from covlab.errors import BacktestError, EstimationError
from oracles import net_return_hand


def _dates(T):
    return [f"{1990 + k // 12}-{k % 12 + 1:02d}" for k in range(T)]


def _panel(values):
    values = np.asarray(values, dtype=float)
    return ReturnsPanel(_dates(values.shape[0]), [f"a{j}" for j in range(values.shape[1])], values)


def identity_stub(Y, X, **kw):
    return np.eye(Y.shape[1])


def _stub_config(**kw):
    kw.setdefault("methods", ("nw",))
    return BacktestConfig(**kw)


class TestAdjustedWeights:
    def test_zero_returns(self):
        np.testing.assert_array_equal(adjusted_weights([0.3, 0.7], [0.0, 0.0]), [0.3, 0.7])

    def test_equal_returns(self):
        np.testing.assert_allclose(adjusted_weights([0.2, 0.5, 0.3], [0.04] * 3), [0.2, 0.5, 0.3], rtol=1e-15)

    def test_hand_case(self):
        np.testing.assert_allclose(adjusted_weights([0.5, 0.5], [0.1, 0.0]), [0.55 / 1.05, 0.5 / 1.05], rtol=1e-15)

    def test_wipeout(self):
        with pytest.raises(BacktestError, match="wipeout"):
            adjusted_weights([1.0, 0.0], [-1.0, 0.3])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), p=st.integers(2, 30))
    def test_sum_preserved(self, seed, p):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(p)
        w /= w.sum()
        if abs(w).max() > 1e3:
            return
        out = adjusted_weights(w, rng.uniform(-0.3, 0.3, p))
        assert abs(out.sum() - 1) <= 1e-12 * max(1.0, np.abs(out).sum())


class TestNetReturn:
    def test_no_rebalance(self):
        net, t = net_return([0.4, 0.6], [0.4, 0.6], [0.01, 0.03], 0.005)
        assert t == 0 and net == pytest.approx(0.022, abs=1e-15)

    def test_zero_cost(self):
        net, t = net_return([1.0, 0.0], [0.0, 1.0], [0.05, -0.02], 0.0)
        assert t == 2.0 and net == 0.05

    def test_hand_oracle(self):
        # gross 0.02 and turnover 0.4 exactly
        net, t = net_return([0.5, 0.5], [0.3, 0.7], [0.04, 0.0], 0.005)
        assert t == pytest.approx(0.4, abs=1e-15)
        assert net == pytest.approx(0.01796, abs=1e-12)
        assert net == pytest.approx(net_return_hand(0.02, 0.4, 0.005), abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            net_return([1.0], [0.5, 0.5], [0.0, 0.0], 0.0)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(cost=1.0), dict(cost=-0.1), dict(window=1), dict(sigma=0.0),
                                    dict(objectives=("gmv", "tangency")), dict(method_params={"xyz": {}})])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            BacktestConfig(**kw)


class TestRun:
    def test_constant_returns_infinite_sharpe(self):
        panel = _panel(np.full((20, 3), 0.01))
        cfg = _stub_config(window=10, cost=0.0, objectives=("gmv",))
        (rep,) = run_backtest(panel, config=cfg, estimators={"nw": identity_stub})
        assert np.all(rep.net_returns == pytest.approx(0.01, abs=1e-15))
        assert rep.variance_net == 0.0
        assert rep.sharpe == math.inf

    def test_window_count(self, rng):
        panel = _panel(rng.normal(0.01, 0.05, (186, 4)))
        reps = run_backtest(panel, config=_stub_config(), estimators={"nw": identity_stub})
        assert [len(r.records) for r in reps] == [6, 6, 6]
        assert reps[0].records[0].date == panel.dates[180]

    def test_cross_sectionally_constant_returns_stop_trading(self, rng):
        common = rng.normal(0.01, 0.04, 40)
        panel = _panel(np.tile(common[:, None], (1, 5)))
        (rep,) = run_backtest(panel, config=_stub_config(window=24, objectives=("gmv",)),
                              estimators={"nw": identity_stub})
        assert rep.records[0].turnover == pytest.approx(1.0)  # the whole book is bought
        assert all(r.turnover == pytest.approx(0.0, abs=1e-14) for r in rep.records[1:])

    def test_free_initial_allocation(self, rng):
        panel = _panel(rng.normal(0.01, 0.04, (30, 3)))
        cfg = _stub_config(window=24, objectives=("gmv",), free_initial=True)
        (rep,) = run_backtest(panel, config=cfg, estimators={"nw": identity_stub})
        assert rep.records[0].turnover == 0.0

    def test_no_look_ahead(self, rng):
        values = rng.normal(0.01, 0.05, (40, 6))
        cfg = BacktestConfig(window=24, methods=("lslw",))
        base = run_backtest(_panel(values), config=cfg)
        for i in (0, 5, 11):
            cut = values.copy()
            cut[24 + i + 1:] = 0.0
            trial = run_backtest(_panel(cut), config=cfg)
            for a, b in zip(base, trial):
                assert a.records[i].digest == b.records[i].digest
                assert a.records[i].net == b.records[i].net

    def test_zero_cost_net_equals_gross(self, rng):
        panel = _panel(rng.normal(0.01, 0.05, (36, 5)))
        for rep in run_backtest(panel, config=BacktestConfig(window=24, cost=0.0, methods=("lslw", "poet"))):
            assert all(r.net == r.gross for r in rep.records)

    def test_aggregates_recompute(self, rng):
        panel = _panel(rng.normal(0.01, 0.05, (36, 5)))
        for rep in run_backtest(panel, config=BacktestConfig(window=24, methods=("lslw",))):
            net = np.array([r.net for r in rep.records])
            n = net.size
            mean = sum(net) / n
            var = sum((x - mean) ** 2 for x in net) / (n - 1)
            assert rep.mean_net == pytest.approx(mean, rel=1e-12)
            assert rep.variance_net == pytest.approx(var, rel=1e-10)
            assert rep.sharpe == pytest.approx(mean / math.sqrt(var), rel=1e-10)
            assert rep.mean_turnover == pytest.approx(np.mean([r.turnover for r in rep.records]), rel=1e-12)
            assert rep.metric("SR") == rep.sharpe and rep.metric("Turnover") == rep.mean_turnover

    def test_estimator_failure_marks_every_objective(self, rng):
        calls = []

        def flaky(Y, X, **kw):
            calls.append(1)
            if len(calls) == 3:
                raise EstimationError("boom")
            return np.eye(Y.shape[1])

        panel = _panel(rng.normal(0.01, 0.05, (30, 3)))
        reps = run_backtest(panel, config=_stub_config(window=24), estimators={"nw": flaky})
        for rep in reps:
            assert rep.failed and rep.failed_window == 2
            assert "boom" in rep.error
            assert len(rep.records) == 2

    def test_weight_failure_marks_one_cell(self, rng):
        def degenerate(Y, X, **kw):
            return np.array([[1.0, -1.0], [-1.0, 1.0]])

        panel = _panel(rng.normal(0.01, 0.05, (30, 2)))
        reps = {r.objective: r for r in run_backtest(panel, config=_stub_config(window=24),
                                                     estimators={"nw": degenerate})}
        assert reps["gmv"].failed and reps["gmv"].failed_window == 0
        assert not reps["msr"].failed and len(reps["msr"].records) == 6

    def test_factor_methods_need_factors(self, rng):
        with pytest.raises(ValueError, match="factor panel"):
            run_backtest(_panel(rng.normal(0, 0.05, (30, 3))), config=BacktestConfig(window=24, methods=("oft",)))

    def test_benchmark_rows(self, rng):
        panel = _panel(rng.normal(0.01, 0.05, (30, 3)))
        bench = ReturnsPanel(panel.dates, ["S&P 500"], rng.normal(0.005, 0.04, (30, 1)))
        reps = run_backtest(panel, config=_stub_config(window=24), benchmark=bench,
                            estimators={"nw": identity_stub})
        rows = [r for r in reps if r.benchmark]
        assert [r.objective for r in rows] == ["gmv", "msr", "mv"]
        for r in rows:
            np.testing.assert_array_equal(r.net_returns, bench.values[24:, 0])
            assert r.mean_turnover == 0.0 and r.method == "S&P 500"

    def test_threaded_matches_serial(self, two_factor_market):
        r, f, _, _ = two_factor_market
        short = ReturnsPanel(r.dates[:70], r.assets, r.values[:70])
        fac = FactorPanel(f.dates[:70], f.factors, f.values[:70])
        kw = dict(window=60, methods=("poet", "oft", "lslw"))
        a = run_backtest(short, fac, BacktestConfig(threads=1, **kw))
        b = run_backtest(short, fac, BacktestConfig(threads=3, **kw))
        assert [x.records for x in a] == [x.records for x in b]


def test_report_handles_empty_and_single_records():
    assert math.isnan(BacktestReport("nw", "gmv").mean_net)
    rep = BacktestReport("nw", "gmv", [WindowRecord("2000-01", 0.01, 0.01, 0.0, "")])
    assert math.isnan(rep.variance_net)
