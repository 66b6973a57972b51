"""Acceptance criteria for the full pipeline, one PASS/FAIL line each.

Lines are printed as they are decided and repeated in the pytest terminal
summary under "acceptance criteria".
"""

import math
import subprocess
import sys
import time
from datetime import date

import numpy as np
import pytest

from trendtrade import backtest as bt
from trendtrade import dataset as ds
from trendtrade import neuralnet as nn
from trendtrade.strategy import ClosurePolicy, SafetyConfig, StrategyConfig

from .conftest import ACCEPTANCE_LINES, sine_days, walk_days


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def separable_blobs(n, rng, direction, sep=3.0):
    """Two Gaussian blobs, trimmed so the hyperplane through 0 normal to ``direction`` separates them."""
    xs, ys = [], []
    while sum(len(y) for y in ys) < n:
        y = rng.integers(0, 2, 2 * n)
        x = rng.normal(size=(2 * n, 60)) + np.outer(2 * y - 1, direction) * sep
        keep = np.sign(x @ direction) == 2 * y - 1
        xs.append(x[keep])
        ys.append(y[keep])
    return np.concatenate(xs)[:n], np.concatenate(ys)[:n]


def test_gradient_correctness():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        net = nn.init(seed, (60, 8, 2), std=0.3)
        rep = nn.grad_check(net, rng.normal(size=60), int(rng.integers(0, 2)), h=1e-5, tolerance=1e-4)
        worst = max(worst, rep.max_rel_error)
    elapsed = time.perf_counter() - start
    report("gradient correctness", worst < 1e-4 and elapsed < 10,
           f"max relative error {worst:.2e} over 10 seeds in {elapsed:.2f} s")


def test_learnability():
    rng = np.random.default_rng(2024)
    d = rng.normal(size=60)
    d /= np.linalg.norm(d)
    tx, ty = separable_blobs(5000, rng, d)
    vx, vy = separable_blobs(1000, rng, d)
    cfg = nn.TrainConfig(max_epochs=50, init_scheme="he", seed=0)
    assert (cfg.batch_size, cfg.lr_initial, cfg.lr_decay_factor, cfg.dropout_rate) == (100, 1e-3, 5, 0.5)
    start = time.perf_counter()
    net, hist = nn.train(cfg, tx, ty, vx, vy)
    elapsed = time.perf_counter() - start
    acc = 1 - nn.classification_error(net, vx, vy)
    report("learnability", acc >= 0.95 and len(hist.records) <= 50 and elapsed < 120,
           f"validation accuracy {acc:.2%} after {len(hist.records)} epochs in {elapsed:.1f} s")


def test_null_signal():
    days = walk_days(40, seed=9)
    train = ds.build_dataset(days[:12], 28)
    val = ds.build_dataset(days[12:15], 28)
    test = ds.build_dataset(days[15:], 28)
    rng = np.random.default_rng(5)
    tx, ty = ds.to_arrays(train)
    vx, vy = ds.to_arrays(val)
    ty, vy = rng.permutation(ty), rng.permutation(vy)
    net, _ = nn.train(nn.TrainConfig(max_epochs=10, init_scheme="he", seed=3), tx, ty, vx, vy)
    sx, sy = ds.to_arrays(test)
    acc = 1 - nn.classification_error(net, sx, sy)
    report("null-signal control", 0.47 <= acc <= 0.53,
           f"test accuracy {acc:.2%} on {len(sy)} samples with shuffled training labels")


def random_stream(days, seed):
    rng = np.random.default_rng(seed)
    out = {}
    for d in days:
        up = rng.uniform(size=390)
        out[d.date] = np.column_stack([1 - up, up])
    return bt.StreamPredictor(out)


def test_accounting_identity():
    worst = 0.0
    for seed in range(20):
        days = walk_days(3, seed=seed)
        cfg = StrategyConfig(horizon=1 + seed, closure=list(ClosurePolicy)[seed % 3],
                             commission=0.05 * (seed % 4), fixed_threshold=0.05 * (seed % 10))
        r = bt.run_backtest(random_stream(days, seed), days, cfg)
        worst = max(worst, abs(r.cumulative_gain_pct - math.fsum(t.gain_pct for t in r.trades)))
    days = walk_days(3)
    empty = bt.run_backtest(random_stream(days, 0), days, StrategyConfig(fixed_threshold=math.inf))
    ok = worst < 1e-9 and empty.trade_count == 0 and empty.cumulative_gain_pct == 0.0
    report("accounting identity", ok,
           f"max |cumulative - sum(trades)| {worst:.1e} over 20 runs; zero-trade gain {empty.cumulative_gain_pct}")


def test_oracle_strategy():
    start = time.perf_counter()
    days = sine_days(5)
    cfg = StrategyConfig(horizon=1, commission=0.0, closure=ClosurePolicy.ON_FLIP)
    r = bt.run_backtest(bt.OraclePredictor(1), days[1:], cfg, history_days=days[:1])
    elapsed = time.perf_counter() - start
    ok = (r.trade_count > 0 and all(t.gain_pct >= 0 for t in r.trades)
          and r.cumulative_gain_pct > 0 and r.hit_rate == 1.0 and elapsed < 10)
    report("oracle strategy", ok,
           f"{r.trade_count} trades, min gain {min(t.gain_pct for t in r.trades):.4f}%, "
           f"cumulative {r.cumulative_gain_pct:.2f}%, hit rate {r.hit_rate}, {elapsed:.2f} s")


def test_commission_monotonicity():
    days = walk_days(5, seed=4)
    cfg = StrategyConfig(horizon=10, fixed_threshold=0.4, commission=0.0)
    base = bt.run_backtest(random_stream(days, 4), days, cfg)
    rows = bt.commission_sweep(base, [0.0, 0.05, 0.1, 0.15])
    n = base.trade_count
    err = max(abs(r["cumulative_gain_pct"] - (base.cumulative_gain_pct - n * r["commission"])) for r in rows)
    gains = [r["cumulative_gain_pct"] for r in rows]
    ok = n > 0 and err < 1e-9 and all(b < a for a, b in zip(gains, gains[1:]))
    report("commission monotonicity", ok,
           f"{n} trades, gains {', '.join(f'{g:.3f}' for g in gains)}, max deviation {err:.1e}")


def test_threshold_monotonicity():
    days = walk_days(3, seed=6)
    pred = random_stream(days, 6)
    ok, detail = True, []
    for closure in ClosurePolicy:
        counts = [bt.run_backtest(pred, days, StrategyConfig(horizon=8, closure=closure, fixed_threshold=t,
                                                             safety=SafetyConfig.disabled())).trade_count
                  for t in StrategyConfig().threshold_grid]
        ok &= all(b <= a for a, b in zip(counts, counts[1:]))
        detail.append(f"{closure.value} {counts[0]}->{counts[-1]}")
    report("threshold monotonicity", ok, "; ".join(detail))


def test_safety_switch():
    from trendtrade.market_data import TradingDay
    day = TradingDay(date(2015, 1, 5), np.linspace(100, 110, 390))
    probs = np.zeros((390, 2))
    probs[:, 0] = 1.0  # always short a rising market
    cfg = StrategyConfig(horizon=1, closure=ClosurePolicy.FIXED_T, commission=0.0, fixed_threshold=0.5,
                         safety=SafetyConfig(window=4, trigger=3, length=50))
    r = bt.run_backtest(bt.StreamPredictor({day.date: probs}), [day], cfg)
    opens = [t.open_minute for t in r.trades]
    # third loss closes at 66; minutes 66..115 blocked; first opening after is 116
    ok = opens[:4] == [63, 64, 65, 116] and r.trades[3].safety_blocked_count == 50
    report("safety switch", ok, f"openings {opens[:4]}, blocked minutes {r.trades[3].safety_blocked_count}")


def test_sample_count():
    (day,) = walk_days(1)
    n = len(ds.build_samples(day, 28))
    report("sample-count formula", n == 299, f"{n} samples for T=28")


def test_metric_oracles():
    sharpe = bt.sharpe_annual([0.2, -0.1, 0.3, 0.0])
    sigma = bt.annualized_volatility([0.1, -0.2, 0.05, 0.0])
    r = bt.likelihood_ratio([(0.5, 0.5)] * 6, [1, -1, 1, 1, -1, -1])
    # hand values: mean 0.1, std sqrt(1/30), sqrt(252); std sqrt(0.0175) * sqrt(98280)
    ok = (abs(sharpe - 8.694826047713665) < 1e-9 and abs(sigma - 41.22408276723692) < 1e-9 and r == 1.0)
    report("metric oracles", ok, f"Sharpe {sharpe:.12f}, sigma_ann {sigma:.12f}, R {r}")


def run_pipeline(root):
    py = [sys.executable, "-m", "trendtrade.cli"]
    fast = ["--set", "horizon=5", "--set", "max_epochs=2", "--set", "init_scheme=he",
            "--set", "val_start=2015-01-09", "--set", "test_start=2015-01-13", "--seed", "7"]
    steps = [
        ["synth", "--regime", "sinusoid", "--days", "8", "--noise", "0.05", "--out", str(root / "m.csv")],
        ["dataset", "--series", str(root / "m.csv"), "--out", str(root / "ds"), *fast],
        ["train", "--dataset", str(root / "ds"), "--out", str(root / "model"), *fast],
        ["backtest", "--model", str(root / "model" / "model.bin"), "--series", str(root / "m.csv"),
         "--out", str(root / "bt"), *fast],
    ]
    for step in steps:
        subprocess.run(py + step, check=True, capture_output=True)
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_determinism(tmp_path):
    a = run_pipeline(tmp_path / "a")
    b = run_pipeline(tmp_path / "b")
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    report("determinism", same and "model/model.bin" in a and "bt/trades.csv" in a,
           f"{len(a)} artifacts compared byte for byte across two processes")
