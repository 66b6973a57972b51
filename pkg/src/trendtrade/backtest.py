"""Minute-by-minute backtests, performance metrics and (T, D) grid search."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from . import dataset
from .errors import ConfigurationError, LeakageError, UndefinedMetricError
from .market_data import SESSION_MINUTES, TradingDay
from .neuralnet import Network, TrainConfig, predict_proba, train
from .strategy import (
    NO_TRADE,
    Position,
    SafetySwitch,
    StrategyConfig,
    Trade,
    adaptive_threshold,
    decide_close,
    decide_open,
    trade_gain,
)

TRADING_DAYS = 252
N_MINUTE = TRADING_DAYS * SESSION_MINUTES  # 98,280 trading minutes a year
REPORT_SCHEMA = 1


# -- metrics ------------------------------------------------------------------

def buy_and_hold(days: Sequence[TradingDay]) -> float:
    """Commission-free percent change from the first close to the last close."""
    if not days:
        raise ConfigurationError("buy_and_hold needs at least one day")
    first, last = float(days[0].closes[0]), float(days[-1].closes[-1])
    return (last - first) / first * 100.0


def sharpe_annual(daily_returns: Sequence[float]) -> float:
    """mean / sample std of daily returns, times sqrt(252); zero risk-free rate."""
    r = np.asarray(daily_returns, dtype=np.float64)
    if r.size < 2:
        raise UndefinedMetricError("Sharpe ratio needs at least two daily returns")
    std = r.std(ddof=1)
    if std == 0:
        raise UndefinedMetricError("Sharpe ratio undefined for zero-variance returns")
    return float(r.mean() / std * math.sqrt(TRADING_DAYS))


def annualized_volatility(minute_returns: Sequence[float]) -> float:
    """sqrt(252 * 390) times the sample std of a minute-level return vector."""
    r = np.asarray(minute_returns, dtype=np.float64)
    if r.size == 0:
        raise ConfigurationError("annualized_volatility needs a non-empty vector")
    if r.size == 1:
        return 0.0
    return float(math.sqrt(N_MINUTE) * r.std(ddof=1))


def likelihood_ratio(probs, labels) -> float:
    """Mean probability on the true class over mean probability on the other class.

    ``probs`` is (n, 2) with columns (down, up); ``labels`` are trends (+1/-1).
    """
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.asarray(labels)
    if p.shape[0] == 0 or p.shape[0] != y.shape[0]:
        raise ConfigurationError("likelihood_ratio needs aligned, non-empty inputs")
    true_col = (y > 0).astype(np.intp)
    p_true = p[np.arange(len(y)), true_col]
    p_false = p[np.arange(len(y)), 1 - true_col]
    denom = p_false.mean()
    if denom == 0:
        raise UndefinedMetricError("no probability mass on incorrect classes")
    return float(p_true.mean() / denom)


# -- predictors ---------------------------------------------------------------

class Predictor(Protocol):
    horizon: int | None
    train_end: date | None

    def day_probs(self, day: TradingDay) -> np.ndarray:
        """(390, 2) class probabilities per session minute; NaN rows where unavailable."""
        ...


class NetworkPredictor:
    def __init__(self, net: Network):
        self.net = net
        self.horizon = net.horizon
        self.train_end = net.train_end

    def day_probs(self, day: TradingDay) -> np.ndarray:
        out = np.full((len(day.closes), 2), np.nan)
        feats, _ = dataset.day_features(day.closes)
        if len(feats):
            out[dataset.FIRST_ANCHOR:] = predict_proba(self.net, feats)
        return out


class OraclePredictor:
    """Test double: hard decision equals the realized trend over ``horizon``, margin 1."""

    train_end = None

    def __init__(self, horizon: int):
        self.horizon = horizon

    def day_probs(self, day: TradingDay) -> np.ndarray:
        x = np.asarray(day.closes)
        out = np.full((len(x), 2), np.nan)
        n = np.arange(dataset.FIRST_ANCHOR, len(x) - self.horizon)
        up = x[n + self.horizon] > x[n]
        out[n, 1] = up.astype(float)
        out[n, 0] = 1.0 - out[n, 1]
        return out


class StreamPredictor:
    """Replays precomputed probabilities keyed by date."""

    def __init__(self, stream: dict[date, np.ndarray], horizon: int | None = None,
                 train_end: date | None = None):
        self.stream = stream
        self.horizon = horizon
        self.train_end = train_end

    def day_probs(self, day: TradingDay) -> np.ndarray:
        return np.asarray(self.stream[day.date], dtype=np.float64)


# -- backtest -----------------------------------------------------------------

@dataclass
class BacktestReport:
    trades: list[Trade]
    days: list[date]
    daily_returns: np.ndarray
    minute_returns: np.ndarray
    asset_minute_returns: np.ndarray
    thresholds: list[float]
    commission: float
    likelihood_ratio: float | None
    baseline_pct: float
    volatility_basis: str = "asset"
    instrument: str = ""

    @property
    def cumulative_gain_pct(self) -> float:
        return float(sum(t.gain_pct for t in self.trades))

    @property
    def trade_count(self) -> int:
        return len(self.trades)

    @property
    def hit_rate(self) -> float | None:
        if not self.trades:
            return None
        return sum(1 for t in self.trades if t.gain_pct > 0) / len(self.trades)

    @property
    def sharpe_annual(self) -> float | None:
        try:
            return sharpe_annual(self.daily_returns)
        except UndefinedMetricError:
            return None

    @property
    def sigma_ann_strategy(self) -> float:
        return annualized_volatility(self.minute_returns)

    @property
    def sigma_ann_asset(self) -> float:
        return annualized_volatility(self.asset_minute_returns)

    @property
    def sigma_ann(self) -> float:
        return self.sigma_ann_asset if self.volatility_basis == "asset" else self.sigma_ann_strategy

    def equity_curve(self) -> np.ndarray:
        return np.cumsum(self.minute_returns)

    def summary(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA,
            "instrument": self.instrument,
            "first_day": self.days[0].isoformat() if self.days else None,
            "last_day": self.days[-1].isoformat() if self.days else None,
            "n_days": len(self.days),
            "commission_pct": self.commission,
            "cumulative_gain_pct": self.cumulative_gain_pct,
            "baseline_pct": self.baseline_pct,
            "trade_count": self.trade_count,
            "hit_rate": self.hit_rate,
            "sharpe_annual": self.sharpe_annual,
            "sigma_ann": self.sigma_ann,
            "sigma_ann_basis": self.volatility_basis,
            "sigma_ann_strategy": self.sigma_ann_strategy,
            "sigma_ann_asset": self.sigma_ann_asset,
            "likelihood_ratio": self.likelihood_ratio,
        }

    def with_commission(self, commission: float) -> "BacktestReport":
        """The same trades re-accounted at another commission rate."""
        trades = [replace(t, gain_pct=t.gross_pct - commission) for t in self.trades]
        return _assemble(trades, self.days, self.asset_minute_returns, self.thresholds,
                         commission, self.likelihood_ratio, self.baseline_pct,
                         self.volatility_basis, self.instrument)


def _assemble(trades, days, asset_returns, thresholds, commission, ratio, baseline,
              basis, instrument) -> BacktestReport:
    index = {d: i for i, d in enumerate(days)}
    daily = np.zeros(len(days))
    minute = np.zeros(len(days) * SESSION_MINUTES)
    for t in trades:
        i = index[t.day]
        daily[i] += t.gain_pct
        minute[i * SESSION_MINUTES + t.close_minute] += t.gain_pct
    return BacktestReport(trades, list(days), daily, minute, asset_returns, list(thresholds),
                          commission, ratio, baseline, basis, instrument)


def _check_days(days: Sequence[TradingDay], history: Sequence[TradingDay], train_end: date | None):
    dates = [d.date for d in days]
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise ConfigurationError("backtest days must be strictly chronological")
    hist = [d.date for d in history]
    if any(b <= a for a, b in zip(hist, hist[1:])) or (hist and dates and hist[-1] >= dates[0]):
        raise ConfigurationError("history days must be chronological and precede the backtest")
    if train_end is not None:
        leaked = [d for d in dates if d <= train_end]
        if leaked:
            raise LeakageError(f"{len(leaked)} backtest day(s) fall inside the training range "
                               f"(last training day {train_end}, first offending {leaked[0]})")


def _hard(probs: np.ndarray) -> np.ndarray:
    return np.where(probs[:, 1] > probs[:, 0], 1, -1)


def calibration_points(day: TradingDay, probs: np.ndarray, horizon: int, commission: float):
    """Margins and counterfactual fixed-horizon gains at every decision point of a day."""
    x = np.asarray(day.closes)
    n = np.asarray(dataset.anchors(horizon, len(x)))
    p = probs[n]
    ok = np.isfinite(p).all(axis=1)
    n, p = n[ok], p[ok]
    margins = np.abs(p[:, 1] - p[:, 0])
    gains = _hard(p) * (x[n + horizon] - x[n]) / x[n] * 100.0 - commission
    return margins, gains


def run_backtest(
    predictor,
    days: Sequence[TradingDay],
    cfg: StrategyConfig,
    history_days: Sequence[TradingDay] = (),
    train_end: date | None = None,
    volatility_basis: str = "asset",
    instrument: str = "",
) -> BacktestReport:
    """Simulate the strategy over ``days``.

    ``predictor`` is a :class:`Network` or any object with ``day_probs``.
    ``history_days`` precede the backtest and only seed threshold calibration.
    Days on or before ``train_end`` (default: the predictor's) raise
    :class:`LeakageError`.
    """
    if isinstance(predictor, Network):
        predictor = NetworkPredictor(predictor)
    if volatility_basis not in ("asset", "strategy"):
        raise ConfigurationError("volatility_basis must be 'asset' or 'strategy'")
    if not days:
        raise ConfigurationError("no days to backtest")
    if train_end is None:
        train_end = getattr(predictor, "train_end", None)
    _check_days(days, history_days, train_end)
    horizon = cfg.horizon
    model_horizon = getattr(predictor, "horizon", None)
    if model_horizon is not None and model_horizon != horizon:
        raise ConfigurationError(f"predictor horizon {model_horizon} != strategy horizon {horizon}")

    calib: list[tuple[np.ndarray, np.ndarray]] = []
    for day in history_days[-cfg.lookback_days:] if cfg.fixed_threshold is None else ():
        calib.append(calibration_points(day, predictor.day_probs(day), horizon, cfg.commission))

    safety = SafetySwitch(cfg.safety)
    trades: list[Trade] = []
    thresholds: list[float] = []
    all_probs, all_labels = [], []
    asset_returns = []
    for day_no, day in enumerate(days):
        x = np.asarray(day.closes)
        probs = predictor.day_probs(day)
        if cfg.fixed_threshold is not None:
            threshold = cfg.fixed_threshold
        else:
            recent = calib[-cfg.lookback_days:]
            margins = np.concatenate([m for m, _ in recent]) if recent else np.empty(0)
            gains = np.concatenate([g for _, g in recent]) if recent else np.empty(0)
            threshold = (adaptive_threshold(margins, gains, cfg.threshold_grid, cfg.min_qualify)
                         if margins.size else NO_TRADE)
        thresholds.append(threshold)

        valid = np.isfinite(probs).all(axis=1)
        hard = _hard(np.where(valid[:, None], probs, 0.0))
        openable = np.zeros(len(x), dtype=bool)
        openable[list(dataset.anchors(horizon, len(x)))] = True
        openable &= valid

        position: Position | None = None
        blocked = 0
        base = day_no * SESSION_MINUTES
        for n in range(len(x)):
            if position is not None and decide_close(
                    cfg.closure, position, int(hard[n]) if valid[n] else None, n, horizon):
                gain = trade_gain(position.direction, position.entry, float(x[n]), cfg.commission)
                trades.append(Trade(day.date, position.open_minute, n, position.direction,
                                    position.entry, float(x[n]), gain, position.threshold_used,
                                    position.margin, position.safety_blocked_count))
                safety.record_close(gain, base + n)
                position = None
            if position is None and openable[n]:
                blocked_now = safety.active(base + n)
                decision = decide_open(probs[n], threshold, blocked_now, False)
                if decision.alpha:
                    position = Position(day.date, n, decision.direction, float(x[n]),
                                        threshold, decision.margin, blocked)
                    blocked = 0
                elif blocked_now and decision.margin >= threshold:
                    blocked += 1
        assert position is None, "forced session-end close must flatten every position"

        n_pts = np.asarray(dataset.anchors(horizon, len(x)))
        ok = valid[n_pts]
        if ok.any():
            pts = n_pts[ok]
            all_probs.append(probs[pts])
            all_labels.append(np.where(x[pts + horizon] > x[pts], 1, -1))
        asset_returns.append(np.diff(np.log(x)) * 100.0)
        if cfg.fixed_threshold is None:
            calib.append(calibration_points(day, probs, horizon, cfg.commission))

    ratio = None
    if all_probs:
        try:
            ratio = likelihood_ratio(np.concatenate(all_probs), np.concatenate(all_labels))
        except UndefinedMetricError:
            ratio = None
    return _assemble(trades, [d.date for d in days], np.concatenate(asset_returns), thresholds,
                     cfg.commission, ratio, buy_and_hold(days), volatility_basis, instrument)


def commission_sweep(report: BacktestReport, commissions: Sequence[float]) -> list[dict]:
    """Re-account a frozen trade set at each commission rate."""
    rows = []
    for c in commissions:
        r = report.with_commission(c)
        rows.append({"commission": c, "cumulative_gain_pct": r.cumulative_gain_pct,
                     "trade_count": r.trade_count, "sharpe_annual": r.sharpe_annual})
    return rows


# -- export -------------------------------------------------------------------

TRADE_HEADER = ["day", "open_minute", "close_minute", "direction", "entry", "exit",
                "gain_pct", "threshold_used", "margin", "safety_blocked_count"]


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def write_trades(trades: Sequence[Trade], path, session_open: int = 570) -> None:
    """Trade log CSV; minutes are written as minutes since midnight."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRADE_HEADER)
        for t in trades:
            w.writerow([t.day.isoformat(), session_open + t.open_minute,
                        session_open + t.close_minute, t.direction, repr(t.entry), repr(t.exit),
                        repr(t.gain_pct), _num(t.threshold_used), repr(t.margin),
                        t.safety_blocked_count])


def read_trades(path, session_open: int = 570) -> list[Trade]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(Trade(date.fromisoformat(row["day"]), int(row["open_minute"]) - session_open,
                             int(row["close_minute"]) - session_open, int(row["direction"]),
                             float(row["entry"]), float(row["exit"]), float(row["gain_pct"]),
                             float(row["threshold_used"]), float(row["margin"]),
                             int(row["safety_blocked_count"])))
    return out


def write_report(report: BacktestReport, out_dir, stem: str = "") -> dict:
    """Write JSON summary plus trade-log, daily-returns and equity-curve CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = f"{stem}_" if stem else ""
    files = {
        "trades": f"{prefix}trades.csv",
        "daily_returns": f"{prefix}daily_returns.csv",
        "equity_curve": f"{prefix}equity.csv",
    }
    write_trades(report.trades, out / files["trades"])
    with open(out / files["daily_returns"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "gain_pct"])
        for d, g in zip(report.days, report.daily_returns):
            w.writerow([d.isoformat(), repr(float(g))])
    with open(out / files["equity_curve"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["minute_index", "cumulative_gain_pct"])
        for i, g in enumerate(report.equity_curve()):
            w.writerow([i, repr(float(g))])
    doc = report.summary()
    doc["files"] = files
    (out / f"{prefix}report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


# -- grid search --------------------------------------------------------------

@dataclass
class GridResult:
    rows: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def selected(self) -> tuple[int, int]:
        """Argmax of validation gain; ties go to the smaller T, then the smaller D."""
        if not self.rows:
            raise ConfigurationError("empty grid")
        return max(self.rows, key=lambda k: (self.rows[k], -k[0], -k[1]))

    def to_csv(self, path) -> None:
        best = self.selected
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["T", "D", "val_gain", "selected"])
            for (t, d), g in sorted(self.rows.items()):
                w.writerow([t, d, repr(float(g)), int((t, d) == best)])


def train_for_horizon(
    train_days: Sequence[TradingDay],
    val_days: Sequence[TradingDay],
    horizon: int,
    train_cfg: TrainConfig,
    balance_seed: int = 0,
):
    """Build balanced train/validation sets for ``horizon`` and fit a network."""
    tr = dataset.balance(dataset.build_dataset(train_days, horizon), balance_seed)
    va = dataset.balance(dataset.build_dataset(val_days, horizon), balance_seed + 1)
    tx, ty = dataset.to_arrays(tr)
    vx, vy = dataset.to_arrays(va)
    net, history = train(train_cfg, tx, ty, vx, vy)
    net = replace(net, horizon=horizon, train_end=max(d.date for d in train_days))
    return net, history


def grid_search(
    train_days: Sequence[TradingDay],
    val_days: Sequence[TradingDay],
    horizons: Sequence[int],
    lookbacks: Sequence[int],
    cfg: StrategyConfig,
    train_cfg: TrainConfig | None = None,
    predictor_factory: Callable[[int], object] | None = None,
) -> GridResult:
    """Validation-period cumulative gain for every (T, D) cell.

    One predictor per T, trained with the same seed (or built by
    ``predictor_factory``); the last D training days seed threshold calibration.
    """
    if not horizons or not lookbacks:
        raise ConfigurationError("grid_search needs non-empty T and D grids")
    result = GridResult()
    for horizon in horizons:
        if predictor_factory is not None:
            predictor = predictor_factory(horizon)
        else:
            predictor, _ = train_for_horizon(train_days, val_days, horizon, train_cfg or TrainConfig())
        for lookback in lookbacks:
            cell_cfg = replace(cfg, horizon=horizon, lookback_days=lookback)
            report = run_backtest(predictor, val_days, cell_cfg, history_days=list(train_days))
            result.rows[(horizon, lookback)] = report.cumulative_gain_pct
    return result
