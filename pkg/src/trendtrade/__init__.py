"""Intraday price-trend classification and a commission-aware trading strategy."""

from .backtest import (
    BacktestReport,
    GridResult,
    NetworkPredictor,
    OraclePredictor,
    StreamPredictor,
    annualized_volatility,
    buy_and_hold,
    grid_search,
    likelihood_ratio,
    run_backtest,
    sharpe_annual,
)
from .dataset import Sample, balance, build_samples, label, normalize, smooth, split_chronological
from .market_data import (
    MinuteSeries,
    SessionCalendar,
    SyntheticSpec,
    TradingDay,
    filter_sessions,
    generate_synthetic,
    load_minute_series,
    write_minute_series,
)
from .neuralnet import Network, Prediction, TrainConfig, forward, init, train
from .strategy import ClosurePolicy, SafetyConfig, StrategyConfig, Trade

__version__ = "0.1.0"
