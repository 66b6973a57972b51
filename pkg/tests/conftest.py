from datetime import date

import numpy as np
import pytest

from trendtrade.market_data import SyntheticSpec, TradingDay, filter_sessions, generate_synthetic


def sine_days(n_days=3, amplitude=1.0, period=40.0, phase=0.3, start=date(2015, 1, 5)):
    spec = SyntheticSpec(regime="sinusoid", n_days=n_days, start=start, amplitude=amplitude,
                         period=period, phase=phase)
    return filter_sessions(generate_synthetic(spec, seed=0))


def walk_days(n_days=3, seed=0, vol=0.0005, start=date(2015, 1, 5)):
    spec = SyntheticSpec(regime="random_walk", n_days=n_days, start=start, vol=vol)
    return filter_sessions(generate_synthetic(spec, seed=seed))


def flat_day(d=date(2015, 1, 5), price=100.0):
    return TradingDay(d, np.full(390, price))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
