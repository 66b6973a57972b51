import math
import statistics
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trendtrade.errors import ConfigurationError, ValidationError
from trendtrade.neuralnet import Prediction
from trendtrade.strategy import (
    LAST_INDEX,
    NO_TRADE,
    ClosurePolicy,
    Position,
    SafetyConfig,
    SafetySwitch,
    StrategyConfig,
    adaptive_threshold,
    decide_close,
    decide_open,
    default_grid,
    margin,
    safety_active,
    trade_gain,
)

D = date(2016, 1, 4)


@pytest.mark.parametrize("probs,expected", [((0.5, 0.5), 0.0), ((0.9, 0.1), 0.8), ((1.0, 0.0), 1.0)])
def test_margin(probs, expected):
    assert margin(Prediction(probs)) == pytest.approx(expected, abs=1e-15)
    assert margin(probs) == pytest.approx(expected, abs=1e-15)


def test_default_grid():
    g = default_grid()
    assert g[0] == 0.0 and g[-1] == 0.9 and len(g) == 19


def test_adaptive_threshold_ties_to_largest():
    margins = [0.95] * 6 + [0.3] * 6
    gains = [0.1] * 12
    assert adaptive_threshold(margins, gains, default_grid()) == 0.9


def test_adaptive_threshold_hand_history():
    low = [(0.1, g) for g in (-0.5, -0.4, -0.3, -0.2, -0.1)]
    high = [(0.5, g) for g in (0.1, 0.15, 0.2, 0.25, 0.3)]
    pts = low + high
    assert statistics.median(g for _, g in low) == -0.3
    assert statistics.median(g for _, g in high) == 0.2
    # candidate 0.0 takes every point; its median sits between the groups
    assert statistics.median(g for _, g in pts) < 0.2
    m, g = zip(*pts)
    assert adaptive_threshold(m, g, (0.0, 0.2)) == 0.2


def test_adaptive_threshold_insufficient_history():
    assert adaptive_threshold([0.5, 0.6, 0.7], [1.0, 1.0, 1.0], (0.0, 0.5)) == NO_TRADE


def test_adaptive_threshold_skips_thin_candidates():
    margins = [0.1] * 5 + [0.8] * 4
    gains = [0.01] * 5 + [5.0] * 4
    # 0.5 and above have only four qualifying points
    assert adaptive_threshold(margins, gains, (0.0, 0.5)) == 0.0


def test_adaptive_threshold_errors():
    with pytest.raises(ConfigurationError):
        adaptive_threshold([], [], (0.0,))
    with pytest.raises(ConfigurationError):
        adaptive_threshold([0.1], [0.1], ())


def brute_force_threshold(margins, gains, grid, k=5):
    best = None
    for t in grid:
        sel = [g for m, g in zip(margins, gains) if m >= t]
        if len(sel) >= k:
            med = statistics.median(sel)
            if best is None or med >= best[0]:
                best = (med, t)
    return NO_TRADE if best is None else best[1]


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(-2, 2)), min_size=1, max_size=40))
def test_adaptive_threshold_matches_brute_force(points):
    m, g = zip(*points)
    assert adaptive_threshold(m, g, default_grid()) == brute_force_threshold(m, g, default_grid())


def test_safety_no_trades():
    assert not safety_active([], 100, None, SafetyConfig(5, 3, 60))


def test_safety_trigger_and_expiry():
    cfg = SafetyConfig(window=5, trigger=3, length=60)
    gains = [-0.1, -0.2, 0.1, -0.3, 0.2]
    assert sum(g < 0 for g in gains) == 3
    assert all(safety_active(gains, 500 + k, 500, cfg) for k in range(60))
    assert not safety_active(gains, 560, 500, cfg)
    assert not safety_active(gains, 561, 500, cfg)


def test_safety_window_only_counts_recent_trades():
    cfg = SafetyConfig(window=3, trigger=2, length=10)
    assert not safety_active([-1, -1, 1, 1, -1], 0, 0, cfg)
    assert safety_active([1, -1, -1], 0, 0, cfg)


def test_safety_switch_object():
    sw = SafetySwitch(SafetyConfig(window=2, trigger=2, length=5))
    sw.record_close(-1.0, 10)
    assert not sw.active(10)
    sw.record_close(-1.0, 20)
    assert [sw.active(t) for t in (19, 20, 24, 25)] == [False, True, True, False]


@settings(max_examples=50, deadline=None)
@given(gains=st.lists(st.floats(-1, 1), max_size=30), window=st.integers(1, 12),
       now=st.integers(0, 1000), last=st.integers(0, 1000))
def test_unreachable_trigger_never_fires(gains, window, now, last):
    cfg = SafetyConfig(window=window, trigger=window + 1, length=500)
    assert not safety_active(gains, now, last, cfg)


def test_decide_open():
    p = Prediction((0.35, 0.65))
    assert decide_open(p, 0.2, False, False).alpha == 1
    assert decide_open(p, 0.2, False, False).direction == 1
    assert decide_open(p, 0.2, True, False).alpha == 0
    assert decide_open(p, 0.2, False, True).alpha == 0
    assert decide_open(Prediction((0.599995, 0.400005)), 0.2, False, False).alpha == 0
    d = decide_open(Prediction((0.6, 0.4)), 0.2, False, False)
    assert d.direction == -1 and d.threshold_used == 0.2
    assert decide_open(p, NO_TRADE, False, False).alpha == 0


def test_decide_open_boundary_inclusive():
    assert decide_open((0.25, 0.75), 0.5, False, False).alpha == 1


def test_fixed_t_close():
    pos = Position(D, 100, 1, 10.0)
    closes = [n for n in range(100, 200) if decide_close(ClosurePolicy.FIXED_T, pos, -1, n, 28)]
    assert closes[0] == 128


def test_on_flip_close():
    pos = Position(D, 100, 1, 10.0)
    seq = {100: 1, 101: 1, 102: -1}
    fired = [n for n in (100, 101, 102) if decide_close("on_flip", pos, seq[n], n, 28)]
    assert fired == [102]


def test_on_flip_forced_at_session_end():
    pos = Position(D, 300, -1, 10.0)
    fired = [n for n in range(301, 390) if decide_close(ClosurePolicy.ON_FLIP, pos, -1, n, 28)]
    assert fired[0] == LAST_INDEX == 389


def test_flip_plus_t_close():
    pos = Position(D, 100, -1, 10.0)
    hard = {n: (-1 if n < 110 else 1) for n in range(100, 200)}
    fired = [n for n in range(101, 200) if decide_close(ClosurePolicy.FLIP_PLUS_T, pos, hard[n], n, 5)]
    assert pos.flip_minute == 110
    assert fired[0] == 115


def test_fixed_t_forced_at_session_end():
    pos = Position(D, 380, 1, 10.0)
    assert decide_close(ClosurePolicy.FIXED_T, pos, 1, 389, 28)


@pytest.mark.parametrize("direction,commission,expected", [(1, 0.1, 0.9), (-1, 0.1, -1.1), (1, 0.0, 1.0)])
def test_trade_gain(direction, commission, expected):
    assert trade_gain(direction, 100.0, 101.0, commission) == pytest.approx(expected, abs=1e-12)


def test_trade_gain_flat_costs_commission():
    assert trade_gain(1, 100.0, 100.0, 0.1) == pytest.approx(-0.1)
    with pytest.raises(ValidationError):
        trade_gain(1, -1.0, 1.0, 0.0)


@pytest.mark.parametrize("kw", [
    dict(commission=-0.1),
    dict(threshold_grid=(0.5, 0.2)),
    dict(threshold_grid=(0.0, 1.0)),
    dict(threshold_grid=()),
    dict(horizon=0),
])
def test_strategy_config_validation(kw):
    with pytest.raises(ConfigurationError):
        StrategyConfig(**kw)


def test_safety_config_validation():
    with pytest.raises(ConfigurationError):
        SafetyConfig(window=3, trigger=5)
    assert SafetyConfig.disabled(4).trigger == 5


def test_closure_from_string():
    assert StrategyConfig(closure="fixed_t").closure is ClosurePolicy.FIXED_T
    assert math.isinf(NO_TRADE)
