"""Turning class probabilities into intraday long/short trades.

A trade opens when the classification margin ``|p_up - p_down|`` clears a
threshold that is recalibrated every morning from the previous days'
decision points, unless a streak of recent losing trades has tripped the
safety switch. Positions close after a fixed horizon, when the hard decision
flips, or a fixed horizon after the flip; anything still open is closed at
15:59.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from datetime import date
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ValidationError
from .market_data import SESSION_MINUTES
from .neuralnet import Prediction

NO_TRADE = math.inf
LAST_INDEX = SESSION_MINUTES - 1  # 15:59, forced close


class ClosurePolicy(str, enum.Enum):
    FIXED_T = "fixed_t"
    ON_FLIP = "on_flip"
    FLIP_PLUS_T = "flip_plus_t"


def default_grid() -> tuple[float, ...]:
    return tuple(round(0.05 * i, 2) for i in range(19))  # 0.00 .. 0.90


@dataclass(frozen=True)
class SafetyConfig:
    window: int = 10    # trades inspected
    trigger: int = 4    # losses within the window that trip the switch
    length: int = 120   # minutes of suppression

    def __post_init__(self):
        if self.window < 1 or self.trigger < 1 or self.length < 0:
            raise ConfigurationError("safety window/trigger must be >= 1 and length >= 0")
        if self.trigger > self.window + 1:
            raise ConfigurationError("safety trigger may exceed the window by at most one (disabled)")

    @classmethod
    def disabled(cls, window: int = 10) -> "SafetyConfig":
        return cls(window=window, trigger=window + 1, length=0)


@dataclass(frozen=True)
class StrategyConfig:
    """Trading rules. ``horizon`` is T in minutes, ``lookback_days`` is D.

    ``commission`` is the round-trip cost in percent of the invested sum.
    ``fixed_threshold`` bypasses adaptive calibration when set.
    """

    horizon: int = 28
    lookback_days: int = 5
    threshold_grid: tuple[float, ...] = field(default_factory=default_grid)
    commission: float = 0.1
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    closure: ClosurePolicy = ClosurePolicy.ON_FLIP
    min_qualify: int = 5
    fixed_threshold: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "closure", ClosurePolicy(self.closure))
        object.__setattr__(self, "threshold_grid", tuple(float(t) for t in self.threshold_grid))
        if self.commission < 0:
            raise ConfigurationError("commission must be non-negative")
        if not 1 <= self.horizon < SESSION_MINUTES:
            raise ConfigurationError("horizon must be a positive number of minutes inside a session")
        if self.lookback_days < 1 or self.min_qualify < 1:
            raise ConfigurationError("lookback_days and min_qualify must be positive")
        grid = self.threshold_grid
        if not grid or list(grid) != sorted(grid) or grid[0] < 0 or grid[-1] >= 1:
            raise ConfigurationError("threshold_grid must be non-empty, sorted and within [0, 1)")
        if self.fixed_threshold is not None and self.fixed_threshold < 0:
            raise ConfigurationError("fixed_threshold must be non-negative")


@dataclass(frozen=True)
class Trade:
    """A closed round trip. Minutes are session indices (0 = 09:30)."""

    day: date
    open_minute: int
    close_minute: int
    direction: int
    entry: float
    exit: float
    gain_pct: float
    threshold_used: float = 0.0
    margin: float = 0.0
    safety_blocked_count: int = 0

    @property
    def gross_pct(self) -> float:
        return self.direction * (self.exit - self.entry) / self.entry * 100.0


@dataclass(frozen=True)
class OpenDecision:
    alpha: int
    margin: float
    threshold_used: float
    direction: int


def _probs(pred) -> tuple[float, float]:
    if isinstance(pred, Prediction):
        return pred.probs
    p1, p2 = pred
    return float(p1), float(p2)


def margin(pred) -> float:
    p1, p2 = _probs(pred)
    return abs(p2 - p1)


def hard_decision(pred) -> int:
    p1, p2 = _probs(pred)
    return 1 if p2 > p1 else -1


def trade_gain(direction: int, entry: float, exit: float, commission: float) -> float:
    """Percent return of an equal-stake trade, net of the round-trip commission."""
    if not (entry > 0 and exit > 0):
        raise ValidationError(f"prices must be positive, got {entry}, {exit}")
    return direction * (exit - entry) / entry * 100.0 - commission


def adaptive_threshold(
    margins: Sequence[float],
    gains: Sequence[float],
    grid: Sequence[float],
    min_qualify: int = 5,
) -> float:
    """Pick the grid threshold whose qualifying history has the best median gain.

    A history point qualifies for threshold ``t`` when its margin is at least
    ``t``. Candidates with fewer than ``min_qualify`` points are skipped; ties
    in the median go to the larger threshold. Returns :data:`NO_TRADE` when no
    candidate qualifies.
    """
    m = np.asarray(margins, dtype=np.float64)
    g = np.asarray(gains, dtype=np.float64)
    if m.size == 0 or m.shape != g.shape:
        raise ConfigurationError("history must be non-empty with one gain per margin")
    if len(grid) == 0:
        raise ConfigurationError("threshold grid is empty")
    best, best_median = NO_TRADE, -math.inf
    for t in grid:
        sel = g[m >= t]
        if sel.size < min_qualify:
            continue
        med = float(np.median(sel))
        if med >= best_median:
            best, best_median = float(t), med
    return best


def losses_trigger(recent_gains: Sequence[float], safety: SafetyConfig) -> bool:
    window = list(recent_gains)[-safety.window:]
    return sum(1 for g in window if g < 0) >= safety.trigger


def safety_active(
    recent_gains: Sequence[float],
    now: int,
    last_close: int | None,
    safety: SafetyConfig,
) -> bool:
    """True while openings are suppressed.

    The loss count is evaluated at the most recent close (``last_close``);
    when it reaches the trigger, minutes ``last_close .. last_close + length - 1``
    are blocked. No trade can close while blocked, so the last close is always
    the triggering one.
    """
    if last_close is None or not recent_gains:
        return False
    if not last_close <= now < last_close + safety.length:
        return False
    return losses_trigger(recent_gains, safety)


class SafetySwitch:
    """Stateful wrapper over :func:`safety_active` fed with closed-trade gains."""

    def __init__(self, cfg: SafetyConfig):
        self.cfg = cfg
        self.recent: deque[float] = deque(maxlen=cfg.window)
        self.last_close: int | None = None

    def record_close(self, gain: float, clock: int) -> None:
        self.recent.append(gain)
        self.last_close = clock

    def active(self, clock: int) -> bool:
        return safety_active(self.recent, clock, self.last_close, self.cfg)


def decide_open(pred, threshold: float, safety: bool, position_open: bool) -> OpenDecision:
    m = margin(pred)
    alpha = int(m >= threshold and not safety and not position_open)
    return OpenDecision(alpha, m, threshold, hard_decision(pred))


@dataclass
class Position:
    day: date
    open_minute: int
    direction: int
    entry: float
    threshold_used: float = 0.0
    margin: float = 0.0
    safety_blocked_count: int = 0
    flip_minute: int | None = None


def decide_close(
    policy: ClosurePolicy,
    position: Position,
    hard: int | None,
    now: int,
    horizon: int,
    session_end: int = LAST_INDEX,
) -> bool:
    """Whether to close ``position`` at session minute ``now``.

    ``hard`` is the current hard decision (``None`` when no prediction is
    available). For ``FLIP_PLUS_T`` the first flip is remembered on the
    position.
    """
    if now >= session_end:
        return True
    if now <= position.open_minute:
        return False
    policy = ClosurePolicy(policy)
    if policy is ClosurePolicy.FIXED_T:
        return now >= position.open_minute + horizon
    flipped = hard is not None and hard != position.direction
    if policy is ClosurePolicy.ON_FLIP:
        return flipped
    if position.flip_minute is None and flipped:
        position.flip_minute = now
    return position.flip_minute is not None and now >= position.flip_minute + horizon
