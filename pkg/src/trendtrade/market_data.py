"""Minute-bar ingestion, regular-session filtering and synthetic price series."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DuplicateTimestampError, ParseError, ValidationError

log = logging.getLogger(__name__)

SESSION_OPEN = 9 * 60 + 30   # 09:30
SESSION_CLOSE = 16 * 60      # 16:00, exclusive
SESSION_MINUTES = SESSION_CLOSE - SESSION_OPEN
MAX_MISSING_FRACTION = 0.05

BASIC_COLUMNS = ("date", "minute", "close")
EXTENDED_COLUMNS = ("date", "minute", "open", "high", "low", "close", "volume")


@dataclass(frozen=True)
class MinuteBar:
    date: date
    minute_of_day: int
    close: float

    def __post_init__(self):
        if not 0 <= self.minute_of_day <= 1439:
            raise ValidationError(f"minute_of_day {self.minute_of_day} outside 0..1439")
        if not (self.close > 0 and math.isfinite(self.close)):
            raise ValidationError(f"close must be a positive finite price, got {self.close}")


@dataclass(frozen=True)
class MinuteSeries:
    """Closing prices grouped by calendar date.

    ``days`` maps each date to ``(minutes, closes)``: an int array of
    minutes-since-midnight (strictly increasing) and a float array of closes.
    """

    days: dict[date, tuple[np.ndarray, np.ndarray]]
    instrument: str = ""

    @property
    def dates(self) -> list[date]:
        return sorted(self.days)

    def __len__(self) -> int:
        return len(self.days)

    @property
    def n_bars(self) -> int:
        return sum(len(m) for m, _ in self.days.values())

    def bars(self) -> Iterator[MinuteBar]:
        for d in self.dates:
            minutes, closes = self.days[d]
            for m, c in zip(minutes, closes):
                yield MinuteBar(d, int(m), float(c))

    def equals(self, other: "MinuteSeries") -> bool:
        if self.dates != other.dates:
            return False
        return all(
            np.array_equal(self.days[d][0], other.days[d][0])
            and np.array_equal(self.days[d][1], other.days[d][1])
            for d in self.dates
        )

    @classmethod
    def from_bars(cls, bars, instrument: str = "") -> "MinuteSeries":
        grouped: dict[date, dict[int, float]] = {}
        for bar in bars:
            slot = grouped.setdefault(bar.date, {})
            if bar.minute_of_day in slot:
                raise DuplicateTimestampError(
                    [(0, f"duplicate timestamp {bar.date} minute {bar.minute_of_day}")])
            slot[bar.minute_of_day] = bar.close
        days = {}
        for d, slot in grouped.items():
            minutes = np.array(sorted(slot), dtype=np.int64)
            days[d] = (minutes, np.array([slot[m] for m in minutes], dtype=np.float64))
        return cls(days, instrument)


@dataclass(frozen=True)
class TradingDay:
    """One complete regular session: exactly 390 closes, minute 09:30 first."""

    date: date
    closes: np.ndarray
    filled: int = 0  # bars synthesized by forward-fill

    def __post_init__(self):
        closes = np.array(self.closes, dtype=np.float64)
        if closes.shape != (SESSION_MINUTES,):
            raise ValidationError(f"{self.date}: expected {SESSION_MINUTES} bars, got {closes.shape}")
        if not (closes > 0).all():
            raise ValidationError(f"{self.date}: non-positive close")
        closes.setflags(write=False)
        object.__setattr__(self, "closes", closes)

    @property
    def minutes(self) -> np.ndarray:
        return np.arange(SESSION_OPEN, SESSION_CLOSE)

    @property
    def bars(self) -> list[MinuteBar]:
        return [MinuteBar(self.date, SESSION_OPEN + i, float(c)) for i, c in enumerate(self.closes)]

    def __len__(self) -> int:
        return len(self.closes)


@dataclass(frozen=True)
class SessionCalendar:
    excluded_dates: frozenset[date] = frozenset()
    session_open: int = SESSION_OPEN
    session_close: int = SESSION_CLOSE

    def __post_init__(self):
        object.__setattr__(self, "excluded_dates", frozenset(self.excluded_dates))
        if not 0 <= self.session_open < self.session_close <= 1440:
            raise ValidationError("session_open must precede session_close within one day")
        if self.session_close - self.session_open != SESSION_MINUTES:
            raise ValidationError(f"sessions must span {SESSION_MINUTES} minutes")


def _parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())


def load_calendar(path) -> SessionCalendar:
    """Read excluded dates, one ISO date per line; blank lines and ``#`` comments skipped."""
    excluded = set()
    problems = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            excluded.add(_parse_date(text))
        except ValueError:
            problems.append((lineno, f"bad date {text!r}"))
    if problems:
        raise ParseError(problems)
    return SessionCalendar(frozenset(excluded))


def write_calendar(cal: SessionCalendar, path) -> None:
    Path(path).write_text("".join(f"{d.isoformat()}\n" for d in sorted(cal.excluded_dates)))


def load_minute_series(path, instrument: str = "") -> MinuteSeries:
    """Parse a ``date,minute,close`` (or extended OHLCV) CSV file.

    All row problems are collected before raising, so a :class:`ParseError`
    lists every offending line. Non-positive prices raise
    :class:`ValidationError`; repeated ``(date, minute)`` pairs raise
    :class:`DuplicateTimestampError`.
    """
    parse_errors: list[tuple[int, str]] = []
    price_errors: list[tuple[int, str]] = []
    seen: dict[tuple[date, int], int] = {}
    dupes: list[tuple[int, str]] = []
    grouped: dict[date, list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError([(1, "empty file, header required")])
        cols = [h.strip().lower() for h in header]
        missing = [c for c in BASIC_COLUMNS if c not in cols]
        if missing:
            raise ParseError([(1, f"header lacks columns {missing}")])
        i_date, i_min, i_close = (cols.index(c) for c in BASIC_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(cols):
                parse_errors.append((lineno, f"expected {len(cols)} fields, got {len(row)}"))
                continue
            try:
                d = _parse_date(row[i_date])
                minute = int(row[i_min])
                close = float(row[i_close])
            except ValueError as exc:
                parse_errors.append((lineno, str(exc)))
                continue
            if not 0 <= minute <= 1439:
                parse_errors.append((lineno, f"minute {minute} outside 0..1439"))
                continue
            if not (math.isfinite(close) and close > 0):
                price_errors.append((lineno, f"non-positive or non-finite close {row[i_close]!r}"))
                continue
            key = (d, minute)
            if key in seen:
                dupes.append((lineno, f"duplicate timestamp {d} minute {minute} (first on line {seen[key]})"))
                continue
            seen[key] = lineno
            grouped.setdefault(d, []).append((minute, close))
    if parse_errors:
        raise ParseError(parse_errors + price_errors + dupes)
    if price_errors:
        raise ValidationError("; ".join(f"line {n}: {m}" for n, m in price_errors))
    if dupes:
        raise DuplicateTimestampError(dupes)
    days = {}
    for d, rows in grouped.items():
        rows.sort()
        days[d] = (np.array([m for m, _ in rows], dtype=np.int64),
                   np.array([c for _, c in rows], dtype=np.float64))
    return MinuteSeries(days, instrument)


def write_minute_series(series: MinuteSeries, path) -> None:
    """Write ``date,minute,close`` rows; ``repr`` floats keep the round trip exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BASIC_COLUMNS)
        for d in series.dates:
            minutes, closes = series.days[d]
            iso = d.isoformat()
            for m, c in zip(minutes, closes):
                w.writerow([iso, int(m), repr(float(c))])


def write_trading_days(days: list[TradingDay], path, instrument: str = "") -> None:
    write_minute_series(days_to_series(days, instrument), path)


def days_to_series(days: list[TradingDay], instrument: str = "") -> MinuteSeries:
    return MinuteSeries(
        {d.date: (d.minutes.astype(np.int64), np.array(d.closes)) for d in days}, instrument)


@dataclass
class SessionScreen:
    """Outcome of session filtering: the kept days and a reason for each dropped date."""

    kept: list[TradingDay] = field(default_factory=list)
    dropped: dict[date, str] = field(default_factory=dict)

    @property
    def filled_minutes(self) -> int:
        return sum(d.filled for d in self.kept)


def screen_sessions(series: MinuteSeries, cal: SessionCalendar | None = None) -> SessionScreen:
    """Keep complete regular sessions, forward-filling sparse interior gaps.

    Bars outside the session window are ignored. A day is dropped when it is
    excluded by the calendar, lacks the opening bar, or is missing more than
    5% of the session's minutes.
    """
    cal = cal or SessionCalendar()
    out = SessionScreen()
    max_missing = int(MAX_MISSING_FRACTION * SESSION_MINUTES)
    for d in series.dates:
        if d in cal.excluded_dates:
            out.dropped[d] = "calendar exclusion"
            continue
        minutes, closes = series.days[d]
        inside = (minutes >= cal.session_open) & (minutes < cal.session_close)
        minutes, closes = minutes[inside], closes[inside]
        missing = SESSION_MINUTES - len(minutes)
        if missing > max_missing:
            out.dropped[d] = "partial session"
            continue
        if len(minutes) == 0 or minutes[0] != cal.session_open:
            out.dropped[d] = "missing session open"
            continue
        slots = minutes - cal.session_open
        if missing:
            # forward fill: each slot takes the last observed close at or before it
            full = np.arange(SESSION_MINUTES)
            src = np.searchsorted(slots, full, side="right") - 1
            closes = closes[src]
        out.kept.append(TradingDay(d, closes, filled=missing))
        if missing:
            log.debug("%s: forward-filled %d minutes", d, missing)
    return out


def filter_sessions(series: MinuteSeries, cal: SessionCalendar | None = None) -> list[TradingDay]:
    return screen_sessions(series, cal).kept


# -- synthetic data -----------------------------------------------------------

REGIMES = ("random_walk", "sinusoid")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for :func:`generate_synthetic`.

    ``random_walk``: geometric random walk, ``log p`` gets ``drift + vol * N(0,1)``
    per minute. ``sinusoid``: ``base + amplitude * sin(2 pi t / period + phase)``
    over a global minute counter, multiplied by ``exp(noise * N(0,1))`` when
    ``noise > 0``.
    Weekends are skipped when laying out dates.
    """

    regime: str = "random_walk"
    n_days: int = 10
    start: date = date(2015, 1, 5)
    base_price: float = 100.0
    drift: float = 0.0
    vol: float = 0.0005
    amplitude: float = 0.0
    period: float = 40.0
    phase: float = 0.0
    noise: float = 0.0

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ValidationError(f"regime must be one of {REGIMES}")
        if self.n_days < 1:
            raise ValidationError("n_days must be at least 1")
        if not self.base_price > 0:
            raise ValidationError("base_price must be positive")
        if self.vol < 0 or self.noise < 0:
            raise ValidationError("vol and noise must be non-negative")
        if self.regime == "sinusoid":
            if self.amplitude < 0 or self.amplitude >= self.base_price:
                raise ValidationError("amplitude must lie in [0, base_price)")
            if not self.period > 0:
                raise ValidationError("period must be positive")


def business_days(start: date, n: int) -> list[date]:
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def generate_synthetic(spec: SyntheticSpec, seed: int, instrument: str = "SYN") -> MinuteSeries:
    """Full 390-bar sessions on consecutive weekdays; a pure function of (spec, seed)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    dates = business_days(spec.start, spec.n_days)
    n = SESSION_MINUTES * len(dates)
    if spec.regime == "random_walk":
        steps = spec.drift + spec.vol * rng.standard_normal(n)
        steps[0] = 0.0
        prices = spec.base_price * np.exp(np.cumsum(steps))
    else:
        t = np.arange(n, dtype=np.float64)
        prices = spec.base_price + spec.amplitude * np.sin(2 * np.pi * t / spec.period + spec.phase)
        if spec.noise > 0:
            prices = prices * np.exp(spec.noise * rng.standard_normal(n))
    minutes = np.arange(SESSION_OPEN, SESSION_CLOSE, dtype=np.int64)
    days = {
        d: (minutes.copy(), prices[i * SESSION_MINUTES:(i + 1) * SESSION_MINUTES].copy())
        for i, d in enumerate(dates)
    }
    return MinuteSeries(days, instrument)
