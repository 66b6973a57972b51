"""Labeled feature windows built from trading days.

Each sample anchored at minute ``n`` of a session uses the 64 raw closes
ending at ``n``: a 5-tap moving average turns them into 60 smoothed values,
which are then standardized. The label compares the raw close at ``n + T``
against the raw close at ``n``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

import numpy as np

from .errors import BalanceError, ConfigurationError, ParseError, ShapeError, ValidationError
from .market_data import TradingDay

WINDOW = 60
TAPS = 5
RAW_WINDOW = WINDOW + TAPS - 1  # 64
FIRST_ANCHOR = RAW_WINDOW - 1   # 63: earliest minute index with a full raw window
MAX_HORIZON = 30
DEGENERATE_STD = 1e-12


def smooth(raw) -> np.ndarray:
    """Uniform 5-tap moving average of 64 closes -> 60 values (no edge padding)."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (RAW_WINDOW,):
        raise ShapeError(f"smooth expects {RAW_WINDOW} closes, got shape {raw.shape}")
    return np.convolve(raw, np.full(TAPS, 1.0 / TAPS), mode="valid")


@dataclass(frozen=True)
class FeatureWindow:
    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (WINDOW,):
            raise ShapeError(f"feature window must hold {WINDOW} values, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def normalize(window) -> FeatureWindow:
    """Zero mean, unit sample std (ddof=1). Near-constant windows map to zeros."""
    v = np.asarray(window, dtype=np.float64)
    if v.shape != (WINDOW,):
        raise ShapeError(f"normalize expects {WINDOW} values, got shape {v.shape}")
    std = v.std(ddof=1)
    if std < DEGENERATE_STD:
        return FeatureWindow(np.zeros(WINDOW), degenerate=True)
    return FeatureWindow((v - v.mean()) / std)


def label(entry: float, exit: float) -> int:
    """+1 when the price strictly rises, -1 otherwise (ties count as down)."""
    if not (entry > 0 and exit > 0):
        raise ValidationError(f"prices must be positive, got {entry}, {exit}")
    return 1 if exit > entry else -1


@dataclass(frozen=True)
class Sample:
    features: FeatureWindow
    label: int
    day: date
    anchor: int
    entry_price: float
    exit_price: float

    @property
    def target(self) -> int:
        """Softmax column of the label (1 = up, 0 = down)."""
        return 1 if self.label > 0 else 0


def anchors(horizon: int, n_bars: int) -> range:
    """Minute indices that have a full raw window behind them and ``n + horizon`` in session."""
    return range(FIRST_ANCHOR, n_bars - horizon)


def day_features(closes) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix for every minute index with a full raw window.

    Returns ``(features, degenerate)`` of shapes (n - 63, 60) and (n - 63,);
    row ``i`` belongs to minute index ``63 + i``.
    """
    closes = np.asarray(closes, dtype=np.float64)
    n = len(closes) - FIRST_ANCHOR
    if n <= 0:
        return np.empty((0, WINDOW)), np.empty(0, dtype=bool)
    feats = np.empty((n, WINDOW))
    flags = np.empty(n, dtype=bool)
    for i in range(n):
        fw = normalize(smooth(closes[i:i + RAW_WINDOW]))
        feats[i] = fw.values
        flags[i] = fw.degenerate
    return feats, flags


def build_samples(day: TradingDay, horizon: int) -> list[Sample]:
    """One sample per anchor; ``390 - 63 - horizon`` of them for a full session."""
    if not 1 <= horizon <= MAX_HORIZON:
        raise ConfigurationError(f"horizon must lie in 1..{MAX_HORIZON}, got {horizon}")
    closes = np.asarray(day.closes, dtype=np.float64)
    out = []
    for n in anchors(horizon, len(closes)):
        entry, exit_ = float(closes[n]), float(closes[n + horizon])
        out.append(Sample(
            features=normalize(smooth(closes[n - FIRST_ANCHOR:n + 1])),
            label=label(entry, exit_),
            day=day.date,
            anchor=n,
            entry_price=entry,
            exit_price=exit_,
        ))
    return out


def build_dataset(days: Iterable[TradingDay], horizon: int) -> list[Sample]:
    samples: list[Sample] = []
    for day in days:
        samples.extend(build_samples(day, horizon))
    return samples


def balance(samples: Sequence[Sample], seed: int) -> list[Sample]:
    """Oversample the minority class with replacement until both classes are equal.

    The originals keep their order; the duplicates are appended.
    """
    up = [i for i, s in enumerate(samples) if s.label > 0]
    down = [i for i, s in enumerate(samples) if s.label <= 0]
    if not up or not down:
        raise BalanceError(f"both classes required to balance (up={len(up)}, down={len(down)})")
    minority = up if len(up) < len(down) else down
    deficit = abs(len(up) - len(down))
    rng = np.random.default_rng(seed)
    extra = rng.choice(minority, size=deficit, replace=True) if deficit else []
    return list(samples) + [samples[i] for i in extra]


@dataclass(frozen=True)
class DatasetSplit:
    train: list[Sample]
    validation: list[Sample]
    test: list[Sample]
    boundaries: dict[str, tuple[date, date]] = field(default_factory=dict)


def split_chronological(samples: Sequence[Sample], val_start: date, test_start: date) -> DatasetSplit:
    """Assign samples by calendar day: [..val_start) train, [val_start..test_start) validation, rest test."""
    if not val_start < test_start:
        raise ConfigurationError(f"val_start {val_start} must precede test_start {test_start}")
    parts: dict[str, list[Sample]] = {"train": [], "validation": [], "test": []}
    for s in samples:
        key = "train" if s.day < val_start else "validation" if s.day < test_start else "test"
        parts[key].append(s)
    empty = [k for k, v in parts.items() if not v]
    if empty:
        raise ConfigurationError(f"empty split(s): {', '.join(empty)}")
    bounds = {k: (min(s.day for s in v), max(s.day for s in v)) for k, v in parts.items()}
    return DatasetSplit(parts["train"], parts["validation"], parts["test"], bounds)


def to_arrays(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack into a (n, 60) feature matrix and a vector of class indices."""
    if not samples:
        return np.empty((0, WINDOW)), np.empty(0, dtype=np.intp)
    x = np.stack([s.features.values for s in samples])
    y = np.array([s.target for s in samples], dtype=np.intp)
    return x, y


# -- CSV export ---------------------------------------------------------------

DATASET_HEADER = ["date", "anchor", "label", "entry", "exit"] + [f"f{i}" for i in range(WINDOW)]


def write_samples(samples: Iterable[Sample], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for s in samples:
            w.writerow([s.day.isoformat(), s.anchor, s.label, repr(s.entry_price), repr(s.exit_price)]
                       + [repr(float(v)) for v in s.features.values])


def read_samples(path) -> list[Sample]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DATASET_HEADER:
            raise ParseError([(1, "unexpected dataset header")])
        for lineno, row in enumerate(reader, start=2):
            try:
                values = np.array([float(v) for v in row[5:]])
                out.append(Sample(
                    features=FeatureWindow(values, degenerate=not values.any()),
                    label=int(row[2]),
                    day=date.fromisoformat(row[0]),
                    anchor=int(row[1]),
                    entry_price=float(row[3]),
                    exit_price=float(row[4]),
                ))
            except (ValueError, ShapeError, IndexError) as exc:
                raise ParseError([(lineno, str(exc))]) from exc
    return out
