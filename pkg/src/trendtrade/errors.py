"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class TrendTradeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(TrendTradeError, ValueError):
    """A value violates a documented invariant (e.g. a non-positive price)."""


class ParseError(TrendTradeError, ValueError):
    """Malformed input file. ``diagnostics`` holds ``(line_number, message)`` pairs."""

    def __init__(self, diagnostics: list[tuple[int, str]]):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.diagnostics)
        super().__init__(lines)

    @property
    def line(self) -> int:
        return self.diagnostics[0][0]


class DuplicateTimestampError(ParseError):
    """Two rows share the same (date, minute)."""


class ShapeError(TrendTradeError, ValueError):
    pass


class BalanceError(TrendTradeError, ValueError):
    pass


class ConfigurationError(TrendTradeError, ValueError):
    pass


class TrainingError(TrendTradeError, RuntimeError):
    """Training diverged (non-finite loss or gradient)."""


class LeakageError(TrendTradeError, ValueError):
    """Backtest days overlap the model's training range."""


class UndefinedMetricError(TrendTradeError, ArithmeticError):
    pass


class ArtifactError(TrendTradeError, ValueError):
    """Corrupt or mismatched model/dataset artifact."""
