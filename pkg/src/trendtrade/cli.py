"""Command-line workbench: synth, ingest, dataset, train, backtest, gridsearch, report.

Settings come from an optional ``key = value`` config file (``--config``);
``--set key=value`` and the dedicated flags override it. Exit codes: 0 ok,
2 input error, 3 data/split error, 4 artifact mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date
from pathlib import Path

from . import backtest as bt
from . import dataset as ds
from . import market_data as md
from .errors import (
    ArtifactError,
    BalanceError,
    ConfigurationError,
    LeakageError,
    ParseError,
    ShapeError,
    ValidationError,
)
from .neuralnet import TrainConfig, load_network, save_network
from .neuralnet import train as fit
from .strategy import ClosurePolicy, SafetyConfig, StrategyConfig, default_grid

log = logging.getLogger("trendtrade")

EXIT_OK, EXIT_INPUT, EXIT_DATA, EXIT_ARTIFACT = 0, 2, 3, 4


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "adaptive") else float(text)


def _opt_str(text: str) -> str | None:
    return text.strip() or None


@dataclass
class RunConfig:
    instrument: str = "SYN"
    data: str | None = None
    calendar: str | None = None
    val_start: date | None = None
    test_start: date | None = None
    out: str = "run"
    seed: int = 0
    # model / training
    horizon: int = 28
    batch_size: int = 100
    lr_initial: float = 1e-3
    lr_decay_factor: float = 5.0
    lr_floor: float = 1e-7
    dropout_rate: float = 0.5
    init_std: float = 0.01
    init_scheme: str = "gaussian"
    patience: int = 3
    early_stop_patience: int = 5
    max_epochs: int = 100
    # strategy
    lookback_days: int = 5
    commission: float = 0.1
    closure: str = "on_flip"
    threshold_grid: tuple[float, ...] = field(default_factory=default_grid)
    fixed_threshold: float | None = None
    safety_window: int = 10
    safety_trigger: int = 4
    safety_length: int = 120
    min_qualify: int = 5
    volatility_basis: str = "asset"
    # experiments
    t_grid: tuple[int, ...] = (1, 4, 8, 12, 16, 20, 24, 28)
    d_grid: tuple[int, ...] = (1, 5, 10, 50)
    commissions: tuple[float, ...] = (0.0, 0.05, 0.1, 0.15)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, lr_initial=self.lr_initial,
            lr_decay_factor=self.lr_decay_factor, lr_floor=self.lr_floor,
            dropout_rate=self.dropout_rate, init_std=self.init_std,
            init_scheme=self.init_scheme, patience=self.patience,
            early_stop_patience=self.early_stop_patience, max_epochs=self.max_epochs,
            seed=self.seed)

    def strategy_config(self) -> StrategyConfig:
        return StrategyConfig(
            horizon=self.horizon, lookback_days=self.lookback_days,
            threshold_grid=self.threshold_grid, commission=self.commission,
            safety=SafetyConfig(self.safety_window, self.safety_trigger, self.safety_length),
            closure=ClosurePolicy(self.closure), min_qualify=self.min_qualify,
            fixed_threshold=self.fixed_threshold)

    def split_dates(self) -> tuple[date, date]:
        if self.val_start is None or self.test_start is None:
            raise CommandError(EXIT_INPUT, "val_start and test_start must be configured")
        if not self.val_start < self.test_start:
            raise CommandError(EXIT_INPUT, "val_start must precede test_start")
        return self.val_start, self.test_start


_PARSERS = {
    "val_start": lambda s: date.fromisoformat(s.strip()) if s.strip() else None,
    "test_start": lambda s: date.fromisoformat(s.strip()) if s.strip() else None,
    "data": _opt_str,
    "calendar": _opt_str,
    "threshold_grid": _floats,
    "fixed_threshold": _opt_float,
    "t_grid": _ints,
    "d_grid": _ints,
    "commissions": _floats,
}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    key = key.strip().lower()
    if key not in _FIELD_TYPES:
        raise CommandError(EXIT_INPUT, f"unknown config key {key!r}")
    if key in _PARSERS:
        parse = _PARSERS[key]
    else:
        parse = {"int": int, "float": float, "str": str}[_FIELD_TYPES[key]]
    try:
        return key, parse(value.strip())
    except ValueError as exc:
        raise CommandError(EXIT_INPUT, f"bad value for {key}: {exc}") from exc


def load_config(path: str | None, overrides: dict[str, str] | None = None) -> RunConfig:
    raw: dict[str, str] = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise CommandError(EXIT_INPUT, f"config file not found: {p}")
        text = p.read_text()
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        if not text.lstrip().startswith("["):
            text = "[run]\n" + text
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise CommandError(EXIT_INPUT, f"{p}: {exc}") from exc
        for section in parser.sections():
            raw.update(parser[section])
    raw.update(overrides or {})
    cfg = RunConfig()
    values = dict(_coerce(k, v) for k, v in raw.items())
    try:
        cfg = replace(cfg, **values)
        cfg.train_config()
        cfg.strategy_config()
    except (ConfigurationError, ValueError) as exc:
        raise CommandError(EXIT_INPUT, f"invalid configuration: {exc}") from exc
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = ["[run]"]
    for key, value in asdict(cfg).items():
        if isinstance(value, (tuple, list)):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif value is None:
            value = ""
        elif isinstance(value, date):
            value = value.isoformat()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# -- helpers --------------------------------------------------------------------

def _require_file(path, what: str) -> Path:
    if path is None:
        raise CommandError(EXIT_INPUT, f"no {what} given")
    p = Path(path)
    if not p.exists():
        raise CommandError(EXIT_INPUT, f"{what} not found: {p}")
    return p


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_days(path) -> list[md.TradingDay]:
    """Read a series CSV and keep complete sessions (no calendar)."""
    p = _require_file(path, "series file")
    try:
        series = md.load_minute_series(p)
    except (ParseError, ValidationError) as exc:
        raise CommandError(EXIT_INPUT, f"{p}: {exc}") from exc
    return md.filter_sessions(series)


def _split_days(days, val_start: date, test_start: date):
    train = [d for d in days if d.date < val_start]
    val = [d for d in days if val_start <= d.date < test_start]
    test = [d for d in days if d.date >= test_start]
    empty = [name for name, part in (("train", train), ("validation", val), ("test", test)) if not part]
    if empty:
        raise CommandError(EXIT_DATA, f"empty split(s): {', '.join(empty)}")
    return train, val, test


# -- commands -------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    spec = md.SyntheticSpec(
        regime=args.regime, n_days=args.days, start=date.fromisoformat(args.start),
        base_price=args.base_price, drift=args.drift, vol=args.vol,
        amplitude=args.amplitude, period=args.period, phase=args.phase, noise=args.noise)
    try:
        series = md.generate_synthetic(spec, cfg.seed, cfg.instrument)
    except ValidationError as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from exc
    out = Path(args.out or cfg.out)
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "minutes.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    md.write_minute_series(series, out)
    print(f"wrote {len(series)} days, {series.n_bars} bars to {out}")
    return EXIT_OK


def cmd_ingest(args, cfg: RunConfig) -> int:
    data = _require_file(cfg.data, "data file")
    try:
        series = md.load_minute_series(data, cfg.instrument)
        cal = md.load_calendar(_require_file(cfg.calendar, "calendar file")) if cfg.calendar \
            else md.SessionCalendar()
    except ParseError as exc:
        for line, msg in exc.diagnostics:
            print(f"{data}:{line}: {msg}", file=sys.stderr)
        raise CommandError(EXIT_INPUT, f"{len(exc.diagnostics)} invalid row(s) in input") from exc
    except ValidationError as exc:
        raise CommandError(EXIT_INPUT, f"{data}: {exc}") from exc
    screen = md.screen_sessions(series, cal)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    md.write_trading_days(screen.kept, out / "series.csv", cfg.instrument)
    summary = {
        "instrument": cfg.instrument,
        "source": str(data),
        "days_kept": len(screen.kept),
        "days_dropped": len(screen.dropped),
        "dropped": {d.isoformat(): why for d, why in sorted(screen.dropped.items())},
        "forward_filled_minutes": screen.filled_minutes,
    }
    _write_json(out / "ingest_summary.json", summary)
    print(f"kept {len(screen.kept)} day(s), dropped {len(screen.dropped)}")
    for d, why in sorted(screen.dropped.items()):
        print(f"  dropped {d}: {why}")
    return EXIT_OK


def cmd_dataset(args, cfg: RunConfig) -> int:
    val_start, test_start = cfg.split_dates()
    days = _load_days(args.series or cfg.data)
    try:
        samples = ds.build_dataset(days, cfg.horizon)
        split = ds.split_chronological(samples, val_start, test_start)
        train = ds.balance(split.train, cfg.seed)
        val = ds.balance(split.validation, cfg.seed + 1)
    except (ConfigurationError, BalanceError) as exc:
        raise CommandError(EXIT_DATA, str(exc)) from exc
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ds.write_samples(train, out / "train.csv")
    ds.write_samples(val, out / "validation.csv")
    ds.write_samples(split.test, out / "test.csv")
    manifest = {
        "instrument": cfg.instrument,
        "horizon": cfg.horizon,
        "val_start": val_start.isoformat(),
        "test_start": test_start.isoformat(),
        "train_end": split.boundaries["train"][1].isoformat(),
        "counts": {"train": len(train), "validation": len(val), "test": len(split.test),
                   "train_unbalanced": len(split.train),
                   "validation_unbalanced": len(split.validation)},
        "balance_seed": cfg.seed,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"samples: train {len(train)}, validation {len(val)}, test {len(split.test)}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    root = _require_file(args.dataset, "dataset directory")
    manifest_path = _require_file(root / "manifest.json", "dataset manifest")
    manifest = json.loads(manifest_path.read_text())
    horizon = int(manifest["horizon"])
    try:
        train = ds.read_samples(_require_file(root / "train.csv", "training set"))
        val = ds.read_samples(_require_file(root / "validation.csv", "validation set"))
    except ParseError as exc:
        raise CommandError(EXIT_INPUT, f"{root}: {exc}") from exc
    if not train or not val:
        raise CommandError(EXIT_DATA, "empty split: " + ", ".join(
            n for n, s in (("train", train), ("validation", val)) if not s))
    tx, ty = ds.to_arrays(train)
    vx, vy = ds.to_arrays(val)
    net, history = fit(cfg.train_config(), tx, ty, vx, vy)
    net = replace(net, horizon=horizon, train_end=date.fromisoformat(manifest["train_end"]))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network(net, out / "model.bin")
    history.to_csv(out / "history.csv")
    _write_json(out / "train_summary.json", {
        "horizon": horizon, "best_epoch": history.best_epoch,
        "best_val_error": history.best_val_error, "epochs": len(history.records),
        "stop_reason": history.stop_reason, "train_end": manifest["train_end"]})
    print(f"best validation error {history.best_val_error:.4f} at epoch {history.best_epoch}")
    return EXIT_OK


def _load_model(path):
    p = _require_file(path, "model file")
    try:
        return load_network(p)
    except ArtifactError as exc:
        raise CommandError(EXIT_ARTIFACT, str(exc)) from exc


def cmd_backtest(args, cfg: RunConfig) -> int:
    val_start, test_start = cfg.split_dates()
    net = _load_model(args.model)
    if net.horizon is not None and net.horizon != cfg.horizon:
        raise CommandError(EXIT_ARTIFACT,
                           f"model trained for T={net.horizon}, strategy configured for T={cfg.horizon}")
    days = _load_days(args.series or cfg.data)
    _, val, test = _split_days(days, val_start, test_start)
    try:
        report = bt.run_backtest(net, test, cfg.strategy_config(), history_days=val,
                                 volatility_basis=cfg.volatility_basis, instrument=cfg.instrument)
    except LeakageError as exc:
        raise CommandError(EXIT_DATA, str(exc)) from exc
    out = Path(cfg.out)
    doc = bt.write_report(report, out)
    _write_sweep(out / "commission_sweep.csv", cfg.instrument,
                 bt.commission_sweep(report, cfg.commissions))
    print(f"{cfg.instrument}: cumulative gain {doc['cumulative_gain_pct']:.3f}% over "
          f"{doc['trade_count']} trades; buy-and-hold {doc['baseline_pct']:.3f}%")
    return EXIT_OK


def _write_sweep(path: Path, instrument: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instrument", "commission", "cumulative_gain_pct", "trade_count", "sharpe_annual"])
        for r in rows:
            w.writerow([instrument, repr(r["commission"]), repr(r["cumulative_gain_pct"]),
                        r["trade_count"], "" if r["sharpe_annual"] is None else repr(r["sharpe_annual"])])


def cmd_gridsearch(args, cfg: RunConfig) -> int:
    val_start, test_start = cfg.split_dates()
    days = _load_days(args.series or cfg.data)
    train, val, _ = _split_days(days, val_start, test_start)
    try:
        result = bt.grid_search(train, val, cfg.t_grid, cfg.d_grid, cfg.strategy_config(),
                                cfg.train_config())
    except (ConfigurationError, BalanceError) as exc:
        raise CommandError(EXIT_DATA, str(exc)) from exc
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result.to_csv(out / "grid.csv")
    t, d = result.selected
    print(f"selected T={t}, D={d} (validation gain {result.rows[(t, d)]:.3f}%)")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    out = Path(cfg.out)
    table, sweep = [], []
    for run in args.runs:
        run = _require_file(run, "run directory")
        doc = json.loads(_require_file(run / "report.json", "backtest report").read_text())
        name = doc.get("instrument") or run.name
        table.append([name, repr(doc["cumulative_gain_pct"]), repr(doc["baseline_pct"]),
                      repr(doc["sigma_ann"])])
        sweep_path = run / "commission_sweep.csv"
        if sweep_path.exists():
            with open(sweep_path, newline="") as fh:
                for row in csv.DictReader(fh):
                    sweep.append([name, row["commission"], row["cumulative_gain_pct"],
                                  row["sharpe_annual"]])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "table2.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instrument", "active_gain", "baseline", "sigma_ann"])
        w.writerows(table)
    with open(out / "commission_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instrument", "commission", "gain", "sharpe"])
        w.writerows(sweep)
    print(f"aggregated {len(table)} run(s) into {out}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (file path for synth)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trendtrade", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic minute series")
    p.add_argument("--regime", choices=md.REGIMES, default="random_walk")
    p.add_argument("--days", type=int, default=10)
    p.add_argument("--start", default="2015-01-05")
    p.add_argument("--base-price", type=float, default=100.0)
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--vol", type=float, default=0.0005)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--period", type=float, default=40.0)
    p.add_argument("--phase", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="validate and session-filter a CSV")
    p.add_argument("--data")
    p.add_argument("--calendar")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("dataset", parents=[common], help="build labeled train/validation/test sets")
    p.add_argument("--series", help="series CSV (e.g. ingest output)")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", parents=[common], help="train the trend classifier")
    p.add_argument("--dataset", required=True, help="directory written by the dataset command")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", parents=[common], help="backtest a trained model on the test period")
    p.add_argument("--model", required=True)
    p.add_argument("--series")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("gridsearch", parents=[common], help="cross-validate T and D")
    p.add_argument("--series")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("report", parents=[common], help="aggregate backtest runs")
    p.add_argument("runs", nargs="+", help="backtest output directories")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_INPUT
        k, v = item.split("=", 1)
        overrides[k.strip().lower()] = v
    for key in ("seed", "out", "data", "calendar"):
        value = getattr(args, key, None)
        if value is not None and not (args.command == "synth" and key == "out"):
            overrides[key] = str(value)
    try:
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, BalanceError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
