import csv
import json

import pytest

from trendtrade.cli import EXIT_ARTIFACT, EXIT_DATA, EXIT_INPUT, EXIT_OK, load_config, main

FAST = ["--set", "max_epochs=3", "--set", "init_scheme=he", "--set", "horizon=5"]
SPLIT = ["--set", "val_start=2015-01-09", "--set", "test_start=2015-01-13"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def run_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    minutes = root / "minutes.csv"
    assert main(["synth", "--regime", "sinusoid", "--days", "8", "--noise", "0.05",
                 "--seed", "1", "--out", str(minutes)]) == EXIT_OK
    assert main(["dataset", "--series", str(minutes), "--out", str(root / "ds"), *FAST, *SPLIT]) == EXIT_OK
    assert main(["train", "--dataset", str(root / "ds"), "--out", str(root / "model"), *FAST]) == EXIT_OK
    assert main(["backtest", "--model", str(root / "model" / "model.bin"), "--series", str(minutes),
                 "--out", str(root / "bt"), "--set", "commissions=0,0.05,0.1", *FAST, *SPLIT]) == EXIT_OK
    return root


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("horizon = 12\ncommission = 0.05\nt_grid = 4, 8\n")
    cfg = load_config(str(p), {"commission": "0.15"})
    assert cfg.horizon == 12 and cfg.commission == 0.15 and cfg.t_grid == (4, 8)
    assert main(["dataset", "--config", str(p), "--set", "bogus=1"]) == EXIT_INPUT
    assert main(["dataset", "--config", str(tmp_path / "nope.cfg")]) == EXIT_INPUT


def test_ingest_screens_sessions(tmp_path, capsys):
    lines = ["date,minute,close"]
    for d in ("2015-01-05", "2015-01-06", "2015-01-07", "2015-01-08"):
        for m in range(570, 960):
            lines.append(f"{d},{m},{100 + (m - 570) * 0.01:.2f}")
    for m in range(570, 780):  # half day
        lines.append(f"2015-01-09,{m},100.0")
    for m in range(570, 960):
        lines.append(f"2015-01-12,{m},100.0")
    data = tmp_path / "in.csv"
    data.write_text("\n".join(lines) + "\n")
    cal = tmp_path / "cal.txt"
    cal.write_text("# holidays\n2015-01-12\n")
    out = tmp_path / "out"
    assert main(["ingest", "--data", str(data), "--calendar", str(cal), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "ingest_summary.json").read_text())
    assert summary["days_kept"] == 4
    assert summary["dropped"] == {"2015-01-09": "partial session", "2015-01-12": "calendar exclusion"}
    assert len(rows(out / "series.csv")) == 1 + 4 * 390
    assert "partial session" in capsys.readouterr().out


def test_ingest_malformed_rows(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text("date,minute,close\n2015-01-05,570,100\n2015-01-05,abc,100\n2015-13-01,571,1\n")
    assert main(["ingest", "--data", str(data), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert ":3:" in err and ":4:" in err


def test_missing_inputs(tmp_path, capsys):
    assert main(["ingest", "--data", str(tmp_path / "absent.csv")]) == EXIT_INPUT
    missing = tmp_path / "no_dataset"
    assert main(["train", "--dataset", str(missing)]) == EXIT_INPUT
    assert str(missing) in capsys.readouterr().err


def test_empty_split_exits_3(tmp_path, capsys):
    minutes = tmp_path / "m.csv"
    assert main(["synth", "--days", "3", "--out", str(minutes)]) == EXIT_OK
    code = main(["dataset", "--series", str(minutes), "--out", str(tmp_path / "ds"),
                 "--set", "val_start=2016-01-04", "--set", "test_start=2016-02-01"])
    assert code == EXIT_DATA
    err = capsys.readouterr().err
    assert "validation" in err and "test" in err


def test_pipeline_outputs(run_dirs):
    manifest = json.loads((run_dirs / "ds" / "manifest.json").read_text())
    assert manifest["horizon"] == 5 and manifest["train_end"] == "2015-01-08"
    assert manifest["counts"]["test"] == 2 * (390 - 63 - 5)
    hist = rows(run_dirs / "model" / "history.csv")
    assert hist[0] == ["epoch", "lr", "train_loss", "val_error"] and len(hist) == 4
    report = json.loads((run_dirs / "bt" / "report.json").read_text())
    assert report["instrument"] == "SYN"
    sweep = rows(run_dirs / "bt" / "commission_sweep.csv")[1:]
    assert [float(r[1]) for r in sweep] == [0.0, 0.05, 0.1]
    gains = [float(r[2]) for r in sweep]
    assert all(b <= a for a, b in zip(gains, gains[1:]))


def test_train_is_deterministic(run_dirs, tmp_path):
    assert main(["train", "--dataset", str(run_dirs / "ds"), "--out", str(tmp_path), *FAST]) == EXIT_OK
    assert (tmp_path / "model.bin").read_bytes() == (run_dirs / "model" / "model.bin").read_bytes()


def test_backtest_horizon_mismatch(run_dirs, tmp_path):
    code = main(["backtest", "--model", str(run_dirs / "model" / "model.bin"),
                 "--series", str(run_dirs / "minutes.csv"), "--out", str(tmp_path),
                 *FAST, "--set", "horizon=6", *SPLIT])
    assert code == EXIT_ARTIFACT


def test_backtest_corrupt_model(run_dirs, tmp_path):
    blob = bytearray((run_dirs / "model" / "model.bin").read_bytes())
    blob[100] ^= 0xFF
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(blob))
    code = main(["backtest", "--model", str(bad), "--series", str(run_dirs / "minutes.csv"),
                 "--out", str(tmp_path / "o"), *FAST, *SPLIT])
    assert code == EXIT_ARTIFACT


def test_report_aggregates_runs(run_dirs, tmp_path):
    assert main(["report", str(run_dirs / "bt"), str(run_dirs / "bt"), "--out", str(tmp_path)]) == EXIT_OK
    table = rows(tmp_path / "table2.csv")
    assert table[0] == ["instrument", "active_gain", "baseline", "sigma_ann"] and len(table) == 3
    sweep = rows(tmp_path / "commission_sweep.csv")
    assert sweep[0] == ["instrument", "commission", "gain", "sharpe"] and len(sweep) == 7


def test_gridsearch_two_by_two(run_dirs, tmp_path):
    code = main(["gridsearch", "--series", str(run_dirs / "minutes.csv"), "--out", str(tmp_path),
                 "--set", "max_epochs=1", "--set", "init_scheme=he",
                 "--set", "t_grid=2,5", "--set", "d_grid=1,2", *SPLIT])
    assert code == EXIT_OK
    grid = rows(tmp_path / "grid.csv")
    assert grid[0] == ["T", "D", "val_gain", "selected"] and len(grid) == 5
    assert sum(int(r[3]) for r in grid[1:]) == 1


def test_separable_data_learns(tmp_path):
    minutes = tmp_path / "m.csv"
    assert main(["synth", "--regime", "sinusoid", "--days", "8", "--out", str(minutes)]) == EXIT_OK
    assert main(["dataset", "--series", str(minutes), "--out", str(tmp_path / "ds"),
                 "--set", "horizon=5", *SPLIT]) == EXIT_OK
    assert main(["train", "--dataset", str(tmp_path / "ds"), "--out", str(tmp_path / "m"),
                 "--set", "init_scheme=he", "--set", "max_epochs=30"]) == EXIT_OK
    summary = json.loads((tmp_path / "m" / "train_summary.json").read_text())
    assert summary["best_val_error"] <= 0.05
