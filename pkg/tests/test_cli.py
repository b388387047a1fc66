import csv
import json

import pytest

from hatdfed import cli, reporting
from hatdfed.energy import ENERGY_CSV_COLUMNS


def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_header_contract():
    # documented column orders; changing any of these is a breaking change
    assert reporting.ROUNDS_CSV_COLUMNS == ["round", "server", "accuracy", "train_size", "connected", "e_dt_J",
                                            "e_cp_J", "in_neighbors", "round_total_J"]
    assert ENERGY_CSV_COLUMNS == ["kind", "round", "server", "src", "dst", "e_dt_J", "e_cp_J", "e_mt_J",
                                  "tot_cost_MJ", "mt_cost_MJ"]
    assert reporting.AGG_CSV_COLUMNS == ["round", "receiver", "sender", "l", "q"]
    assert reporting.REGRET_CSV_COLUMNS == ["round", "selected", "utility", "oracle_utility", "cum_utility",
                                            "cum_oracle", "regret"]
    assert reporting.BOUND_CSV_COLUMNS == ["R_K", "bound", "ratio"]
    assert reporting.SWEEP_RUNS_COLUMNS == ["parameter", "value", "repeat", "seed", "status", "avg_acc",
                                            "var_acc", "best_acc", "worst_acc", "tot_cost_MJ", "mt_cost_MJ"]
    assert reporting.SWEEP_SUMMARY_COLUMNS == ["parameter", "value", "runs", "avg_acc_mean", "avg_acc_std",
                                               "tot_cost_MJ_mean", "tot_cost_MJ_std", "mt_cost_MJ_mean",
                                               "mt_cost_MJ_std"]


def test_run_writes_files_with_contract_headers(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["run", "--config", "smoke", "--out", str(out), "--debug-agg", "--chart"]) == 0
    assert _header(out / "rounds.csv") == reporting.ROUNDS_CSV_COLUMNS
    assert _header(out / "energy.csv") == ENERGY_CSV_COLUMNS
    assert _header(out / "aggregation.csv") == reporting.AGG_CSV_COLUMNS
    summary = json.loads((out / "summary.json").read_text())
    assert summary["strategy"] == "hat_dfed" and summary["rounds"] == 5
    assert (out / "chart.svg").read_text().startswith("<svg")


def test_run_table1_preset_three_files(tmp_path, monkeypatch):
    # the full preset is exercised by the acceptance suite; shorten the run here
    monkeypatch.setitem(cli.PRESETS, "table1-desk", cli.PRESETS["table1-desk"].replace(n_rounds=3))
    out = tmp_path / "t1"
    assert cli.main(["run", "--config", "table1-desk", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["energy.csv", "rounds.csv", "summary.json"]


def test_run_seed_flag(tmp_path):
    cli.main(["run", "--config", "smoke", "--out", str(tmp_path / "a"), "--seed", "4"])
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["seed"] == 4
    assert cli.main(["run", "--config", "smoke", "--out", str(tmp_path / "b"), "--seed", "-1"]) == 1


def test_run_missing_config(tmp_path, capsys):
    missing = tmp_path / "absent.json"
    assert cli.main(["run", "--config", str(missing), "--out", str(tmp_path / "o")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_run_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "alpah": 0.5\n}\n')
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "alpah" in err and ":2:" in err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        cli.main(["run"])
    assert exc.value.code == 1


def test_validate(tmp_path):
    assert cli.main(["validate", "smoke", "table1-desk"]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text('{"gamma": 0}')
    assert cli.main(["validate", str(bad)]) == 1


def _sweep(tmp_path, values, repeats=1, parameter="gamma"):
    spec = tmp_path / "sweep.json"
    spec.write_text(json.dumps({"parameter": parameter, "values": values, "repeats": repeats,
                                "base_config": "smoke", "strategy": "rnd"}))
    return spec


def test_sweep_rows_and_std(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["sweep", str(_sweep(tmp_path, [0.2, 0.4], repeats=2)), "--out", str(out)]) == 0
    runs = _rows(out / "sweep_runs.csv")
    summary = _rows(out / "sweep_summary.csv")
    assert len(runs) == 4 and len(summary) == 2
    assert {r["seed"] for r in runs} == {"0", "1"}
    assert (out / "gamma=0.2" / "rep1" / "rounds.csv").exists()
    out1 = tmp_path / "s1"
    assert cli.main(["sweep", str(_sweep(tmp_path, [0.3])), "--out", str(out1)]) == 0
    row = _rows(out1 / "sweep_summary.csv")[0]
    assert float(row["avg_acc_std"]) == 0.0 and row["runs"] == "1"


def test_sweep_validation(tmp_path):
    assert cli.main(["sweep", str(_sweep(tmp_path, [])), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["sweep", str(_sweep(tmp_path, [1.5])), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["sweep", str(_sweep(tmp_path, [0.3], parameter="lr")), "--out", str(tmp_path / "o")]) == 1


def test_sweep_partial_and_total_failure(tmp_path, monkeypatch):
    real = cli.run_simulation

    def flaky(cfg, strategy):
        if cfg.gamma > 0.3:
            raise RuntimeError("injected")
        return real(cfg, strategy)

    monkeypatch.setattr(cli, "run_simulation", flaky)
    out = tmp_path / "p"
    assert cli.main(["sweep", str(_sweep(tmp_path, [0.2, 0.5])), "--out", str(out)]) == 3
    runs = _rows(out / "sweep_runs.csv")
    assert runs[0]["status"] == "ok" and runs[1]["status"].startswith("error")
    assert cli.main(["sweep", str(_sweep(tmp_path, [0.5])), "--out", str(tmp_path / "t")]) == 2


def test_bandit_bench_generator(tmp_path, capsys):
    out = tmp_path / "b"
    assert cli.main(["bandit-bench", "--generator", "fixed-gap", "--out", str(out)]) == 0
    rows = _rows(out / "regret.csv")
    assert len(rows) == 1000 and len(rows[0]["selected"].split(";")) == 6
    bound = _rows(out / "bound.csv")[0]
    assert float(bound["bound"]) == pytest.approx(601.76, abs=0.01)
    assert float(bound["ratio"]) == pytest.approx(float(bound["R_K"]) / float(bound["bound"]))
    assert "R_K=" in capsys.readouterr().out


def test_bandit_bench_validation(tmp_path, capsys):
    assert cli.main(["bandit-bench", "--servers", "3", "--m", "7", "--out", str(tmp_path / "o")]) == 1
    table = tmp_path / "u.txt"
    table.write_text("0.1 0.2 0.3\n0.4 x 0.6\n")
    assert cli.main(["bandit-bench", "--table", str(table), "--m", "2", "--out", str(tmp_path / "o")]) == 1
    assert "row 2, col 2" in capsys.readouterr().err
    table.write_text("0.1 0.2 0.3\n0.4 0.5 0.6\n")
    assert cli.main(["bandit-bench", "--table", str(table), "--m", "2", "--out", str(tmp_path / "o")]) == 0
    assert len(_rows(tmp_path / "o" / "regret.csv")) == 2


def test_report_rerenders(tmp_path):
    out = tmp_path / "r"
    cli.main(["run", "--config", "smoke", "--strategy", "ring", "--out", str(out)])
    assert cli.main(["report", str(out)]) == 0
    svg = (out / "chart.svg").read_text()
    assert svg.count("<polyline") == 2
    assert cli.main(["report", str(tmp_path / "nothing")]) == 1
