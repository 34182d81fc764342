import json
import math
from pathlib import Path

import numpy as np
import pytest

from gatedvol.cli import main
from gatedvol.cli_io import (COMMANDS, EXIT_DATA, EXIT_OK, EXIT_USAGE, bundled_config_path, export_report,
                             load_config, load_series, parse_config, render_text, run_command, write_series)
from gatedvol.diagnostics import residual_diagnostics
from gatedvol.errors import ConfigError, EmptyFile, NonmonotoneDates, ParseError
from gatedvol.estimation import FitOptions, fit_qmle
from gatedvol.evaluation import rolling_backtest
from gatedvol.features import ReturnSeries
from gatedvol.models import Family, ModelSpec, ParamVector, filter_variance, simulate_path


def _csv(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --------------------------------------------------------------------------
# configuration

def test_config_defaults():
    cfg = parse_config("")
    assert cfg["window"] == 1500 and cfg["refit_every"] == 21 and cfg["k_cap"] == 200
    assert cfg.model_list == [Family.GARCH]


def test_config_model_sections():
    cfg = parse_config("models = GARCH, RSM\nmodel.RSM.beta_low_start = 0.6\nmodel.RSM.omega_upper = 1\n"
                       "model.GFIGARCH.K = 150\n")
    assert cfg.model_list == [Family.GARCH, Family.RSM]
    m = cfg.model(Family.RSM)
    assert m.starts["beta_low"] == 0.6 and m.bounds["omega"] == (None, 1.0)
    assert cfg.model(Family.GFIGARCH).spec(5000, 200).K == 150


@pytest.mark.parametrize("text, line", [
    ("window = 1500\nbogus = 1\n", 2),
    ("window = 10\n", 1),
    ("\n\nseed = -1\n", 3),
    ("models = NOPE\n", 1),
    ("window = 1500\nwindow = 1600\n", 2),
    ("just a line\n", 1),
    ("model.RSM.zeta_start = 1\n", 1),
])
def test_config_errors_name_line(text, line):
    with pytest.raises(ConfigError, match=f"line {line}"):
        parse_config(text)


def test_config_hash_stable_and_sensitive():
    a = parse_config("window = 1500\nseed = 3\n")
    b = parse_config("seed = 3\nwindow=1500  # same\n")
    assert a.config_hash == b.config_hash
    assert a.with_overrides(seed=4).config_hash != a.config_hash


# --------------------------------------------------------------------------
# series I/O

def test_load_two_prices(tmp_path):
    s = load_series(_csv(tmp_path, "date,price\n2020-01-02,100\n2020-01-03,110\n"))
    assert s.returns.size == 1 and s.returns[0] == pytest.approx(math.log(1.1))
    assert s.returns[0] == pytest.approx(0.09531, abs=1e-5)


def test_load_duplicate_date_names_line(tmp_path):
    p = _csv(tmp_path, "date,price\n2020-01-02,100\n2020-01-03,110\n2020-01-03,111\n")
    with pytest.raises(NonmonotoneDates, match="line 4"):
        load_series(p)


def test_load_missing_volume_is_unavailable(tmp_path):
    s = load_series(_csv(tmp_path, "date,price\n2020-01-02,100\n2020-01-03,101\n2020-01-06,99\n"))
    assert s.volume is None


def test_load_volume_gaps_are_nan(tmp_path):
    s = load_series(_csv(tmp_path, "date,price,volume\n2020-01-02,100,5\n2020-01-03,101,\n2020-01-06,99,7\n"))
    assert np.isnan(s.volume[0]) and s.volume[1] == 7


@pytest.mark.parametrize("body, line", [
    ("date,price\n2020-01-02,100\n2020-01-03,-5\n", 3),
    ("date,price\n2020-01-02,100\n2020-01-03,abc\n", 3),
    ("date,price\n2020-01-02,100\nnot-a-date,101\n", 3),
    ("date,price\n2020-01-02,100\n2020-01-03,101,7\n", 3),
    ("date,close\n2020-01-02,100\n", 1),
])
def test_load_parse_errors(tmp_path, body, line):
    with pytest.raises(ParseError) as ei:
        load_series(_csv(tmp_path, body))
    assert ei.value.line == line


@pytest.mark.parametrize("body", ["", "date,price\n", "# a=1\n"])
def test_load_empty(tmp_path, body):
    with pytest.raises(EmptyFile):
        load_series(_csv(tmp_path, body))


def test_load_return_column_and_metadata(tmp_path):
    s = load_series(_csv(tmp_path, "# family=GARCH\ndate,ret\n2020-01-02,0.01\n2020-01-03,-0.02\n"),
                    return_column="ret", scale=100)
    np.testing.assert_allclose(s.returns, [1.0, -2.0])
    assert s.percent and s.meta["family"] == "GARCH"


def test_write_series_round_trip(tmp_path):
    r = np.random.default_rng(0).normal(0, 0.01, 50)
    s = ReturnSeries(np.datetime64("2021-01-01") + np.arange(50), r,
                     volume=np.arange(50.0))
    p = tmp_path / "s.csv"
    write_series(p, s, meta={"note": "x"})
    back = load_series(p)
    np.testing.assert_allclose(back.returns, r, rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(back.dates, s.dates)
    np.testing.assert_array_equal(back.volume, s.volume)
    assert back.meta["note"] == "x"


# --------------------------------------------------------------------------
# export

@pytest.fixture(scope="module")
def small_reports():
    spec = ModelSpec(Family.GARCH)
    sim = simulate_path(spec, ParamVector(omega=0.05, alpha=0.08, beta=0.9), 900, seed=2)
    fit = fit_qmle(spec, sim.series, opts=FitOptions(n_starts=1))
    bt = rolling_backtest([spec], sim.series, window=700, refit_every=100)
    vp, _ = filter_variance(spec, fit.params, sim.series)
    return fit, bt, residual_diagnostics(vp)


def test_export_single_model_has_empty_pairwise(tmp_path, small_reports):
    _, bt, _ = small_reports
    p = export_report(bt, "json", tmp_path / "bt.json")
    d = json.loads(p.read_text())
    assert d["pairwise"] == []


def test_export_json_round_trip(tmp_path, small_reports):
    fit, bt, diag = small_reports
    d = json.loads(export_report(bt, "json", tmp_path / "bt.json").read_text())
    assert d["models"] == json.loads(json.dumps(bt.to_dict()))["models"]
    f = json.loads(export_report(fit, "json", tmp_path / "fit.json").read_text())
    assert f["params"]["beta"] == fit.params.beta
    assert f["loglik"] == fit.loglik
    g = json.loads(export_report(diag, "json", tmp_path / "diag.json").read_text())
    np.testing.assert_array_equal(g["acf_z"], diag.acf_z)


def test_export_csv_and_text(tmp_path, small_reports):
    _, bt, _ = small_reports
    rec = bt.forecasts["GARCH"]
    export_report(rec, "csv", tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].split(",")[0] == "date" and len(lines) == 1 + len(rec)
    assert float(lines[1].split(",")[1]) == rec.h_hat[0]
    txt = export_report(bt, "text", tmp_path / "bt.txt").read_text()
    assert "qlike" in txt.splitlines()[0]


def test_render_text_widths():
    out = render_text(["a", "long_column"], [[1.5, "x"], ["wide cell value", 2]])
    rows = out.splitlines()
    assert rows[1].split("  ") == ["-" * len("wide cell value"), "-" * len("long_column")]
    assert rows[3].index("wide cell value") == 0
    assert rows[2].index("1.5") == len("wide cell value") - 3
    assert all(len(r) <= len(rows[1]) for r in rows)


def test_export_rejects_format(tmp_path, small_reports):
    with pytest.raises(ValueError):
        export_report(small_reports[1], "xml", tmp_path / "x")


# --------------------------------------------------------------------------
# commands

@pytest.fixture(scope="module")
def bundled_runs(tmp_path_factory):
    cfg = load_config(bundled_config_path())
    out = {}
    for rep in ("a", "b"):
        for cmd in COMMANDS:
            d = tmp_path_factory.mktemp(f"{cmd}_{rep}")
            out[(cmd, rep)] = (d, *run_command(cfg, cmd, d))
    return out


@pytest.mark.parametrize("cmd", COMMANDS)
def test_command_succeeds_on_bundled_data(cmd, bundled_runs):
    d, code, artifacts = bundled_runs[(cmd, "a")]
    assert code == EXIT_OK
    man = json.loads((d / "manifest.json").read_text())
    assert man["exit_code"] == 0 and not man["partial"] and man["command"] == cmd
    assert {a["file"] for a in man["artifacts"]} == {p.name for p in artifacts}
    assert all(len(a["sha256"]) == 64 for a in man["artifacts"])
    for p in artifacts:
        head = p.read_text().splitlines()[0]
        if p.suffix == ".csv":
            assert head == f"# config_hash={man['config_hash']}"
        else:
            assert json.loads(p.read_text())["config_hash"] == man["config_hash"]


@pytest.mark.parametrize("cmd", COMMANDS)
def test_command_deterministic(cmd, bundled_runs):
    da, _, arts = bundled_runs[(cmd, "a")]
    db, _, _ = bundled_runs[(cmd, "b")]
    for p in arts:
        assert p.read_bytes() == (db / p.name).read_bytes(), p.name


def test_expected_artifacts(bundled_runs):
    names = {cmd: sorted(p.name for p in bundled_runs[(cmd, "a")][2]) for cmd in COMMANDS}
    assert names["fit"] == ["fit_GARCH.json", "fit_RSM.json"]
    assert names["forecast"] == ["forecast_GARCH.csv", "forecast_RSM.csv"]
    assert names["backtest"] == ["backtest.json", "losses_GARCH.csv", "losses_RSM.csv"]
    assert "simulated.csv" in names["simulate"]
    assert {"diagnostics.json", "surface.csv"} <= set(names["diagnose"])


def test_simulate_then_fit_recovers(tmp_path, bundled_runs):
    d = bundled_runs[("simulate", "a")][0]
    s = load_series(d / "simulated.csv", scale=100)
    assert s.meta["family"] == "GARCH" or "omega" in json.dumps(s.meta)
    cfg = parse_config(f"data.path = {d / 'simulated.csv'}\ndata.scale = 100\nsimulate.T = 3000\n")
    code, arts = run_command(cfg, "fit", tmp_path)
    assert code == EXIT_OK
    fit = json.loads(arts[0].read_text())
    assert abs(fit["params"]["beta"] - 0.9) < 0.05


def test_missing_data_file_exit_code(tmp_path):
    cfg = parse_config(f"data.path = {tmp_path / 'none.csv'}\n")
    code, _ = run_command(cfg, "fit", tmp_path / "out")
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert code == EXIT_DATA and man["partial"] and man["errors"]


def test_cli_main_usage_errors(tmp_path, capsys):
    assert main(["nonsense"]) == EXIT_USAGE
    bad = tmp_path / "bad.cfg"
    bad.write_text("window = 5\n")
    assert main(["fit", "--config", str(bad)]) == EXIT_USAGE
    assert "line 1" in capsys.readouterr().err
    assert main(["fit", "--seed", "-2", "--out", str(tmp_path)]) == EXIT_USAGE


def test_cli_main_runs(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--seed", "5", "--model", "GARCH"]) == EXIT_OK
    printed = capsys.readouterr().out.split()
    assert any(Path(p).name == "simulated.csv" for p in printed)
