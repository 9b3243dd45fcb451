"""End-to-end command-line tests: exit codes, config handling, output files."""

import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from covcast.cli import main
from covcast.data_io import load_artifact, write_returns_csv
from covcast.simulate import gen_dgp1


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def returns_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    panel = gen_dgp1(3, 140, seed=21).to_panel()
    path = str(tmp / "returns.csv")
    write_returns_csv(panel, path)
    return path


class TestBasics:
    def test_version(self, runner):
        got = runner.invoke(main, ["--version"])
        assert got.exit_code == 0

    def test_help_lists_commands(self, runner):
        got = runner.invoke(main, ["--help"])
        assert got.exit_code == 0
        for cmd in ("simulate", "benchmark", "backtest", "fit", "forecast",
                    "report", "serve"):
            assert cmd in got.output

    def test_serve_help(self, runner):
        got = runner.invoke(main, ["serve", "--help"])
        assert got.exit_code == 0
        assert "--port" in got.output


class TestSimulateCommand:
    def test_success(self, runner, tmp_path):
        out = str(tmp_path / "sims")
        got = runner.invoke(main, ["simulate", "--dgp", "dgp1", "--p", "3",
                                   "--t", "30", "--batches", "2", "--out-dir", out])
        assert got.exit_code == 0
        assert "manifest:" in got.output
        manifest = json.loads(open(os.path.join(out, "manifest.json")).read())
        assert manifest["batches"] == 2

    def test_missing_field_exits_2(self, runner):
        got = runner.invoke(main, ["simulate", "--dgp", "dgp1", "--p", "3", "--t", "30"])
        assert got.exit_code == 2
        assert "out_dir" in got.stderr

    def test_unknown_dgp_exits_2(self, runner, tmp_path):
        got = runner.invoke(main, ["simulate", "--dgp", "dgp9", "--p", "3",
                                   "--t", "30", "--out-dir", str(tmp_path / "x")])
        assert got.exit_code == 2

    def test_config_file_with_flag_precedence(self, runner, tmp_path):
        config = {"dgp": "dgp1", "p": 4, "t": 25, "batches": 1,
                  "out_dir": str(tmp_path / "from_config")}
        cfg_path = str(tmp_path / "cfg.json")
        json.dump(config, open(cfg_path, "w"))
        got = runner.invoke(main, ["simulate", "--config", cfg_path, "--p", "2"])
        assert got.exit_code == 0
        manifest = json.loads(open(os.path.join(config["out_dir"], "manifest.json")).read())
        assert manifest["p"] == 2 and manifest["t"] == 25

    def test_config_errors(self, runner, tmp_path):
        got = runner.invoke(main, ["simulate", "--config", str(tmp_path / "none.json")])
        assert got.exit_code == 2 and "not found" in got.stderr

        bad = str(tmp_path / "bad.json")
        open(bad, "w").write("{broken")
        got = runner.invoke(main, ["simulate", "--config", bad])
        assert got.exit_code == 2 and "invalid JSON" in got.stderr

        arr = str(tmp_path / "arr.json")
        open(arr, "w").write("[1, 2]")
        got = runner.invoke(main, ["simulate", "--config", arr])
        assert got.exit_code == 2 and "JSON object" in got.stderr


class TestFitForecastCommands:
    def test_fit_forecast_report_chain(self, runner, returns_csv, tmp_path):
        fit_path = str(tmp_path / "sbekk.json")
        got = runner.invoke(main, ["fit", "--returns-csv", returns_csv,
                                   "--model", "sbekk", "--out-path", fit_path])
        assert got.exit_code == 0
        assert "fitted sbekk" in got.output

        fc_path = str(tmp_path / "fc.json")
        got = runner.invoke(main, ["forecast", "--model-path", fit_path,
                                   "--returns-csv", returns_csv,
                                   "--horizon", "2", "--out-path", fc_path])
        assert got.exit_code == 0
        assert load_artifact(fc_path).matrices.shape == (2, 3, 3)

        out_dir = str(tmp_path / "tables")
        got = runner.invoke(main, ["report", "--artifact-path", fc_path,
                                   "--out-dir", out_dir])
        assert got.exit_code == 0
        assert os.path.exists(os.path.join(out_dir, "covariances.csv"))

    def test_model_token_with_factors(self, runner, returns_csv, tmp_path):
        got = runner.invoke(main, ["fit", "--returns-csv", returns_csv,
                                   "--model", "fgarch:2",
                                   "--out-path", str(tmp_path / "f.json")])
        assert got.exit_code == 0
        assert "fitted fgarch2" in got.output
        assert "n_factors: 2" in got.output

    def test_bad_model_token_exits_2(self, runner, returns_csv, tmp_path):
        got = runner.invoke(main, ["fit", "--returns-csv", returns_csv,
                                   "--model", "fmsv:x",
                                   "--out-path", str(tmp_path / "f.json")])
        assert got.exit_code == 2
        assert "factor count must be an integer" in got.stderr

    def test_unknown_model_name_exits_2(self, runner, returns_csv, tmp_path):
        got = runner.invoke(main, ["fit", "--returns-csv", returns_csv,
                                   "--model", "garch",
                                   "--out-path", str(tmp_path / "f.json")])
        assert got.exit_code == 2

    def test_missing_returns_exits_3(self, runner, tmp_path):
        got = runner.invoke(main, ["fit", "--returns-csv", str(tmp_path / "no.csv"),
                                   "--model", "sample",
                                   "--out-path", str(tmp_path / "f.json")])
        assert got.exit_code == 3
        assert "not found" in got.stderr

    def test_forecast_dimension_mismatch_exits_3(self, runner, returns_csv, tmp_path):
        fit_path = str(tmp_path / "s.json")
        runner.invoke(main, ["fit", "--returns-csv", returns_csv,
                             "--model", "sample", "--out-path", fit_path])
        narrow = gen_dgp1(2, 40, seed=5).to_panel()
        narrow_csv = str(tmp_path / "narrow.csv")
        write_returns_csv(narrow, narrow_csv)
        got = runner.invoke(main, ["forecast", "--model-path", fit_path,
                                   "--returns-csv", narrow_csv, "--horizon", "1"])
        assert got.exit_code == 3


class TestStudyCommands:
    def test_benchmark_prints_table(self, runner, tmp_path):
        report_path = str(tmp_path / "study.json")
        got = runner.invoke(main, [
            "benchmark", "--dgp", "dgp1", "--p", "3", "--t", "90",
            "--batches", "1", "--model", "sample", "--model", "cov1para",
            "--report-path", report_path])
        assert got.exit_code == 0
        assert "sample" in got.output and "cov1para" in got.output
        assert "runtime sample:" in got.output
        assert load_artifact(report_path).batches == 1

    def test_backtest_prints_portfolios(self, runner, returns_csv, tmp_path):
        tables_dir = str(tmp_path / "tables")
        got = runner.invoke(main, [
            "backtest", "--returns-csv", returns_csv, "--split-ratio", "0.8",
            "--model", "sample", "--model", "cov1para",
            "--tables-dir", tables_dir])
        assert got.exit_code == 0
        assert "gmvp portfolios:" in got.output
        assert "rpp portfolios:" in got.output
        assert "1/p" in got.output
        written = os.listdir(tables_dir)
        assert any(name.endswith(".csv") for name in written)

    def test_fit_artifact_report_exits_2(self, runner, returns_csv, tmp_path):
        fit_path = str(tmp_path / "s.json")
        runner.invoke(main, ["fit", "--returns-csv", returns_csv,
                             "--model", "sample", "--out-path", fit_path])
        got = runner.invoke(main, ["report", "--artifact-path", fit_path,
                                   "--out-dir", str(tmp_path / "t")])
        assert got.exit_code == 2
        assert "no tabular export" in got.stderr


class TestServerMode:
    def test_requests_route_through_http(self, runner, tmp_path, monkeypatch):
        import covcast.cli as cli_mod
        from covcast.service.app import create_app
        from fastapi.testclient import TestClient

        client = TestClient(create_app())

        class _Shim:
            @staticmethod
            def post(url, json=None, timeout=None):
                path = url.split("http://server", 1)[1]
                return client.post(path, json=json)

        monkeypatch.setattr(cli_mod.httpx, "post", _Shim.post)
        out = str(tmp_path / "sims")
        got = runner.invoke(main, ["--server", "http://server", "simulate",
                                   "--dgp", "dgp1", "--p", "2", "--t", "30",
                                   "--batches", "1", "--out-dir", out])
        assert got.exit_code == 0
        assert os.path.exists(os.path.join(out, "manifest.json"))

    def test_server_config_error_maps_to_exit_2(self, runner, tmp_path, monkeypatch):
        import covcast.cli as cli_mod
        from covcast.service.app import create_app
        from fastapi.testclient import TestClient

        client = TestClient(create_app())
        monkeypatch.setattr(
            cli_mod.httpx, "post",
            lambda url, json=None, timeout=None: client.post(
                url.split("http://server", 1)[1], json=json))
        got = runner.invoke(main, ["--server", "http://server", "simulate",
                                   "--dgp", "dgp9", "--p", "2", "--t", "30",
                                   "--out-dir", str(tmp_path / "x")])
        assert got.exit_code == 2
