"""Panel loading, splitting, artifact persistence and the CSV writers."""

import json

import numpy as np
import pytest

from covcast._linalg import vech, vech_labels
from covcast.data_io import (
    CovPath,
    ReturnsPanel,
    load_artifact,
    load_returns_csv,
    persist_artifact,
    registered_schemas,
    split_sample,
    write_curve_csv,
    write_returns_csv,
    write_table_csv,
    write_vech_csv,
)
from covcast.errors import DataError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadReturnsCsv:
    def test_round_trip_is_exact(self, tmp_path, tiny_panel):
        path = tmp_path / "r.csv"
        write_returns_csv(tiny_panel, path)
        back = load_returns_csv(path)
        assert back.dates == tiny_panel.dates
        assert back.assets == tiny_panel.assets
        assert np.array_equal(back.values, tiny_panel.values)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_returns_csv(tmp_path / "absent.csv")

    def test_header_must_start_with_date(self, tmp_path):
        path = _write(tmp_path / "r.csv", "time,a\n1,0.5\n2,0.5\n")
        with pytest.raises(DataError, match="'date'"):
            load_returns_csv(path)

    def test_ragged_row_reports_line(self, tmp_path):
        path = _write(tmp_path / "r.csv", "date,a,b\nd1,1.0,2.0\nd2,1.0\n")
        with pytest.raises(DataError, match="row 3"):
            load_returns_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = _write(tmp_path / "r.csv", "date,a\nd1,1.0\nd2,oops\n")
        with pytest.raises(DataError, match="non-numeric"):
            load_returns_csv(path)

    def test_non_finite_cell(self, tmp_path):
        path = _write(tmp_path / "r.csv", "date,a\nd1,1.0\nd2,inf\n")
        with pytest.raises(DataError, match="non-finite"):
            load_returns_csv(path)

    def test_single_row_rejected(self, tmp_path):
        path = _write(tmp_path / "r.csv", "date,a\nd1,1.0\n")
        with pytest.raises(DataError, match="at least 2"):
            load_returns_csv(path)

    def test_blank_line_rejected(self, tmp_path):
        path = _write(tmp_path / "r.csv", "date,a\nd1,1.0\n\nd2,2.0\n")
        with pytest.raises(DataError, match="row 3 has 0 fields"):
            load_returns_csv(path)


class TestReturnsPanel:
    def test_dates_must_increase(self):
        with pytest.raises(DataError, match="strictly increasing"):
            ReturnsPanel(dates=["d2", "d1"], assets=["a"], values=[[1.0], [2.0]])

    def test_shape_checks(self):
        with pytest.raises(DataError, match="asset list"):
            ReturnsPanel(dates=["d1"], assets=["a", "b"], values=[[1.0]])
        with pytest.raises(DataError, match="date index"):
            ReturnsPanel(dates=["d1", "d2"], assets=["a"], values=[[1.0]])

    def test_non_finite_rejected(self):
        with pytest.raises(DataError, match="non-finite"):
            ReturnsPanel(dates=["d1", "d2"], assets=["a"], values=[[1.0], [np.nan]])


class TestSplitSample:
    def test_floor_boundary(self, tiny_panel):
        split = split_sample(tiny_panel, 0.75)
        assert split.t_star == 30
        assert split.in_sample.n_obs == 30
        assert split.out_sample.n_obs == 10
        assert split.in_sample.dates[-1] == tiny_panel.dates[29]
        assert split.out_sample.dates[0] == tiny_panel.dates[30]

    def test_ratio_bounds(self, tiny_panel):
        for ratio in (0.0, 1.0, -0.2, 1.4):
            with pytest.raises(DataError):
                split_sample(tiny_panel, ratio)

    def test_degenerate_windows(self):
        panel = ReturnsPanel(dates=["d1", "d2", "d3"], assets=["a"], values=[[1.0], [2.0], [3.0]])
        with pytest.raises(DataError, match="too short"):
            split_sample(panel, 0.4)


class TestArtifacts:
    def test_registry_contents(self):
        schemas = registered_schemas()
        for name in ("cov_path", "fmsv", "dcc", "sbekk", "fgarch", "static_cov",
                     "study_report", "eval_report"):
            assert name in schemas

    def test_cov_path_round_trip(self, tmp_path):
        gen = np.random.default_rng(3)
        base = gen.normal(size=(4, 3, 3))
        path = CovPath(dates=["d1", "d2", "d3", "d4"], assets=["a", "b", "c"], matrices=base)
        file = tmp_path / "path.json"
        persist_artifact(path, file)
        back = load_artifact(file)
        assert isinstance(back, CovPath)
        assert back.dates == path.dates
        assert np.array_equal(back.matrices, path.matrices)

    def test_persist_is_deterministic(self, tmp_path):
        mats = np.eye(2)[None, :, :]
        path = CovPath(dates=["d1"], assets=["a", "b"], matrices=mats)
        f1, f2 = tmp_path / "x1.json", tmp_path / "x2.json"
        persist_artifact(path, f1)
        persist_artifact(path, f2)
        assert f1.read_bytes() == f2.read_bytes()

    def test_matrices_are_symmetrized(self):
        mats = np.array([[[1.0, 2.0], [0.0, 1.0]]])
        path = CovPath(dates=["d1"], assets=["a", "b"], matrices=mats)
        assert np.allclose(path.matrices[0], [[1.0, 1.0], [1.0, 1.0]])

    def test_unknown_schema_rejected(self, tmp_path):
        file = tmp_path / "bad.json"
        file.write_text(json.dumps({"schema": "mystery", "version": 1, "payload": {}}))
        with pytest.raises(DataError, match="unknown artifact schema"):
            load_artifact(file)

    def test_version_mismatch_rejected(self, tmp_path):
        file = tmp_path / "bad.json"
        file.write_text(json.dumps({"schema": "cov_path", "version": 99, "payload": {}}))
        with pytest.raises(DataError, match="version mismatch"):
            load_artifact(file)

    def test_invalid_json_rejected(self, tmp_path):
        file = tmp_path / "bad.json"
        file.write_text("{not json")
        with pytest.raises(DataError, match="not a valid artifact"):
            load_artifact(file)

    def test_unregistered_object_rejected(self, tmp_path):
        with pytest.raises(DataError, match="not a registered artifact"):
            persist_artifact(object(), tmp_path / "x.json")


class TestCsvWriters:
    def test_vech_csv_layout(self, tmp_path):
        labels = vech_labels(["a", "b"])
        assert labels == ["a|a", "b|a", "b|b"]
        mats = np.array([[[1.0, 2.0], [2.0, 3.0]]])
        file = tmp_path / "v.csv"
        write_vech_csv(file, ["d1"], labels, mats)
        lines = file.read_text().strip().splitlines()
        assert lines[0] == "date,a|a,b|a,b|b"
        assert lines[1] == "d1,1.0,2.0,3.0"

    def test_vech_matches_linalg_vech(self):
        gen = np.random.default_rng(5)
        a = gen.normal(size=(4, 4))
        a = a + a.T
        i, j = np.tril_indices(4)
        assert np.array_equal(vech(a), a[i, j])

    def test_curve_csv(self, tmp_path):
        file = tmp_path / "c.csv"
        write_curve_csv(file, [(0.1, 2.0), (0.2, 1.5)])
        lines = file.read_text().strip().splitlines()
        assert lines[0] == "lambda,score"
        assert lines[1] == "0.1,2.0"

    def test_table_csv_formats_floats(self, tmp_path):
        file = tmp_path / "t.csv"
        write_table_csv(file, ["model", "score"], [["m1", 0.123456789], ["m2", float("nan")]])
        lines = file.read_text().strip().splitlines()
        assert lines[1] == "m1,0.123457"
        assert lines[2] == "m2,"
