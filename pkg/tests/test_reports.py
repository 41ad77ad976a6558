import json

import numpy as np
import pandas as pd
import pytest
from openpyxl import load_workbook
from pptx import Presentation
from sqlalchemy import create_engine, inspect, text

from fnlab.archive import archive_run, clean_columns, deduplicate_columns
from fnlab.reports import (
    MANIFEST_NAME,
    RunManifest,
    build_workbook,
    frame_to_csv,
    frame_to_json,
    read_table,
    sibling_path,
    to_frame,
    write_table,
)
from fnlab.slides import create_table_slide


@pytest.fixture
def run_dir(tmp_path):
    """A finished verify run: main table, one secondary table and the manifest."""
    folder = tmp_path / "run"
    main = to_frame([{"scenario": 0, "step": k, "t_stat": 0.1 * k} for k in range(3)])
    extra = to_frame([{"offset": 0.5, "mean_drift": -0.01}, {"offset": 1.0, "mean_drift": -0.04}])
    write_table(main, str(folder / "verify.csv"))
    write_table(extra, str(folder / "verify.perturbation.csv"))
    RunManifest("abc123", "0.1.0", 7, "verify", 2, 1.5, ["verify.csv", "verify.perturbation.csv"]).write(str(folder))
    return folder


class TestTables:
    def test_column_order(self):
        df = to_frame([{"b": 1, "a": 2, "extra": 3}], ["a", "b", "missing"])
        assert list(df.columns) == ["a", "b", "extra"]

    def test_csv_keeps_every_digit(self):
        value = 0.1 + 0.2
        body = frame_to_csv(to_frame([{"x": value}]))
        assert body == "x\n0.30000000000000004\n"
        assert float(body.splitlines()[1]) == value

    def test_json_non_finite(self):
        records = json.loads(frame_to_json(to_frame([{"t": np.nan, "u": np.inf, "n": np.int64(3)}])))
        assert records == [{"t": None, "u": "inf", "n": 3}]

    def test_sibling_path(self):
        assert sibling_path("out/w.csv", "paths") == "out/w.paths.csv"

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            write_table(to_frame([{"x": 1}]), str(tmp_path / "x.pdf"), "pdf")

    @pytest.mark.parametrize("fmt", ["csv", "json", "xlsx"])
    def test_read_back(self, tmp_path, fmt):
        df = to_frame([{"step": 0, "value": 1.25}, {"step": 1, "value": -2.5}])
        path = write_table(df, str(tmp_path / f"t.{fmt}"), fmt)
        pd.testing.assert_frame_equal(read_table(path), df)


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = RunManifest("abc", "0.1.0", 3, "adjudicate", 4, 2.0, ["a.csv"], verdict="full")
        manifest.write(str(tmp_path))
        assert RunManifest.read(str(tmp_path)) == manifest

    def test_no_verdict_key_without_adjudication(self, tmp_path):
        RunManifest("abc", "0.1.0", 3, "simulate", 1).write(str(tmp_path))
        data = json.loads((tmp_path / MANIFEST_NAME).read_text())
        assert "verdict" not in data
        assert data["subcommand"] == "simulate"


class TestWorkbook:
    def test_one_sheet_per_table(self, run_dir, tmp_path):
        path = build_workbook(str(run_dir), str(tmp_path / "report.xlsx"))
        assert load_workbook(path).sheetnames == ["manifest", "verify", "verify_perturbation"]

    def test_report_script(self, run_dir):
        from build_report import build_report

        assert build_report(str(run_dir)).endswith("run_report.xlsx")

    def test_report_script_without_manifest(self, tmp_path):
        from build_report import build_report

        assert build_report(str(tmp_path)) is None


class TestDeck:
    def test_table_slide_is_truncated(self, tmp_path):
        prs = Presentation()
        df = to_frame([{"step": k, "value": k / 3} for k in range(20)])
        slide = create_table_slide(prs, "verify", df)
        tables = [s for s in slide.shapes if s.has_table]
        assert len(tables) == 1
        assert len(tables[0].table.rows) == 16
        assert tables[0].table.cell(1, 1).text == "0"
        prs.save(str(tmp_path / "deck.pptx"))

    def test_deck_script(self, run_dir):
        from build_deck import build_deck

        out = build_deck(str(run_dir))
        assert len(Presentation(out).slides) == 3


class TestArchive:
    def test_clean_columns(self):
        assert clean_columns(["Phi Sigma", "t-stat", "%%"]) == ["phi_sigma", "t_stat", "col"]

    def test_deduplicate(self):
        df = deduplicate_columns(pd.DataFrame([[1, 2, 3]], columns=["a", "a", "b"]))
        assert list(df.columns) == ["a", "a_1", "b"]

    def test_appends_runs(self, run_dir, tmp_path):
        url = f"sqlite:///{tmp_path / 'archive.db'}"
        written = archive_run(str(run_dir), url)
        assert written == {"verify_verify": 3, "verify_verify_perturbation": 2, "runs": 1}
        archive_run(str(run_dir), url)

        engine = create_engine(url)
        assert set(inspect(engine).get_table_names()) == set(written)
        with engine.connect() as conn:
            assert conn.execute(text("SELECT COUNT(*) FROM verify_verify")).scalar() == 6
            assert conn.execute(text("SELECT DISTINCT config_sha256 FROM runs")).scalar() == "abc123"
