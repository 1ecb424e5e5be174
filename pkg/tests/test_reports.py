"""Delimited-output formatting: cells, manifest stamp, line endings."""
import math

from sfodkit.reports import format_cell, read_csv, write_csv


def test_format_cell():
    assert format_cell(float("nan")) == "absent"
    assert format_cell(0.5) == "0.5"
    assert format_cell(1 / 3) == repr(1 / 3)  # full precision, round-trippable
    assert format_cell(3) == "3"
    assert format_cell("label") == "label"


def test_csv_round_trip(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "b"],
                     [[1, float("nan")], [0.25, "x"]], "deadbeef")
    header, rows, manifest = read_csv(path)
    assert header == ["a", "b"]
    assert rows == [["1", "absent"], ["0.25", "x"]]
    assert manifest == "deadbeef"


def test_csv_manifest_line_and_lf(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["x"], [[2]], "h123")
    raw = path.read_bytes()
    assert raw.startswith(b"# manifest: h123\n")
    assert b"\r" not in raw


def test_csv_without_manifest(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["x"], [[math.pi]])
    header, rows, manifest = read_csv(path)
    assert manifest is None
    assert float(rows[0][0]) == math.pi
