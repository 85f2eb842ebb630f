import math

import numpy as np
import pytest

from fracopt.io import format_value, mask_header, nodal_header, read_csv, write_csv


def test_format_value():
    assert format_value(True) == "true" and format_value(np.bool_(False)) == "false"
    assert format_value(np.int64(3)) == "3"
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(math.nan) == "nan" and format_value(-math.inf) == "-inf"
    assert format_value("abc") == "abc"


def test_round_trip_preserves_floats(tmp_path):
    vals = np.random.default_rng(0).standard_normal(20)
    path = write_csv(tmp_path / "sub" / "a.csv", ("i", "v"), enumerate(vals))
    header, rows = read_csv(path)
    assert header == ["i", "v"]
    assert [float(r[1]) for r in rows] == list(vals)


def test_empty_csv(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ValueError, match="empty"):
        read_csv(tmp_path / "e.csv")


def test_headers():
    assert nodal_header(1) == ("x", "u") and nodal_header(2) == ("x", "y", "u")
    assert mask_header(2) == ("cell", "x", "y", "selected")
