from __future__ import annotations

import numpy as np
import pytest

from rllab.errors import SchemaError
from rllab.io import (
    HEADER,
    load_samples,
    read_matrix_bin,
    read_matrix_csv,
    save_samples,
    write_matrix_bin,
    write_matrix_csv,
)
from rllab.models import SampleMatrix


def test_csv_round_trip_is_exact(tmp_path):
    a = np.random.default_rng(0).standard_normal((5, 3))
    path = tmp_path / "a.csv"
    write_matrix_csv(path, a)
    assert path.read_text().splitlines()[0] == "n=3"
    assert np.array_equal(read_matrix_csv(path), a)


def test_binary_round_trip_and_header(tmp_path):
    a = np.random.default_rng(1).standard_normal((4, 7))
    path = tmp_path / "a.bin"
    write_matrix_bin(path, a)
    raw = path.read_bytes()
    assert HEADER.size == 16
    assert raw[:6] == b"RLLAB1"
    assert len(raw) == 16 + 8 * 28
    assert np.array_equal(read_matrix_bin(path), a)


def test_csv_schema_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("n=2\n1.0,2.0\n3.0\n")
    with pytest.raises(SchemaError, match="line 3"):
        read_matrix_csv(path)
    path.write_text("rows=2\n")
    with pytest.raises(SchemaError, match="line 1"):
        read_matrix_csv(path)
    path.write_text("n=2\n1.0,abc\n")
    with pytest.raises(SchemaError, match="line 2"):
        read_matrix_csv(path)


def test_binary_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "a.bin"
    write_matrix_bin(path, np.ones((2, 2)))
    raw = path.read_bytes()
    path.write_bytes(b"XXXXXX" + raw[6:])
    with pytest.raises(SchemaError):
        read_matrix_bin(path)
    path.write_bytes(raw[:-8])
    with pytest.raises(SchemaError):
        read_matrix_bin(path)


@pytest.mark.parametrize("name", ["s.csv", "s.bin"])
def test_samples_with_response(tmp_path, name):
    rng = np.random.default_rng(2)
    s = SampleMatrix(rng.standard_normal((6, 3)), rng.standard_normal(6))
    save_samples(tmp_path / name, s)
    back = load_samples(tmp_path / name, with_response=True)
    assert np.array_equal(back.x, s.x) and np.array_equal(back.y, s.y)
