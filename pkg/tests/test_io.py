import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from marangoni.io import (canonical_json, config_digest, read_json, read_snapshot, read_table, write_json,
                          write_snapshot, write_table)

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(st.lists(finite, max_size=8))
def test_floats_roundtrip_exactly(xs):
    assert json.loads(canonical_json({"x": xs}))["x"] == xs


def test_canonical_order_and_numpy():
    a = canonical_json({"b": np.float64(1.5), "a": np.arange(3), "c": 2 + 1j, "n": np.int64(4)})
    assert a.index('"a"') < a.index('"b"') < a.index('"c"')
    d = json.loads(a)
    assert d["a"] == [0, 1, 2] and d["c"] == {"re": 2.0, "im": 1.0} and d["n"] == 4


def test_nonfinite_values_are_strings():
    d = json.loads(canonical_json({"a": float("nan"), "b": float("inf")}))
    assert d == {"a": "nan", "b": "inf"}


def test_digest_ignores_key_order():
    assert config_digest({"a": 1, "b": [1.0, 2.0]}) == config_digest({"b": [1.0, 2.0], "a": 1})
    assert config_digest({"a": 1}) != config_digest({"a": 2})


def test_json_file_roundtrip(tmp_path):
    p = write_json(tmp_path / "x" / "a.json", {"k": [1.25, -3.0]})
    assert read_json(p) == {"k": [1.25, -3.0]}


def test_table_roundtrip(tmp_path, rng):
    rows = rng.normal(size=(5, 3))
    write_table(tmp_path / "t.csv", ["a", "b", "c"], rows)
    header, data = read_table(tmp_path / "t.csv")
    assert header == ["a", "b", "c"]
    np.testing.assert_array_equal(data, rows)


def test_snapshot_roundtrip(tmp_path, rng):
    arrays = {"w": rng.normal(size=(4, 5)), "psi": rng.normal(size=(3,))}
    write_snapshot(tmp_path / "snap", arrays, {"t": 1.5})
    back, side = read_snapshot(tmp_path / "snap")
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
    assert side["t"] == 1.5 and side["dtype"] == "<f8"
