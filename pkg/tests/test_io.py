import json

import numpy as np

from betawolff import _io


def test_fmt_roundtrip():
    for x in (0.1, 1 / 3, 1e-300, 12345678.9, 2.0):
        assert float(_io.fmt(x)) == x
    assert _io.fmt(2.0) == "2.0"
    assert _io.fmt(float("nan")) == "null"
    assert _io.fmt(float("inf")) == "null"


def test_dumps_types_and_order():
    obj = {"b": 1, "a": [np.float64(0.5), np.int64(3), True, None, "s"], "c": np.array([1.0])}
    s = _io.dumps(obj)
    assert s.index('"b"') < s.index('"a"')
    assert json.loads(s) == {"b": 1, "a": [0.5, 3, True, None, "s"], "c": [1.0]}


def test_csv(tmp_path):
    p = tmp_path / "x.csv"
    _io.write_csv(p, ["a", "b", "c"], [[1, 0.1, True], [np.int64(2), np.float64(1 / 3), "z"]])
    lines = p.read_text().splitlines()
    assert lines[0] == "a,b,c"
    assert lines[1] == "1,0.10000000000000001,1"
    assert float(lines[2].split(",")[1]) == 1 / 3
