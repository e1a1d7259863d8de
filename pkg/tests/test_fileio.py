import json
import math

import numpy as np

from oddlab import fileio


def test_dumps_stable_and_special_values():
    a = fileio.dumps({"b": np.float64(0.1), "a": [np.int64(3), math.inf, math.nan], "c": np.bool_(True)})
    b = fileio.dumps({"c": True, "a": [3, math.inf, math.nan], "b": 0.1})
    assert a == b
    d = json.loads(a)
    assert d == {"a": [3, "inf", "nan"], "b": 0.1, "c": True}


def test_fmt():
    assert fileio.fmt(np.int64(4)) == "4"
    assert fileio.fmt(True) == "1"
    assert float(fileio.fmt(0.1)) == 0.1
    assert fileio.fmt(1 / 3) == "0.33333333333333331"


def test_atomic_write_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "x.csv"
    fileio.write_csv(p, ["a", "b"], [(1, 0.5), (2, 1.5)])
    assert p.read_text() == "a,b\n1,0.5\n2,1.5\n"
    assert [q.name for q in p.parent.iterdir()] == ["x.csv"]
