import json

import numpy as np
import pytest

from lib.transport.exceptions import ConfigError, ReportWriteError
from utils.data_processor import DataProcessor


def test_to_jsonable_converts_numpy_and_non_finite():
    data = {"a": np.array([1.0, np.nan]), "b": np.int64(3), "c": (np.float32(0.5), np.bool_(True)), 4: np.inf}
    assert DataProcessor.to_jsonable(data) == {"a": [1.0, None], "b": 3, "c": [0.5, True], "4": None}


def test_dumps_is_sorted_and_strict():
    text = DataProcessor.dumps({"b": 1, "a": np.nan})
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": None, "b": 1}


def test_write_and_read_json(tmp_path):
    path = DataProcessor.write_json({"x": np.arange(3)}, str(tmp_path / "nested" / "out.json"))
    assert DataProcessor.read_json(path) == {"x": [0, 1, 2]}


def test_samples_csv_rows(tmp_path):
    path = DataProcessor.write_samples_csv({"replicate": [0.1, 0.2], "law": np.zeros(3)}, str(tmp_path / "s.csv"))
    lines = open(path).read().strip().splitlines()
    assert lines[0] == "source,value"
    assert len(lines) == 1 + 5
    samples = DataProcessor.read_samples_csv(path)
    assert samples == {"replicate": [0.1, 0.2], "law": [0.0, 0.0, 0.0]}


def test_unwritable_path_raises(tmp_path):
    blocker = tmp_path / "file.txt"
    blocker.write_text("x")
    with pytest.raises(ReportWriteError):
        DataProcessor.write_json({"a": 1}, str(blocker / "out.json"))
    with pytest.raises(ReportWriteError):
        DataProcessor.write_samples_csv({"a": [1.0]}, str(blocker / "out.csv"))


def test_read_cost_matrix(tmp_path):
    good = tmp_path / "c.csv"
    good.write_text("0,1\n1,0\n")
    assert np.array_equal(DataProcessor.read_cost_matrix(str(good)), [[0.0, 1.0], [1.0, 0.0]])
    ragged = tmp_path / "r.csv"
    ragged.write_text("0,1\n1\n")
    with pytest.raises(ConfigError):
        DataProcessor.read_cost_matrix(str(ragged))
    with pytest.raises(ConfigError):
        DataProcessor.read_cost_matrix(str(tmp_path / "missing.csv"))
