"""
test_output.py - artifact writers, figure determinism, manifests and the thread pool.
"""

import json

import numpy as np
import pandas as pd

from utils.utils_config import MANIFEST_FORMAT
from utils.utils_logger import sanitize_message
from utils.utils_output import (
    file_sha256,
    write_csv,
    write_heatmap_svg,
    write_manifest,
    write_series_svg,
)
from utils.utils_parallel import parallel_map


def test_csv_has_fixed_columns_and_newlines(tmp_path):
    frame = pd.DataFrame({"step": [0, 1], "value": [0.5, 0.25]})
    path = write_csv(frame, tmp_path.joinpath("sub", "x.csv"))
    assert path.read_bytes() == b"step,value\n0,0.5\n1,0.25\n"


def test_heatmap_svg_is_reproducible(tmp_path):
    values = np.abs(np.random.default_rng(0).normal(size=(900, 12)))
    a = write_heatmap_svg(values, tmp_path.joinpath("a.svg"), "activation")
    b = write_heatmap_svg(values, tmp_path.joinpath("b.svg"), "activation")
    assert file_sha256(a) == file_sha256(b)
    assert "every 3" in a.read_text()


def test_series_svg_is_reproducible(tmp_path):
    frame = pd.DataFrame({"step": [1, 2, 3] * 2, "energy": [1.0, 0.1, 0.01] * 2, "seed": [0] * 3 + [1] * 3})
    a = write_series_svg(frame, "step", "energy", tmp_path.joinpath("a.svg"), "DE", hue="seed", log_y=True)
    b = write_series_svg(frame, "step", "energy", tmp_path.joinpath("b.svg"), "DE", hue="seed", log_y=True)
    assert a.read_bytes() == b.read_bytes()


def test_manifest_lists_artifact_hashes(tmp_path):
    csv = write_csv(pd.DataFrame({"a": [1]}), tmp_path.joinpath("a.csv"))
    path = write_manifest(tmp_path, "spectrum", {"seed": 3, "out": str(tmp_path)}, [csv], exit_code=1)
    doc = json.loads(path.read_text())
    assert doc["format"] == MANIFEST_FORMAT
    assert doc["command"] == "spectrum"
    assert doc["seed"] == 3
    assert doc["exit_code"] == 1
    assert doc["artifacts"] == {"a.csv": file_sha256(csv)}


def test_parallel_map_keeps_order():
    def work(i):
        return i * i

    assert parallel_map(work, range(20), threads=4) == [i * i for i in range(20)]
    assert parallel_map(work, [], threads=4) == []


def test_log_messages_escape_braces():
    assert sanitize_message({"message": "config {a}"}) == "config {{a}}"
