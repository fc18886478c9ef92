import json

import numpy as np
import pytest

from engine.tracer import (
    RunTrace,
    TraceRecord,
    hash_config,
    iter_trace,
    read_trace,
    record_run,
    write_trace,
)


def test_trace_round_trips_exactly(tmp_path):
    rng = np.random.default_rng(0)
    trace = RunTrace(metadata={"algo": "esvi", "K": 8, "seed": 3})
    updates, seconds = 0, 0.0
    for i in range(50):
        updates += int(rng.integers(1, 1000))
        seconds += float(rng.random())
        perplexity = None if i % 3 else float(rng.random() * 1000)
        trace.append(TraceRecord(updates, seconds, -1e6 * float(rng.random()), perplexity))
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    loaded = read_trace(path)
    assert loaded.records == trace.records
    assert loaded.metadata == {"K": "8", "algo": "esvi", "seed": "3"}


def test_layout(tmp_path):
    trace = RunTrace(metadata={"algo": "vi"})
    trace.append(TraceRecord(0, 0.0, -10.5))
    trace.append(TraceRecord(7, 0.25, -3.0, 42.0))
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    assert path.read_text().splitlines() == [
        "# algo=vi",
        "updates,seconds,elbo,perplexity",
        "0,0,-10.5,",
        "7,0.25,-3,42",
    ]


def test_empty_trace_is_header_only(tmp_path):
    path = tmp_path / "nested" / "empty.csv"
    write_trace(RunTrace(), path)
    assert path.read_text().splitlines()[1] == "updates,seconds,elbo,perplexity"
    assert read_trace(path).records == []


def test_records_must_move_forward():
    trace = RunTrace()
    trace.append(TraceRecord(10, 1.0, -5.0))
    with pytest.raises(ValueError, match="update count"):
        trace.append(TraceRecord(9, 2.0, -4.0))
    with pytest.raises(ValueError, match="wallclock"):
        trace.append(TraceRecord(11, 0.5, -4.0))
    trace.append(TraceRecord(10, 1.0, -5.0))


def test_long_traces_stream(tmp_path):
    trace = RunTrace()
    for i in range(10_000):
        trace.append(TraceRecord(i * 8, i * 1e-3, -1.0 / (i + 1)))
    path = tmp_path / "long.csv"
    write_trace(trace, path)
    stream = iter_trace(path)
    assert next(stream) == trace.records[0]
    assert sum(1 for _ in stream) == 9_999


def test_unexpected_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c,d\n1,2,3,4\n")
    with pytest.raises(ValueError, match="header"):
        list(iter_trace(path))


def test_record_run_appends_provenance(project_dir):
    record_run("load", ["synthetic"], [], config_hash=hash_config({"K": 4}))
    record_run("report", ["synthetic"], ["out.csv"], summary={"elbo": -1.0})
    entries = json.loads((project_dir / "state" / "TRACE.json").read_text())
    assert [e["task"] for e in entries] == ["load", "report"]
    assert entries[0]["config_hash"] == hash_config({"K": 4})
    assert entries[1]["summary"] == {"elbo": -1.0}
    assert "timestamp" in entries[1]


def test_config_hash_ignores_key_order():
    assert hash_config({"a": 1, "b": 2}) == hash_config({"b": 2, "a": 1})
    assert hash_config({"a": 1}) != hash_config({"a": 2})
