import json

import pytest

from gdec.decoding import DecoderConfig, decode
from gdec.errors import DataError
from gdec.mock import MockScenario, open_mock_session
from gdec.traces import read_trace, trace_lines, write_trace

from conftest import synthetic_trace


def sample_trace():
    session = open_mock_session(seed=4, vocab_size=16, scenario=MockScenario.fading(0.05))
    return decode(session, DecoderConfig(kind="m3id", alpha=0.3, lam=0.05, max_tokens=12))


def test_round_trip(tmp_path):
    trace = sample_trace()
    path = tmp_path / "run.trace.jsonl"
    write_trace(trace, path)
    assert read_trace(path) == trace


def test_header_carries_config_and_descriptor(tmp_path):
    trace = sample_trace()
    lines = trace_lines(trace, extra_header={"master_seed": 4})
    header = json.loads(lines[0])
    assert header["format"] == "gdec.trace"
    assert header["config"]["kind"] == "m3id"
    assert header["config"]["lambda"] == 0.05
    assert header["descriptor"]["vocab_size"] == 16
    assert header["master_seed"] == 4
    assert len(lines) == 1 + len(trace.steps)


def test_write_is_deterministic(tmp_path):
    trace = sample_trace()
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_trace(trace, p1)
    write_trace(trace, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_extra_header_collision_rejected():
    with pytest.raises(DataError):
        trace_lines(synthetic_trace([0.1]), extra_header={"config": {}})


def test_read_rejects_garbage(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("not json\n")
    with pytest.raises(DataError):
        read_trace(path)
    path.write_text("")
    with pytest.raises(DataError):
        read_trace(path)
    path.write_text('{"format":"other"}\n')
    with pytest.raises(DataError):
        read_trace(path)


def test_read_names_bad_step_line(tmp_path):
    trace = synthetic_trace([0.5, 0.4])
    path = tmp_path / "t.jsonl"
    lines = trace_lines(trace)
    lines[2] = '{"t": 1}'
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=":3"):
        read_trace(path)
