"""Trace persistence: one header line, then one StepRecord per line (JSONL)."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from .decoding import DecoderConfig, GenerationTrace, StepRecord
from .errors import DataError
from .frames import SessionDescriptor

TRACE_FORMAT = "gdec.trace"
TRACE_VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def trace_lines(trace: GenerationTrace, extra_header: dict | None = None) -> list[str]:
    header = {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "config": trace.config.to_dict(),
        "descriptor": trace.descriptor.to_dict(),
        "terminated_by": trace.terminated_by,
    }
    if extra_header:
        overlap = set(extra_header) & set(header)
        if overlap:
            raise DataError(f"extra header keys collide: {sorted(overlap)}")
        header.update(extra_header)
    return [_dumps(header)] + [_dumps(s.to_dict()) for s in trace.steps]


def write_text_atomic(path: str | Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partials."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_trace(trace: GenerationTrace, path: str | Path, extra_header: dict | None = None) -> None:
    write_text_atomic(path, "\n".join(trace_lines(trace, extra_header)) + "\n")


def read_trace(path: str | Path) -> GenerationTrace:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in (raw.strip() for raw in fh) if line]
    if not lines:
        raise DataError(f"{path}: empty trace file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed header: {exc}") from exc
    if header.get("format") != TRACE_FORMAT:
        raise DataError(f"{path}: not a {TRACE_FORMAT} file")
    if header.get("version") != TRACE_VERSION:
        raise DataError(f"{path}: unsupported trace version {header.get('version')!r}")
    config = DecoderConfig.from_dict(header["config"])
    descriptor = SessionDescriptor.from_dict(header["descriptor"])
    steps = []
    for lineno, raw in enumerate(lines[1:], start=2):
        try:
            steps.append(StepRecord.from_dict(json.loads(raw)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: malformed step record: {exc}") from exc
    return GenerationTrace(
        config=config,
        descriptor=descriptor,
        steps=tuple(steps),
        terminated_by=header["terminated_by"],
    )
