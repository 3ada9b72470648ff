"""Client side of the model-bridge wire protocol.

Newline-delimited JSON over a byte stream (stdio pipe to a spawned process,
or TCP). Handshake, then one frame request at a time:

    {"op":"hello","proto":1, ...}  -> {"ok":true,"vocab_size":N,"bos":i,"eos":j,"name":s}
    {"op":"frame","id":k,"tokens":[...],"with_context":b}
                                   -> {"ok":true,"id":k,"logprobs":[...]}
    {"op":"close"}

Log-probabilities arrive as numbers (>= 9 significant digits) or the literal
string "-inf". Any {"ok":false} aborts the session.
"""

from __future__ import annotations

import json
import math
import shlex
import socket
import subprocess
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ContractViolationError, ProtocolError
from .frames import NORMALIZATION_TOL, ModelSession, SessionDescriptor

PROTO_VERSION = 1


def _dumps(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


class _StdioTransport:
    def __init__(self, command: str):
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise ProtocolError(f"cannot launch bridge {command!r}: {exc}") from exc
        self._reader = self._proc.stdout
        self._writer = self._proc.stdin

    def send(self, payload: bytes) -> None:
        try:
            self._writer.write(payload)
            self._writer.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"bridge pipe closed: {exc}") from exc

    def recv_line(self) -> bytes:
        line = self._reader.readline()
        if not line:
            raise ProtocolError("bridge closed the stream mid-session")
        return line

    def close(self) -> None:
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class _TcpTransport:
    def __init__(self, host: str, port: int):
        try:
            self._sock = socket.create_connection((host, port), timeout=30)
        except OSError as exc:
            raise ProtocolError(f"cannot connect to bridge {host}:{port}: {exc}") from exc
        self._reader = self._sock.makefile("rb")

    def send(self, payload: bytes) -> None:
        try:
            self._sock.sendall(payload)
        except OSError as exc:
            raise ProtocolError(f"bridge socket closed: {exc}") from exc

    def recv_line(self) -> bytes:
        line = self._reader.readline()
        if not line:
            raise ProtocolError("bridge closed the stream mid-session")
        return line

    def close(self) -> None:
        try:
            self._reader.close()
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


def _open_transport(endpoint: str):
    if endpoint.startswith("stdio:"):
        return _StdioTransport(endpoint[len("stdio:"):])
    if endpoint.startswith("tcp:"):
        rest = endpoint[len("tcp:"):]
        host, sep, port = rest.rpartition(":")
        if not sep or not port.isdigit():
            raise ProtocolError(f"malformed tcp endpoint {endpoint!r}")
        return _TcpTransport(host or "127.0.0.1", int(port))
    raise ProtocolError(f"unknown endpoint scheme in {endpoint!r} (want stdio: or tcp:)")


class BridgeSession(ModelSession):
    """A session served by an external bridge process over the wire protocol."""

    def __init__(self, endpoint: str, prompt: str = "", context_ref: str = ""):
        self._transport = _open_transport(endpoint)
        self._line_no = 0
        self._next_id = 0
        self._cache: dict[tuple[tuple[int, ...], bool], np.ndarray] = {}
        self._closed = False
        hello = {"op": "hello", "proto": PROTO_VERSION}
        if prompt:
            hello["prompt"] = prompt
        if context_ref:
            hello["context"] = context_ref
        try:
            reply = self._roundtrip(hello)
            self._descriptor = SessionDescriptor(
                vocab_size=int(reply["vocab_size"]),
                bos_id=int(reply["bos"]),
                eos_id=int(reply["eos"]),
                model_name=str(reply.get("name", "bridge")),
            )
        except ProtocolError:
            self.close()
            raise
        except (KeyError, TypeError, ValueError) as exc:
            self.close()
            raise ProtocolError(f"handshake reply missing fields: {exc}") from exc

    def _roundtrip(self, request: dict) -> dict:
        self._transport.send(_dumps(request))
        raw = self._transport.recv_line()
        self._line_no += 1
        try:
            reply = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(
                f"malformed response on line {self._line_no}: {exc}"
            ) from exc
        if not isinstance(reply, dict):
            raise ProtocolError(f"response on line {self._line_no} is not an object")
        if not reply.get("ok", False):
            raise ProtocolError(
                f"bridge error: {reply.get('error', 'unspecified failure')}"
            )
        return reply

    @property
    def descriptor(self) -> SessionDescriptor:
        return self._descriptor

    def frame_for(self, prefix: Sequence[int], include_context: bool) -> np.ndarray:
        key = (tuple(int(x) for x in prefix), bool(include_context))
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        request_id = self._next_id
        self._next_id += 1
        reply = self._roundtrip(
            {
                "op": "frame",
                "id": request_id,
                "tokens": list(key[0]),
                "with_context": key[1],
            }
        )
        if reply.get("id") != request_id:
            raise ProtocolError(
                f"response id {reply.get('id')!r} does not match request {request_id}"
            )
        vec = self._parse_logprobs(reply.get("logprobs"), request_id)
        self._cache[key] = vec
        return vec

    def _parse_logprobs(self, entries, request_id: int) -> np.ndarray:
        if not isinstance(entries, list):
            raise ProtocolError(f"frame response {request_id} lacks a logprobs array")
        if len(entries) != self._descriptor.vocab_size:
            raise ContractViolationError(
                f"frame response {request_id}: {len(entries)} entries, "
                f"expected {self._descriptor.vocab_size}"
            )
        values = np.empty(len(entries), dtype=np.float64)
        for i, entry in enumerate(entries):
            if entry == "-inf":
                values[i] = -math.inf
            elif isinstance(entry, (int, float)) and not isinstance(entry, bool):
                values[i] = float(entry)
            else:
                raise ContractViolationError(
                    f"frame response {request_id}: entry {i} is {entry!r}, "
                    'expected a number or "-inf"'
                )
        if np.isnan(values).any() or np.isposinf(values).any() or (values > 0.0).any():
            raise ContractViolationError(
                f"frame response {request_id}: log-probabilities must be <= 0"
            )
        if not np.isfinite(values).any():
            raise ContractViolationError(f"frame response {request_id}: no finite entry")
        lse = float(logsumexp(values))
        if abs(lse) > NORMALIZATION_TOL:
            raise ContractViolationError(
                f"frame response {request_id}: |logsumexp| = {abs(lse):.3e} "
                f"exceeds {NORMALIZATION_TOL}"
            )
        values.setflags(write=False)
        return values

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._transport.send(_dumps({"op": "close"}))
        except ProtocolError:
            pass
        self._transport.close()


def open_bridge_session(
    endpoint: str, prompt: str = "", context_ref: str = ""
) -> BridgeSession:
    """Connect, handshake, and return a session bound to (prompt, context_ref).

    ``endpoint`` is "stdio:<command line>" (the bridge is spawned and spoken
    to over its pipes) or "tcp:<host>:<port>".
    """
    return BridgeSession(endpoint=endpoint, prompt=prompt, context_ref=context_ref)
