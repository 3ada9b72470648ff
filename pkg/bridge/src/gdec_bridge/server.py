"""One-session-per-connection NDJSON server around a frame backend.

Per-request failures are answered with {"ok":false,...} and the session
stays alive; transport-level failures end the session. Every served frame
is renormalized (log-softmax) before serialization, and optionally recorded
to a replayable script file.
"""

from __future__ import annotations

import json
import logging
import socket
import sys
import threading
from dataclasses import dataclass

import numpy as np

from . import backends
from .protocol import (
    NORMALIZATION_TOL,
    PROTO_VERSION,
    dumps_line,
    encode_logprobs,
    log_softmax,
    logsumexp,
)

logger = logging.getLogger("gdec_bridge.server")


@dataclass
class BridgeConfig:
    """How to host a model: which backend, its masking strategy, the listener."""

    backend: str = "sentinel"           # sentinel | scripted | hf
    model: str = ""                     # model identifier (hf) or label
    device: str = "cpu"
    masking_mode: str = "scripted"      # drop_image_tokens | replace_with_null_embedding | scripted
    listen: str = "stdio"               # stdio | tcp:host:port
    script: str = ""                    # script path for the scripted backend
    vocab_size: int = 16                # sentinel backend vocabulary
    seed: int = 0                       # sentinel backend seed
    record: str = ""                    # record served frames to this script path
    stats_out: str = ""                 # write backend stats JSON on exit


def build_backend(config: BridgeConfig):
    if config.backend == "scripted":
        if not config.script:
            raise ValueError("scripted backend needs --script")
        return backends.ScriptedBackend(config.script)
    if config.backend == "sentinel":
        return backends.SentinelBackend(vocab_size=config.vocab_size, seed=config.seed)
    if config.backend == "hf":
        if not config.model:
            raise ValueError("hf backend needs --model")
        return backends.HFBackend(
            config.model, device=config.device, masking_mode=config.masking_mode
        )
    raise ValueError(f"unknown backend {config.backend!r}")


class BridgeServer:
    def __init__(self, backend, record_path: str = ""):
        self._backend = backend
        self._record_path = record_path
        self._recorded: list[tuple[list[int], bool, list]] = []
        self._lock = threading.Lock()  # backends may not be concurrency-safe

    def serve_stream(self, reader, writer) -> None:
        """Run one session over a byte stream until close or EOF."""
        backend = self._backend

        def reply(obj):
            writer.write(dumps_line(obj))
            writer.flush()

        for raw in reader:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError as exc:
                reply({"ok": False, "error": f"malformed request: {exc}"})
                continue
            op = msg.get("op")
            if op == "hello":
                if msg.get("proto") != PROTO_VERSION:
                    reply({
                        "ok": False,
                        "error": f"unsupported protocol version {msg.get('proto')!r}, "
                                 f"this bridge speaks {PROTO_VERSION}",
                    })
                    continue
                try:
                    with self._lock:
                        backend.start_session(
                            str(msg.get("prompt", "")), str(msg.get("context", ""))
                        )
                except backends.BackendError as exc:
                    reply({"ok": False, "error": str(exc)})
                    continue
                d = backend.descriptor
                reply({
                    "ok": True,
                    "vocab_size": d.vocab_size,
                    "bos": d.bos_id,
                    "eos": d.eos_id,
                    "name": d.name,
                })
            elif op == "frame":
                tokens = msg.get("tokens", [])
                with_context = bool(msg.get("with_context", True))
                try:
                    with self._lock:
                        raw_scores = backend.frame(tokens, with_context)
                    if getattr(backend, "pre_normalized", False):
                        # scripted entries are stored post-normalization and
                        # must replay bit-for-bit; verify instead of rewriting
                        normalized = np.asarray(raw_scores, dtype=np.float64)
                        if abs(logsumexp(normalized)) > NORMALIZATION_TOL:
                            raise backends.BackendError(
                                "stored frame violates the normalization contract"
                            )
                    else:
                        normalized = log_softmax(raw_scores)
                    if normalized.shape[0] != backend.descriptor.vocab_size:
                        raise backends.BackendError(
                            f"backend produced {normalized.shape[0]} entries, "
                            f"expected {backend.descriptor.vocab_size}"
                        )
                except (backends.BackendError, ValueError) as exc:
                    reply({"ok": False, "error": str(exc), "id": msg.get("id")})
                    continue
                encoded = encode_logprobs(normalized)
                if self._record_path:
                    self._recorded.append((list(tokens), with_context, encoded))
                reply({"ok": True, "id": msg.get("id"), "logprobs": encoded})
            elif op == "close":
                break
            else:
                reply({"ok": False, "error": f"unknown op {op!r}"})
        self._flush_recording()

    def _flush_recording(self) -> None:
        if not self._record_path or not self._recorded:
            return
        backends.write_script(
            self._record_path,
            self._backend.descriptor,
            getattr(self._backend, "masking_mode", "scripted"),
            self._recorded,
        )
        logger.info("recorded %d frames to %s", len(self._recorded), self._record_path)


def _write_stats(backend, path: str) -> None:
    stats = getattr(backend, "stats", None)
    if path and stats is not None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(stats, fh, sort_keys=True)


def serve(config: BridgeConfig) -> int:
    """Run until the peer closes (stdio) or forever (tcp)."""
    backend = build_backend(config)
    server = BridgeServer(backend, record_path=config.record)
    if config.listen == "stdio":
        try:
            server.serve_stream(sys.stdin.buffer, sys.stdout.buffer)
        finally:
            _write_stats(backend, config.stats_out)
        return 0
    if config.listen.startswith("tcp:"):
        rest = config.listen[len("tcp:"):]
        host, _, port = rest.rpartition(":")
        sock = socket.create_server((host or "127.0.0.1", int(port)))
        bound = sock.getsockname()
        print(f"listening tcp {bound[0]}:{bound[1]}", flush=True)
        try:
            while True:
                conn, peer = sock.accept()
                logger.info("session from %s", peer)
                with conn:
                    server.serve_stream(conn.makefile("rb"), conn.makefile("wb"))
                _write_stats(backend, config.stats_out)
        except KeyboardInterrupt:
            return 0
        finally:
            sock.close()
    raise ValueError(f"unknown listen spec {config.listen!r}")
