"""Frame backends: scripted replay, the sentinel conformance model, and
Hugging Face causal LMs with maskable context."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCRIPT_FORMAT = "gdec-bridge.script"
SCRIPT_VERSION = 1


class BackendError(RuntimeError):
    """Per-request failure; reported as ok:false without killing the session."""


@dataclass
class Descriptor:
    vocab_size: int
    bos_id: int
    eos_id: int
    name: str


class ScriptedBackend:
    """Replays a recorded frame table; fully deterministic.

    Entries are stored post-normalization, so the server serves them
    verbatim (bit-for-bit) instead of renormalizing.
    """

    pre_normalized = True

    def __init__(self, script_path: str | Path):
        path = Path(script_path)
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in (raw.strip() for raw in fh) if line]
        if not lines:
            raise ValueError(f"{path}: empty script")
        header = json.loads(lines[0])
        if header.get("format") != SCRIPT_FORMAT:
            raise ValueError(f"{path}: not a {SCRIPT_FORMAT} file")
        self.descriptor = Descriptor(
            vocab_size=int(header["vocab_size"]),
            bos_id=int(header["bos"]),
            eos_id=int(header["eos"]),
            name=str(header.get("name", "scripted")),
        )
        self.masking_mode = str(header.get("masking_mode", "scripted"))
        self._table: dict[tuple[tuple[int, ...], bool], np.ndarray] = {}
        for raw in lines[1:]:
            entry = json.loads(raw)
            key = (tuple(int(t) for t in entry["tokens"]), bool(entry["with_context"]))
            vec = np.array(
                [-np.inf if x == "-inf" else float(x) for x in entry["logprobs"]],
                dtype=np.float64,
            )
            self._table[key] = vec

    def start_session(self, prompt: str, context_ref: str) -> None:
        del prompt, context_ref  # replay ignores session state

    def frame(self, tokens, with_context: bool) -> np.ndarray:
        key = (tuple(int(t) for t in tokens), bool(with_context))
        vec = self._table.get(key)
        if vec is None:
            raise BackendError(
                f"no scripted frame for tokens={list(key[0])} with_context={key[1]}"
            )
        return vec


class _SentinelFeatures:
    """Stand-in for image features; reads are observable."""

    def __init__(self, seed: int):
        self.reads = 0
        self._seed = seed

    def read(self) -> int:
        self.reads += 1
        return self._seed


class SentinelBackend:
    """Deterministic conformance model.

    Conditioned frames consume the session's context features through an
    observable read; the unconditioned path is a separate code path with no
    access to them. Read counters prove that with_context=false requests
    never touch the context.
    """

    pre_normalized = False

    def __init__(self, vocab_size: int = 16, seed: int = 0):
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        self.descriptor = Descriptor(
            vocab_size=vocab_size, bos_id=0, eos_id=1, name="sentinel"
        )
        self.masking_mode = "scripted"
        self._seed = seed
        self._features: _SentinelFeatures | None = None
        self.stats = {
            "frames_with_context": 0,
            "frames_without_context": 0,
            "sentinel_reads_with_context": 0,
            "sentinel_reads_without_context": 0,
        }

    def start_session(self, prompt: str, context_ref: str) -> None:
        del prompt
        self._features = _SentinelFeatures(
            self._seed ^ zlib.crc32(context_ref.encode("utf-8"))
        )

    def _logits(self, tokens, salt: int) -> np.ndarray:
        ss = np.random.SeedSequence([salt % 2**63, *[int(t) % 2**63 for t in tokens]])
        return np.random.default_rng(ss).standard_normal(self.descriptor.vocab_size)

    def frame(self, tokens, with_context: bool) -> np.ndarray:
        features = self._features
        before = features.reads if features else 0
        if with_context:
            if features is None:
                raise BackendError("no session context")
            offset = features.read()  # conditioned scoring consumes the features
            vec = self._logits(tokens, salt=offset + 1_000_003)
            self.stats["frames_with_context"] += 1
            self.stats["sentinel_reads_with_context"] += features.reads - before
        else:
            vec = self._logits(tokens, salt=11)
            self.stats["frames_without_context"] += 1
            if features is not None:
                self.stats["sentinel_reads_without_context"] += features.reads - before
        return vec


MASKING_MODES = ("drop_image_tokens", "replace_with_null_embedding", "scripted")


def _parse_ids(text: str) -> list[int]:
    # Context/prompt may arrive as explicit token ids ("ids:1,2,3") for
    # models served without a tokenizer.
    if text.startswith("ids:"):
        body = text[len("ids:"):].strip()
        return [int(x) for x in body.split(",")] if body else []
    raise BackendError(
        "no tokenizer available: pass prompt/context as 'ids:<comma-separated>'"
    )


class HFBackend:
    """Hosts a Hugging Face causal LM.

    The session context is a token block prepended to the input. With
    with_context=false the block is either dropped from the sequence
    (drop_image_tokens) or its embeddings are replaced by zeros
    (replace_with_null_embedding), which keeps positions aligned.
    """

    pre_normalized = False

    def __init__(self, model_id: str, device: str = "cpu",
                 masking_mode: str = "drop_image_tokens"):
        if masking_mode not in ("drop_image_tokens", "replace_with_null_embedding"):
            raise ValueError(f"unsupported masking_mode {masking_mode!r} for hf backend")
        try:
            import torch
            from transformers import AutoModelForCausalLM
        except ImportError as exc:  # pragma: no cover
            raise RuntimeError("hf backend needs transformers and torch installed") from exc
        self._torch = torch
        self._model = AutoModelForCausalLM.from_pretrained(model_id).to(device).eval()
        self._device = device
        self.masking_mode = masking_mode
        try:
            from transformers import AutoTokenizer

            self._tokenizer = AutoTokenizer.from_pretrained(model_id)
        except Exception:
            self._tokenizer = None
        cfg = self._model.config
        bos = cfg.bos_token_id
        eos = cfg.eos_token_id
        if bos is None or eos is None or bos == eos:
            raise ValueError("model config must define distinct bos/eos token ids")
        self.descriptor = Descriptor(
            vocab_size=int(cfg.vocab_size),
            bos_id=int(bos),
            eos_id=int(eos),
            name=f"{model_id}[{masking_mode}]",
        )
        self._prompt_ids: list[int] = []
        self._context_ids: list[int] = []

    def _to_ids(self, text: str) -> list[int]:
        if not text:
            return []
        if text.startswith("ids:") or self._tokenizer is None:
            return _parse_ids(text)
        return list(self._tokenizer(text, add_special_tokens=False)["input_ids"])

    def start_session(self, prompt: str, context_ref: str) -> None:
        self._prompt_ids = self._to_ids(prompt)
        self._context_ids = self._to_ids(context_ref)

    def frame(self, tokens, with_context: bool) -> np.ndarray:
        torch = self._torch
        tokens = [int(t) for t in tokens]
        context = self._context_ids
        with torch.no_grad():
            if with_context or not context:
                ids = context + self._prompt_ids + tokens if with_context else (
                    self._prompt_ids + tokens
                )
                if not ids:
                    ids = [self.descriptor.bos_id]
                batch = torch.tensor([ids], dtype=torch.long, device=self._device)
                logits = self._model(input_ids=batch).logits[0, -1]
            elif self.masking_mode == "drop_image_tokens":
                ids = self._prompt_ids + tokens
                if not ids:
                    ids = [self.descriptor.bos_id]
                batch = torch.tensor([ids], dtype=torch.long, device=self._device)
                logits = self._model(input_ids=batch).logits[0, -1]
            else:  # replace_with_null_embedding: zero the context block
                ids = context + self._prompt_ids + tokens
                batch = torch.tensor([ids], dtype=torch.long, device=self._device)
                embed = self._model.get_input_embeddings()(batch)
                embed[0, : len(context)] = 0.0
                logits = self._model(inputs_embeds=embed).logits[0, -1]
        return logits.detach().cpu().to(torch.float64).numpy()


def write_script(path: str | Path, descriptor: Descriptor, masking_mode: str,
                 entries) -> None:
    """Persist a replayable frame table; `entries` yields
    (tokens, with_context, encoded_logprobs)."""
    path = Path(path)
    header = {
        "format": SCRIPT_FORMAT,
        "version": SCRIPT_VERSION,
        "vocab_size": descriptor.vocab_size,
        "bos": descriptor.bos_id,
        "eos": descriptor.eos_id,
        "name": descriptor.name,
        "masking_mode": masking_mode,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for tokens, with_context, logprobs in entries:
            fh.write(
                json.dumps(
                    {"tokens": list(tokens), "with_context": bool(with_context),
                     "logprobs": logprobs},
                )
                + "\n"
            )
