"""Paired next-token log-probability frames and the session interface.

A frame holds two vectors over the same vocabulary: the model's next-token
log-probabilities with the context present (``conditioned``) and with the
context masked (``unconditioned``). All log-probabilities are natural-log.
Entries may be -inf (masked tokens) but never positive, NaN, or +inf, and
each vector must be normalized: |logsumexp| <= NORMALIZATION_TOL.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import FrameError

NORMALIZATION_TOL = 1e-4


def as_logprob_vector(values, what: str = "logprobs") -> np.ndarray:
    """Validate and freeze one log-probability vector.

    Returns a read-only float64 copy; raises FrameError on any contract
    violation.
    """
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise FrameError(f"{what}: expected a 1-D vector, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise FrameError(f"{what}: vocabulary must have at least 2 entries")
    if np.isnan(arr).any():
        raise FrameError(f"{what}: NaN entry")
    if (arr > 0.0).any() or np.isposinf(arr).any():
        raise FrameError(f"{what}: log-probabilities must be <= 0")
    finite = np.isfinite(arr)
    if not finite.any():
        raise FrameError(f"{what}: no finite entry")
    lse = float(logsumexp(arr))
    if abs(lse) > NORMALIZATION_TOL:
        raise FrameError(f"{what}: not normalized, |logsumexp| = {abs(lse):.3e}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LogitFrame:
    """One decode step's log-probabilities, with and without the context."""

    conditioned: np.ndarray
    unconditioned: np.ndarray

    def __post_init__(self):
        c = as_logprob_vector(self.conditioned, "conditioned")
        u = as_logprob_vector(self.unconditioned, "unconditioned")
        if c.shape != u.shape:
            raise FrameError(
                f"vector length mismatch: {c.shape[0]} vs {u.shape[0]}"
            )
        object.__setattr__(self, "conditioned", c)
        object.__setattr__(self, "unconditioned", u)

    @property
    def vocab_size(self) -> int:
        return int(self.conditioned.shape[0])

    def conditioned_probs(self) -> np.ndarray:
        p = np.exp(self.conditioned)
        return p / p.sum()

    def unconditioned_probs(self) -> np.ndarray:
        p = np.exp(self.unconditioned)
        return p / p.sum()


@dataclass(frozen=True)
class SessionDescriptor:
    """Static facts about a session's token space."""

    vocab_size: int
    bos_id: int
    eos_id: int
    model_name: str = "unknown"

    def __post_init__(self):
        if self.vocab_size < 2:
            raise FrameError("vocab_size must be >= 2")
        for name, tok in (("bos_id", self.bos_id), ("eos_id", self.eos_id)):
            if not 0 <= tok < self.vocab_size:
                raise FrameError(f"{name}={tok} outside [0, {self.vocab_size})")
        if self.bos_id == self.eos_id:
            raise FrameError("bos_id and eos_id must differ")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "bos_id": self.bos_id,
            "eos_id": self.eos_id,
            "model_name": self.model_name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionDescriptor":
        return cls(
            vocab_size=int(d["vocab_size"]),
            bos_id=int(d["bos_id"]),
            eos_id=int(d["eos_id"]),
            model_name=str(d.get("model_name", "unknown")),
        )


class ModelSession(abc.ABC):
    """A source of paired next-token log-probability vectors.

    A session owns one prompt and one (possibly masked) context as opaque
    state. Sessions are single-consumer: one in-flight frame request at a
    time. For a fixed session, ``frame_for`` must be deterministic: repeated
    calls with identical arguments return bitwise-identical vectors.
    """

    @property
    @abc.abstractmethod
    def descriptor(self) -> SessionDescriptor: ...

    @abc.abstractmethod
    def frame_for(self, prefix: Sequence[int], include_context: bool) -> np.ndarray:
        """Next-token log-probabilities after ``prefix``.

        With ``include_context=False`` the vector must reflect the model
        evaluated with the context masked (the language-only prior).
        """

    def paired_frame(self, prefix: Sequence[int]) -> LogitFrame:
        return LogitFrame(
            conditioned=self.frame_for(prefix, True),
            unconditioned=self.frame_for(prefix, False),
        )

    def close(self) -> None:
        """Release any transport or cache the session holds."""

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
