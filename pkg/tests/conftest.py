import math

import numpy as np
import pytest

from gdec.decoding import DecoderConfig, GenerationTrace, StepRecord
from gdec.frames import LogitFrame, SessionDescriptor


def logp(probs) -> np.ndarray:
    """Exact log of a probability row; zeros become -inf."""
    arr = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log(arr)


def make_frame(cond_probs, uncond_probs) -> LogitFrame:
    return LogitFrame(conditioned=logp(cond_probs), unconditioned=logp(uncond_probs))


def onehot(vocab_size: int, token: int, mass: float = 1.0) -> list[float]:
    """Probability row concentrating `mass` on one token, rest spread evenly."""
    rest = (1.0 - mass) / (vocab_size - 1) if vocab_size > 1 else 0.0
    row = [rest] * vocab_size
    row[token] = mass
    return row


def synthetic_trace(pdm_values, kind="greedy", tokens=None, eos_id=1) -> GenerationTrace:
    """A well-formed trace whose pdm_h series is exactly `pdm_values`."""
    cfg = DecoderConfig(kind=kind, max_tokens=max(len(pdm_values), 1))
    desc = SessionDescriptor(vocab_size=16, bos_id=0, eos_id=eos_id, model_name="synthetic")
    steps = tuple(
        StepRecord(
            t=t,
            token=2 if tokens is None else tokens[t],
            gamma=math.exp(-cfg.lam * t),
            gate_active=False,
            adjusted_argmax_differs=False,
            pdm_h=float(v),
            pdm_r=1,
        )
        for t, v in enumerate(pdm_values)
    )
    terminated = "eos" if steps and steps[-1].token == eos_id else "budget"
    return GenerationTrace(config=cfg, descriptor=desc, steps=steps, terminated_by=terminated)


@pytest.fixture
def rng():
    return np.random.default_rng(20240515)
