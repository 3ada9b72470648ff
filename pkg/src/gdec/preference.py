"""Preference-pair generation and the preference-optimization loss.

Preferred continuations come from a context-grounded decode; rejected ones
keep the preferred continuation's first sentence and then continue from the
unconditioned side only, so the pair differs exactly where the context
stopped mattering. The loss and the Bradley-Terry preference probability
are pure functions of sequence log-probabilities.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Collection, Iterable, Sequence

import numpy as np

from .decoding import DecoderConfig, decode, select_greedy, select_multinomial
from .errors import ConfigError, DomainError
from .frames import ModelSession

logger = logging.getLogger("gdec.preference")


@dataclass(frozen=True)
class PreferencePair:
    """(context ref, prompt, preferred tokens, rejected tokens) plus provenance."""

    image_ref: str
    prompt: tuple[int, ...]
    preferred: tuple[int, ...]
    rejected: tuple[int, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(int(x) for x in self.prompt))
        object.__setattr__(self, "preferred", tuple(int(x) for x in self.preferred))
        object.__setattr__(self, "rejected", tuple(int(x) for x in self.rejected))
        if self.preferred == self.rejected:
            raise DomainError("preferred and rejected continuations are identical")
        k = self.provenance.get("first_sentence_len")
        if k is not None and self.rejected[: int(k)] != self.preferred[: int(k)]:
            raise DomainError("rejected must start with the preferred first sentence")

    def to_dict(self) -> dict:
        return {
            "image_ref": self.image_ref,
            "prompt_tokens": list(self.prompt),
            "preferred_tokens": list(self.preferred),
            "rejected_tokens": list(self.rejected),
            "provenance": self.provenance,
        }


@dataclass(frozen=True)
class BuildResult:
    pairs: tuple[PreferencePair, ...]
    dropped_identical: int
    skipped_no_terminator: int


def _as_terminator_rule(sentence_rule) -> Callable[[int], bool]:
    if callable(sentence_rule):
        return sentence_rule
    terminators = frozenset(int(t) for t in sentence_rule)
    if not terminators:
        raise ConfigError("sentence_rule must name at least one terminator token")
    return lambda tok: tok in terminators


def _continue_unconditioned(
    session: ModelSession, start: list[int], cfg: DecoderConfig
) -> list[int]:
    """Extend ``start`` using only unconditioned frames, greedy or sampled."""
    if cfg.kind not in ("greedy", "multinomial"):
        raise ConfigError(
            f"rejected continuations decode from the prior alone; kind={cfg.kind!r} "
            "needs paired frames"
        )
    rng = np.random.default_rng(cfg.seed)
    eos = session.descriptor.eos_id
    prefix = list(start)
    out: list[int] = []
    for _ in range(cfg.max_tokens):
        scores = session.frame_for(prefix, False)
        if cfg.kind == "multinomial":
            token = select_multinomial(scores, cfg.temperature, rng)
        else:
            token = select_greedy(scores)
        out.append(token)
        prefix.append(token)
        if token == eos:
            break
    return out


def build_pairs(
    sessions: Iterable[tuple[str, ModelSession]],
    cfg_preferred: DecoderConfig,
    cfg_rejected: DecoderConfig,
    sentence_rule: Collection[int] | Callable[[int], bool],
) -> BuildResult:
    """One pair per session: grounded decode vs prior-only continuation of its
    first sentence.

    Sessions whose preferred continuation has no sentence terminator are
    skipped; pairs whose two continuations coincide are dropped. Both
    counters are reported.
    """
    is_terminator = _as_terminator_rule(sentence_rule)
    pairs: list[PreferencePair] = []
    dropped = 0
    skipped = 0
    for image_ref, session in sessions:
        trace = decode(session, cfg_preferred)
        preferred = list(trace.tokens())
        sentence_end = next((i for i, tok in enumerate(preferred) if is_terminator(tok)), None)
        if sentence_end is None:
            skipped += 1
            logger.info("skipping %s: no sentence terminator in %d tokens",
                        image_ref, len(preferred))
            continue
        sentence = preferred[: sentence_end + 1]
        start = [session.descriptor.bos_id] + sentence
        rejected = sentence + _continue_unconditioned(session, start, cfg_rejected)
        if rejected == preferred:
            dropped += 1
            continue
        pairs.append(
            PreferencePair(
                image_ref=image_ref,
                prompt=(session.descriptor.bos_id,),
                preferred=tuple(preferred),
                rejected=tuple(rejected),
                provenance={
                    "preferred_decoder": cfg_preferred.to_dict(),
                    "rejected_decoder": cfg_rejected.to_dict(),
                    "first_sentence_len": len(sentence),
                },
            )
        )
    return BuildResult(
        pairs=tuple(pairs), dropped_identical=dropped, skipped_no_terminator=skipped
    )


def pairs_jsonl(result: BuildResult, extra_header: dict | None = None) -> str:
    header = {
        "format": "gdec.pairs",
        "version": 1,
        "pairs": len(result.pairs),
        "dropped_identical": result.dropped_identical,
        "skipped_no_terminator": result.skipped_no_terminator,
    }
    if extra_header:
        header.update(extra_header)
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines += [
        json.dumps(p.to_dict(), sort_keys=True, separators=(",", ":"))
        for p in result.pairs
    ]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DpoInputs:
    """Sequence log-probabilities (nats) under the tuned and frozen models."""

    logp_theta_w: float
    logp_ref_w: float
    logp_theta_l: float
    logp_ref_l: float
    beta: float = 0.1

    def __post_init__(self):
        for name in ("logp_theta_w", "logp_ref_w", "logp_theta_l", "logp_ref_l"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if not self.beta > 0.0:
            raise DomainError(f"beta must be > 0, got {self.beta!r}")


@dataclass(frozen=True)
class DpoGradients:
    logp_theta_w: float
    logp_theta_l: float
    logp_ref_w: float
    logp_ref_l: float


def _softplus(x: float) -> float:
    # ln(1 + e^x) without overflow.
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def dpo_loss(inp: DpoInputs) -> tuple[float, DpoGradients]:
    """-ln sigmoid(beta * ((d_w) - (d_l))) with d = logp_theta - logp_ref.

    Returns the loss and its analytic gradient with respect to each of the
    four log-probabilities.
    """
    margin = (inp.logp_theta_w - inp.logp_ref_w) - (inp.logp_theta_l - inp.logp_ref_l)
    z = inp.beta * margin
    loss = _softplus(-z)
    s = _sigmoid(-z)  # d loss / d z = -sigmoid(-z)
    g = inp.beta * s
    return loss, DpoGradients(
        logp_theta_w=-g,
        logp_theta_l=+g,
        logp_ref_w=+g,
        logp_ref_l=-g,
    )


def bt_preference(reward_w: float, reward_l: float) -> float:
    """Probability the higher-reward continuation is preferred: sigmoid(r_w - r_l)."""
    if not (math.isfinite(reward_w) and math.isfinite(reward_l)):
        raise DomainError("rewards must be finite")
    return _sigmoid(reward_w - reward_l)
