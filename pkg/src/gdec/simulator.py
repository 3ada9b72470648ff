"""Synthetic fading-memory autoregressive model with known ground truth.

The conditioned side interpolates, in logit space, between a "grounded"
table that knows which object tokens belong to the image and a prior table
that does not: conditioned = log_softmax(g_t * z_v + (1 - g_t) * z_l + noise)
with g_t = exp(-lambda_star * t). Both tables are hash-derived from the last
two prefix tokens, so the process is Markovian but non-trivial, and the
grounded table itself (the "oracle") is available for verification.

Hallucination has a checkable meaning here: emitting an object token outside
the grounded subset chosen for the image seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import log_softmax

from . import pdm
from .decoding import DecoderConfig, adjust_scores, select_greedy, select_multinomial
from .errors import ConfigError, DomainError
from .frames import LogitFrame

# Reserved token ids; both tables suppress them so generations never emit
# control tokens and experiments always run to their horizon.
BOS_ID = 0
EOS_ID = 1

PRIOR_SCALE = 0.5
GROUNDED_SCALE = 0.5
# Grounded-object boost is larger when the previous token is itself grounded
# ("topic continuity"); this is what lets grounding-aware decoders sustain a
# measurably higher prompt dependency than greedy decoding.
BOOST_ON_TOPIC = 1.3
BOOST_OFF_TOPIC = 1.0
UNGROUNDED_PENALTY = 1.0
SPECIAL_PENALTY = 10.0

_TAG_PRIOR = 101
_TAG_GROUNDED = 202
_TAG_NOISE = 303
_TAG_GROUNDED_SET = 404
_TAG_RUN = 505
_TAG_SAMPLER = 606

_SEED_MOD = 2**63


def _nonneg(seed: int) -> int:
    return int(seed) % _SEED_MOD


@dataclass(frozen=True)
class SimSpec:
    """Everything that determines the synthetic model's behavior."""

    vocab_size: int = 64
    lambda_star: float = 0.02
    image_seed: int = 0
    prior_seed: int = 1
    grounded_fraction: float = 0.25
    object_token_ids: tuple[int, ...] | None = None
    noise_sigma: float = 0.0
    horizon: int = 200

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must be >= 4")
        if not self.lambda_star >= 0.0:
            raise ConfigError(f"lambda_star must be >= 0, got {self.lambda_star!r}")
        if not 0.0 < self.grounded_fraction < 1.0:
            raise ConfigError("grounded_fraction must lie in (0, 1)")
        if not self.noise_sigma >= 0.0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        ids = self.object_token_ids
        if ids is None:
            ids = tuple(range(self.vocab_size // 2, self.vocab_size))
        ids = tuple(int(i) for i in ids)
        if not ids:
            raise ConfigError("object_token_ids must be non-empty")
        if len(set(ids)) != len(ids):
            raise ConfigError("object_token_ids contains duplicates")
        if any(not 0 <= i < self.vocab_size for i in ids):
            raise ConfigError("object_token_ids outside the vocabulary")
        object.__setattr__(self, "object_token_ids", ids)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "lambda_star": self.lambda_star,
            "image_seed": self.image_seed,
            "prior_seed": self.prior_seed,
            "grounded_fraction": self.grounded_fraction,
            "object_token_ids": list(self.object_token_ids),
            "noise_sigma": self.noise_sigma,
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        known = {
            "vocab_size", "lambda_star", "image_seed", "prior_seed",
            "grounded_fraction", "object_token_ids", "noise_sigma", "horizon",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown simulator keys: {sorted(unknown)}")
        kwargs = dict(d)
        if kwargs.get("object_token_ids") is not None:
            kwargs["object_token_ids"] = tuple(int(i) for i in kwargs["object_token_ids"])
        for intfield in ("vocab_size", "image_seed", "prior_seed", "horizon"):
            if intfield in kwargs:
                kwargs[intfield] = int(kwargs[intfield])
        return cls(**kwargs)


def grounded_set(spec: SimSpec) -> frozenset[int]:
    """The object tokens actually present "in the image" for image_seed."""
    ids = sorted(spec.object_token_ids)
    size = max(1, round(spec.grounded_fraction * len(ids)))
    rng = np.random.default_rng(
        np.random.SeedSequence([_TAG_GROUNDED_SET, _nonneg(spec.image_seed)])
    )
    picked = rng.choice(len(ids), size=size, replace=False)
    return frozenset(ids[i] for i in picked)


@lru_cache(maxsize=65536)
def _gaussian(tag: int, seed: int, vocab_size: int, suffix: tuple[int, ...]) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([tag, seed, *suffix]))
    out = rng.standard_normal(vocab_size)
    out.setflags(write=False)
    return out


def _suffix(prefix: Sequence[int]) -> tuple[int, ...]:
    return tuple(int(x) for x in prefix[-2:])


def prior_logits(spec: SimSpec, prefix: Sequence[int]) -> np.ndarray:
    z = PRIOR_SCALE * _gaussian(_TAG_PRIOR, _nonneg(spec.prior_seed), spec.vocab_size, _suffix(prefix))
    z[BOS_ID] -= SPECIAL_PENALTY
    z[EOS_ID] -= SPECIAL_PENALTY
    return z


def grounded_logits(spec: SimSpec, prefix: Sequence[int]) -> np.ndarray:
    suffix = _suffix(prefix)
    z = GROUNDED_SCALE * _gaussian(_TAG_GROUNDED, _nonneg(spec.image_seed), spec.vocab_size, suffix)
    grounded = grounded_set(spec)
    boost = BOOST_ON_TOPIC if (suffix and suffix[-1] in grounded) else BOOST_OFF_TOPIC
    for tok in spec.object_token_ids:
        if tok in grounded:
            z[tok] += boost
        else:
            z[tok] -= UNGROUNDED_PENALTY
    z[BOS_ID] -= SPECIAL_PENALTY
    z[EOS_ID] -= SPECIAL_PENALTY
    return z


def frame_at(spec: SimSpec, prefix: Sequence[int], t: int) -> tuple[LogitFrame, np.ndarray]:
    """Observed frame and the grounded oracle's log-probabilities at step t."""
    if not 0 <= t <= spec.horizon:
        raise DomainError(f"step {t} outside [0, horizon={spec.horizon}]")
    z_l = prior_logits(spec, prefix)
    z_v = grounded_logits(spec, prefix)
    gamma = math.exp(-spec.lambda_star * t)
    mixed = gamma * z_v + (1.0 - gamma) * z_l
    uncond = z_l
    if spec.noise_sigma > 0.0:
        noise = spec.noise_sigma * _gaussian(
            _TAG_NOISE,
            _nonneg(spec.image_seed * 1_000_003 + spec.prior_seed),
            spec.vocab_size,
            (t, *_suffix(prefix)),
        )
        mixed = mixed + noise
        uncond = uncond + noise
    frame = LogitFrame(
        conditioned=log_softmax(mixed),
        unconditioned=log_softmax(uncond),
    )
    oracle = log_softmax(z_v)
    oracle.setflags(write=False)
    return frame, oracle


def _softmax(scores: np.ndarray) -> np.ndarray:
    m = float(np.max(scores))
    e = np.exp(scores - m)
    return e / e.sum()


def _derived_seed(*parts: int) -> int:
    ss = np.random.SeedSequence([_nonneg(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ArmReport:
    """Per-position aggregates for one decoder config across all runs."""

    label: str
    config: DecoderConfig
    mean_pdm_h: tuple[float, ...]
    mean_pdm_r: tuple[float, ...]
    halluc_counts: tuple[int, ...]
    object_counts: tuple[int, ...]
    mean_kl_adjusted: tuple[float, ...]
    mean_kl_conditioned: tuple[float, ...]

    @property
    def hallucination_rate(self) -> float:
        objects = sum(self.object_counts)
        return sum(self.halluc_counts) / objects if objects else 0.0

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "config": self.config.to_dict(),
            "series": {
                "mean_pdm_h": list(self.mean_pdm_h),
                "mean_pdm_r": list(self.mean_pdm_r),
                "halluc_counts": list(self.halluc_counts),
                "object_counts": list(self.object_counts),
                "mean_kl_adjusted": list(self.mean_kl_adjusted),
                "mean_kl_conditioned": list(self.mean_kl_conditioned),
            },
            "hallucination_rate": self.hallucination_rate,
            "mean_pdm_h_overall": float(np.mean(self.mean_pdm_h)),
            "mean_kl_adjusted_overall": float(np.mean(self.mean_kl_adjusted)),
            "mean_kl_conditioned_overall": float(np.mean(self.mean_kl_conditioned)),
        }


@dataclass(frozen=True)
class ExperimentReport:
    spec: SimSpec
    master_seed: int
    n_runs: int
    arms: tuple[ArmReport, ...]

    def arm(self, label: str) -> ArmReport:
        for a in self.arms:
            if a.label == label:
                return a
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "master_seed": self.master_seed,
            "n_runs": self.n_runs,
            "arms": [a.to_dict() for a in self.arms],
        }

    def to_json(self, extra_header: dict | None = None) -> str:
        payload = dict(extra_header or {})
        payload.update(self.to_dict())
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    def series_csv(self) -> str:
        cols = (
            "mean_pdm_h", "mean_pdm_r", "halluc_counts", "object_counts",
            "mean_kl_adjusted", "mean_kl_conditioned",
        )
        lines = ["arm,t," + ",".join(cols)]
        for a in self.arms:
            rows = zip(
                a.mean_pdm_h, a.mean_pdm_r, a.halluc_counts, a.object_counts,
                a.mean_kl_adjusted, a.mean_kl_conditioned,
            )
            for t, row in enumerate(rows):
                lines.append(f"{a.label},{t}," + ",".join(repr(x) for x in row))
        return "\n".join(lines) + "\n"


def _arm_labels(configs: Sequence[DecoderConfig]) -> list[str]:
    seen: dict[str, int] = {}
    labels = []
    for cfg in configs:
        n = seen.get(cfg.kind, 0)
        seen[cfg.kind] = n + 1
        labels.append(cfg.kind if n == 0 else f"{cfg.kind}-{n + 1}")
    return labels


def run_experiment(
    spec: SimSpec,
    configs: Sequence[DecoderConfig],
    n_runs: int,
    seed: int = 0,
) -> ExperimentReport:
    """Decode every config over n_runs independently seeded simulator models.

    All arms of a run share the same tables, so comparisons are paired. Per
    position, reports mean PDM-H/PDM-R, counts of emitted object tokens and
    of ungrounded ones among them, and the divergence of both the adjusted
    scores and the raw conditioned side from the grounded oracle.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    if not configs:
        raise ConfigError("at least one decoder config required")
    labels = _arm_labels(configs)
    horizon = spec.horizon
    n_arms = len(configs)
    sum_h = np.zeros((n_arms, horizon))
    sum_r = np.zeros((n_arms, horizon))
    halluc = np.zeros((n_arms, horizon), dtype=np.int64)
    objects = np.zeros((n_arms, horizon), dtype=np.int64)
    sum_kl_adj = np.zeros((n_arms, horizon))
    sum_kl_cond = np.zeros((n_arms, horizon))

    object_ids = frozenset(spec.object_token_ids)
    for r in range(n_runs):
        run_spec = replace(
            spec,
            image_seed=_derived_seed(_TAG_RUN, 1, spec.image_seed, seed, r),
            prior_seed=_derived_seed(_TAG_RUN, 2, spec.prior_seed, seed, r),
        )
        grounded = grounded_set(run_spec)
        for ai, cfg in enumerate(configs):
            rng = np.random.default_rng(
                np.random.SeedSequence([_TAG_SAMPLER, _nonneg(seed), r, ai, _nonneg(cfg.seed)])
            )
            prefix = [BOS_ID]
            for t in range(horizon):
                frame, oracle = frame_at(run_spec, prefix, t)
                scores = adjust_scores(frame, t, cfg)
                if cfg.kind == "multinomial":
                    token = select_multinomial(scores, cfg.temperature, rng)
                else:
                    token = select_greedy(scores)
                oracle_p = _softmax(oracle)
                sum_h[ai, t] += pdm.pdm_h(frame)
                sum_r[ai, t] += pdm.pdm_r(frame)
                sum_kl_adj[ai, t] += pdm.distance(oracle_p, _softmax(scores), "kl")
                sum_kl_cond[ai, t] += pdm.distance(oracle_p, frame.conditioned_probs(), "kl")
                if token in object_ids:
                    objects[ai, t] += 1
                    if token not in grounded:
                        halluc[ai, t] += 1
                prefix.append(token)

    arms = tuple(
        ArmReport(
            label=labels[ai],
            config=configs[ai],
            mean_pdm_h=tuple(float(x) for x in sum_h[ai] / n_runs),
            mean_pdm_r=tuple(float(x) for x in sum_r[ai] / n_runs),
            halluc_counts=tuple(int(x) for x in halluc[ai]),
            object_counts=tuple(int(x) for x in objects[ai]),
            mean_kl_adjusted=tuple(float(x) for x in sum_kl_adj[ai] / n_runs),
            mean_kl_conditioned=tuple(float(x) for x in sum_kl_cond[ai] / n_runs),
        )
        for ai in range(n_arms)
    )
    return ExperimentReport(spec=spec, master_seed=seed, n_runs=n_runs, arms=arms)
