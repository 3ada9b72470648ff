"""Score adjustment rules and the token-by-token generation loop.

Five decoder kinds share one loop. ``greedy`` and ``multinomial`` act on the
conditioned scores alone. ``m3id`` adds a time-growing multiple of
(conditioned - unconditioned), gated off while the model's top conditioned
probability is at least ``alpha``. ``pmi`` subtracts the unconditioned
scores when the conditioned distribution is high-entropy, and
``contrastive`` amplifies the conditioned/unconditioned gap inside a
plausibility band; both are time-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import pdm
from .errors import ConfigError, DecodeError, DegenerateInputError, DomainError
from .frames import LogitFrame, ModelSession, SessionDescriptor

DECODER_KINDS = ("greedy", "multinomial", "m3id", "pmi", "contrastive")


@dataclass(frozen=True)
class DecoderConfig:
    """Decoder kind plus every tunable the adjusters and selectors read.

    Fields irrelevant to ``kind`` are ignored at decode time but always
    validated for range. ``lam`` is the forgetting rate (serialized as
    "lambda"); ``t0`` shifts the schedule to account for tokens between the
    context and the first generated token. ``diff_clamp`` bounds each
    per-token conditioned/unconditioned difference before scaling and
    ``coef_cap`` bounds the (1-gamma)/gamma multiplier; both may be inf.
    """

    kind: str = "greedy"
    alpha: float = 0.3
    lam: float = 0.02
    t0: int = 0
    mu: float = 1.0
    tau: float = 0.5
    xi: float = 0.5
    psi: float = 0.1
    temperature: float = 0.2
    seed: int = 0
    max_tokens: int = 512
    diff_clamp: float = 20.0
    coef_cap: float = math.inf

    def __post_init__(self):
        if self.kind not in DECODER_KINDS:
            raise ConfigError(f"unknown decoder kind {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha!r}")
        if not self.lam >= 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam!r}")
        if not (isinstance(self.t0, int) and self.t0 >= 0):
            raise ConfigError(f"t0 must be a non-negative integer, got {self.t0!r}")
        if not self.mu >= 0.0:
            raise ConfigError(f"mu must be >= 0, got {self.mu!r}")
        if not self.tau >= 0.0:
            raise ConfigError(f"tau must be >= 0, got {self.tau!r}")
        if not self.xi >= 0.0:
            raise ConfigError(f"xi must be >= 0, got {self.xi!r}")
        if not 0.0 < self.psi <= 1.0:
            raise ConfigError(f"psi must lie in (0, 1], got {self.psi!r}")
        if not self.temperature > 0.0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature!r}")
        if not (isinstance(self.max_tokens, int) and self.max_tokens >= 1):
            raise ConfigError(f"max_tokens must be a positive integer, got {self.max_tokens!r}")
        if not self.diff_clamp > 0.0:
            raise ConfigError(f"diff_clamp must be > 0, got {self.diff_clamp!r}")
        if not self.coef_cap > 0.0:
            raise ConfigError(f"coef_cap must be > 0, got {self.coef_cap!r}")

    def gamma(self, t: int) -> float:
        """Mixing coefficient exp(-lambda * (t + t0)) at step t."""
        return math.exp(-self.lam * (t + self.t0))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "lambda": self.lam,
            "t0": self.t0,
            "mu": self.mu,
            "tau": self.tau,
            "xi": self.xi,
            "psi": self.psi,
            "temperature": self.temperature,
            "seed": self.seed,
            "max_tokens": self.max_tokens,
            "diff_clamp": None if math.isinf(self.diff_clamp) else self.diff_clamp,
            "coef_cap": None if math.isinf(self.coef_cap) else self.coef_cap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        known = {
            "kind", "alpha", "lambda", "lam", "t0", "mu", "tau", "xi", "psi",
            "temperature", "seed", "max_tokens", "diff_clamp", "coef_cap",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown decoder config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "lambda" in kwargs:
            kwargs["lam"] = kwargs.pop("lambda")
        for cap in ("diff_clamp", "coef_cap"):
            if kwargs.get(cap, 0) is None:
                kwargs[cap] = math.inf
        for intfield in ("t0", "seed", "max_tokens"):
            if intfield in kwargs:
                kwargs[intfield] = int(kwargs[intfield])
        return cls(**kwargs)


def shannon_entropy(dist) -> float:
    """Entropy -sum(p ln p) in nats, with 0 ln 0 = 0."""
    arr = np.asarray(dist, dtype=np.float64)
    if arr.ndim != 1 or np.isnan(arr).any() or (arr < 0.0).any():
        raise DomainError("entropy needs a vector of non-negative entries")
    if abs(float(arr.sum()) - 1.0) > 1e-6:
        raise DomainError(f"entropy input not normalized (sum = {float(arr.sum()):.9f})")
    pos = arr > 0.0
    return float(-np.sum(arr[pos] * np.log(arr[pos])))


def m3id_gate(frame: LogitFrame, cfg: DecoderConfig) -> bool:
    """True when the correction applies: max conditioned prob < alpha (strict)."""
    threshold = math.log(cfg.alpha) if cfg.alpha > 0.0 else -math.inf
    return bool(np.max(frame.conditioned) < threshold)


def m3id_adjust(frame: LogitFrame, t: int, cfg: DecoderConfig) -> np.ndarray:
    """Conditioned scores plus the gated, time-growing grounding correction.

    Returns l_c + g * kappa * clip(l_c - l_u) where g is the confidence gate,
    kappa = min((1-gamma_t)/gamma_t, coef_cap), and each difference is
    clamped to [-diff_clamp, +diff_clamp]. Tokens with l_c = -inf stay -inf.
    """
    if cfg.kind != "m3id":
        raise ConfigError(f"m3id_adjust needs kind='m3id', got {cfg.kind!r}")
    lc = frame.conditioned
    # (1 - gamma) / gamma with gamma = exp(-lam (t + t0)), computed stably;
    # saturates to +inf once gamma underflows.
    try:
        kappa = math.expm1(cfg.lam * (t + cfg.t0))
    except OverflowError:
        kappa = math.inf
    kappa = min(kappa, cfg.coef_cap)
    if kappa == 0.0 or not m3id_gate(frame, cfg):
        return lc.copy()
    neg = np.isneginf(lc)
    with np.errstate(invalid="ignore"):
        diff = lc - frame.unconditioned
    diff = np.clip(diff, -cfg.diff_clamp, cfg.diff_clamp)
    diff = np.where(neg, 0.0, diff)
    if math.isinf(kappa):
        with np.errstate(invalid="ignore"):  # inf * 0 in the masked branch
            correction = np.where(diff == 0.0, 0.0, kappa * diff)
    else:
        correction = kappa * diff
    return np.where(neg, -np.inf, lc + correction)


def pmi_adjust(frame: LogitFrame, cfg: DecoderConfig) -> np.ndarray:
    """Conditioned scores minus mu * unconditioned, applied only when the
    conditioned distribution's entropy reaches tau. -inf entries of l_c stay."""
    if cfg.kind != "pmi":
        raise ConfigError(f"pmi_adjust needs kind='pmi', got {cfg.kind!r}")
    lc = frame.conditioned
    if cfg.mu == 0.0 or shannon_entropy(frame.conditioned_probs()) < cfg.tau:
        return lc.copy()
    neg = np.isneginf(lc)
    with np.errstate(invalid="ignore"):
        out = lc - cfg.mu * frame.unconditioned
    return np.where(neg, -np.inf, out)


def contrastive_adjust(frame: LogitFrame, cfg: DecoderConfig) -> np.ndarray:
    """(1+xi) l_c - xi l_u on the plausibility band, -inf elsewhere.

    A token is plausible when l_c is within ln(psi) of the conditioned
    maximum; the argmax always qualifies, so the band is never empty.
    """
    if cfg.kind != "contrastive":
        raise ConfigError(f"contrastive_adjust needs kind='contrastive', got {cfg.kind!r}")
    lc = frame.conditioned
    lu = frame.unconditioned
    plausible = lc >= math.log(cfg.psi) + np.max(lc)
    if cfg.xi == 0.0:
        return np.where(plausible, lc, -np.inf)
    with np.errstate(invalid="ignore"):
        scores = (1.0 + cfg.xi) * lc - cfg.xi * lu
    return np.where(plausible, scores, -np.inf)


def adjust_scores(frame: LogitFrame, t: int, cfg: DecoderConfig) -> np.ndarray:
    """Dispatch to the adjuster for cfg.kind (identity for greedy/multinomial)."""
    if cfg.kind == "m3id":
        return m3id_adjust(frame, t, cfg)
    if cfg.kind == "pmi":
        return pmi_adjust(frame, cfg)
    if cfg.kind == "contrastive":
        return contrastive_adjust(frame, cfg)
    return frame.conditioned


def select_greedy(scores) -> int:
    """Index of the maximal score; ties break toward the lowest token id."""
    arr = np.asarray(scores, dtype=np.float64)
    if np.isnan(arr).any():
        raise DomainError("scores contain NaN")
    if float(np.max(arr)) == -math.inf:
        raise DegenerateInputError("all scores are -inf")
    return int(np.argmax(arr))


def select_multinomial(scores, temperature: float, rng: np.random.Generator) -> int:
    """Sample from softmax(scores / temperature) by inverse CDF over token ids.

    The CDF walk over the fixed id ordering makes a given seed produce the
    same token everywhere; zero-probability tokens are never selected.
    """
    if not temperature > 0.0:
        raise DomainError(f"temperature must be > 0, got {temperature!r}")
    arr = np.asarray(scores, dtype=np.float64)
    if np.isnan(arr).any() or np.isposinf(arr).any():
        raise DomainError("scores must be finite or -inf")
    m = float(np.max(arr))
    if m == -math.inf:
        raise DegenerateInputError("all scores are -inf")
    z = (arr - m) / temperature
    p = np.exp(z)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    u = rng.random()
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, arr.shape[0] - 1)


@dataclass(frozen=True)
class StepRecord:
    """One decode step: the choice made and the diagnostics around it."""

    t: int
    token: int
    gamma: float
    gate_active: bool
    adjusted_argmax_differs: bool
    pdm_h: float
    pdm_r: int

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "token": self.token,
            "gamma": self.gamma,
            "gate_active": self.gate_active,
            "adjusted_argmax_differs": self.adjusted_argmax_differs,
            "pdm_h": self.pdm_h,
            "pdm_r": self.pdm_r,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(
            t=int(d["t"]),
            token=int(d["token"]),
            gamma=float(d["gamma"]),
            gate_active=bool(d["gate_active"]),
            adjusted_argmax_differs=bool(d["adjusted_argmax_differs"]),
            pdm_h=float(d["pdm_h"]),
            pdm_r=int(d["pdm_r"]),
        )


@dataclass(frozen=True)
class GenerationTrace:
    """The unit of persistence: config, session identity, and all steps."""

    config: DecoderConfig
    descriptor: SessionDescriptor
    steps: tuple[StepRecord, ...]
    terminated_by: str  # "eos" | "budget"

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.terminated_by not in ("eos", "budget"):
            raise DomainError(f"terminated_by must be eos or budget, got {self.terminated_by!r}")
        if len(self.steps) > self.config.max_tokens:
            raise DomainError("trace longer than max_tokens")
        ended_on_eos = bool(self.steps) and self.steps[-1].token == self.descriptor.eos_id
        if ended_on_eos != (self.terminated_by == "eos"):
            raise DomainError("terminated_by inconsistent with final token")

    def tokens(self) -> tuple[int, ...]:
        return tuple(s.token for s in self.steps)


def decode(session: ModelSession, cfg: DecoderConfig) -> GenerationTrace:
    """Generate until eos or the token budget, recording one StepRecord per step.

    Both frames are requested each step; scores are adjusted per cfg.kind and
    the next token chosen greedily (sampled for kind='multinomial'). Session
    failures re-raise as DecodeError carrying the partial trace.
    """
    desc = session.descriptor
    rng = np.random.default_rng(cfg.seed)
    prefix: list[int] = [desc.bos_id]
    steps: list[StepRecord] = []
    terminated = "budget"
    for t in range(cfg.max_tokens):
        try:
            frame = session.paired_frame(prefix)
            scores = adjust_scores(frame, t, cfg)
            if cfg.kind == "multinomial":
                token = select_multinomial(scores, cfg.temperature, rng)
            else:
                token = select_greedy(scores)
            differs = (
                scores is not frame.conditioned
                and select_greedy(scores) != select_greedy(frame.conditioned)
            )
            record = StepRecord(
                t=t,
                token=token,
                gamma=cfg.gamma(t),
                gate_active=cfg.kind == "m3id" and m3id_gate(frame, cfg),
                adjusted_argmax_differs=differs,
                pdm_h=pdm.pdm_h(frame),
                pdm_r=pdm.pdm_r(frame),
            )
        except Exception as exc:
            partial = GenerationTrace(
                config=cfg, descriptor=desc, steps=tuple(steps), terminated_by="budget"
            )
            raise DecodeError(f"session failed at step {t}: {exc}", partial) from exc
        steps.append(record)
        prefix.append(token)
        if token == desc.eos_id:
            terminated = "eos"
            break
    return GenerationTrace(
        config=cfg, descriptor=desc, steps=tuple(steps), terminated_by=terminated
    )
