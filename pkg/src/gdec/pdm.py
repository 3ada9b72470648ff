"""Prompt-dependency measures over paired distributions.

The dependency of a prediction on its context is measured as a distance
between the conditioned and unconditioned next-token distributions
(Hellinger by default), or as the rank the unconditioned distribution
assigns to the conditioned argmax token. KL is directed: measuring
dependency means KL(conditioned || unconditioned), how far the informed
prediction moves away from the prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import DataError, DomainError, InsufficientDataError

if TYPE_CHECKING:  # pragma: no cover
    from .decoding import GenerationTrace
    from .frames import LogitFrame

DISTANCE_KINDS = ("hellinger", "total_variation", "kl")
SERIES_KINDS = DISTANCE_KINDS + ("rank",)

PROB_SUM_TOL = 1e-6

# Positions reached by fewer than this fraction of traces are dropped when
# aggregating, to avoid long-tail noise from the few longest generations.
AGGREGATE_MIN_COVERAGE = 0.25


def _check_distribution(v, what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DomainError(f"{what}: expected a 1-D probability vector")
    if np.isnan(arr).any() or (arr < 0.0).any():
        raise DomainError(f"{what}: entries must be >= 0")
    if abs(float(arr.sum()) - 1.0) > PROB_SUM_TOL:
        raise DomainError(f"{what}: not normalized (sum = {float(arr.sum()):.9f})")
    return arr


def distance(p, q, kind: str = "hellinger") -> float:
    """Distance between two discrete distributions of equal length.

    hellinger and total_variation lie in [0, 1]; kl is the directed
    divergence sum(p * ln(p/q)) with 0-mass p terms contributing 0 and
    q_i = 0 < p_i giving +inf.
    """
    if kind not in DISTANCE_KINDS:
        raise DomainError(f"unknown distance kind {kind!r}")
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise DomainError(f"length mismatch: {p.shape[0]} vs {q.shape[0]}")
    if kind == "hellinger":
        d = np.sqrt(p) - np.sqrt(q)
        return min(1.0, math.sqrt(0.5 * float(np.dot(d, d))))
    if kind == "total_variation":
        return min(1.0, 0.5 * float(np.abs(p - q).sum()))
    mask = p > 0.0
    if (q[mask] == 0.0).any():
        return math.inf
    return max(0.0, float(np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def pdm_h(frame: "LogitFrame") -> float:
    """Hellinger distance between the frame's two distributions."""
    return distance(frame.conditioned_probs(), frame.unconditioned_probs(), "hellinger")


def pdm_r(frame: "LogitFrame") -> int:
    """Rank (1 = best) of the conditioned argmax under the unconditioned side.

    Ties in unconditioned values rank the lower token id first.
    """
    i = int(np.argmax(frame.conditioned))
    u = frame.unconditioned
    better = int(np.count_nonzero(u > u[i]))
    earlier_ties = int(np.count_nonzero(u[:i] == u[i]))
    return 1 + better + earlier_ties


@dataclass(frozen=True)
class PdmSeries:
    """Per-position dependency values, optionally with coverage counts."""

    entries: tuple[tuple[int, float], ...]
    kind: str
    counts: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in SERIES_KINDS:
            raise DomainError(f"unknown series kind {self.kind!r}")
        entries = tuple((int(t), float(v)) for t, v in self.entries)
        steps = [t for t, _ in entries]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise DomainError("series positions must be strictly increasing")
        object.__setattr__(self, "entries", entries)
        if self.counts is not None:
            counts = tuple(int(n) for n in self.counts)
            if len(counts) != len(entries):
                raise DomainError("counts length must match entries")
            object.__setattr__(self, "counts", counts)

    def positions(self) -> np.ndarray:
        return np.array([t for t, _ in self.entries], dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.entries], dtype=np.float64)


@dataclass(frozen=True)
class DecayFit:
    lambda_hat: float
    intercept: float
    r_squared: float


def estimate_decay_rate(series: PdmSeries) -> DecayFit:
    """Fit value_t ~ exp(intercept - lambda_hat * t) by least squares on ln(value).

    Requires at least 8 strictly positive values.
    """
    if len(series.entries) < 8:
        raise InsufficientDataError(
            f"need at least 8 points to fit a decay rate, got {len(series.entries)}"
        )
    for idx, (_, v) in enumerate(series.entries):
        if v <= 0.0:
            raise DomainError(f"non-positive value at series index {idx}: {v!r}")
    t = series.positions().astype(np.float64)
    y = np.log(series.values())
    tc = t - t.mean()
    yc = y - y.mean()
    sxx = float(np.dot(tc, tc))
    slope = float(np.dot(tc, yc)) / sxx
    intercept = float(y.mean() - slope * t.mean())
    resid = y - (slope * t + intercept)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(yc, yc))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return DecayFit(lambda_hat=-slope, intercept=intercept, r_squared=r2)


def trace_series(trace: "GenerationTrace", kind: str = "hellinger") -> PdmSeries:
    """Per-step dependency values recorded in a trace (hellinger or rank)."""
    if not trace.steps:
        raise DataError("empty trace")
    if kind == "hellinger":
        entries = tuple((s.t, s.pdm_h) for s in trace.steps)
    elif kind == "rank":
        entries = tuple((s.t, float(s.pdm_r)) for s in trace.steps)
    else:
        raise DomainError(f"traces record only hellinger and rank, not {kind!r}")
    return PdmSeries(entries=entries, kind=kind)


def aggregate_traces(
    traces: Sequence["GenerationTrace"],
    kind: str = "hellinger",
    min_coverage: float = AGGREGATE_MIN_COVERAGE,
) -> PdmSeries:
    """Align per-trace series by position and average.

    Positions covered by fewer than ``min_coverage`` of the traces are
    dropped.
    """
    if not traces:
        raise DataError("no traces to aggregate")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for trace in traces:
        for t, v in trace_series(trace, kind).entries:
            sums[t] = sums.get(t, 0.0) + v
            counts[t] = counts.get(t, 0) + 1
    cutoff = min_coverage * len(traces)
    kept = [t for t in sorted(sums) if counts[t] >= cutoff]
    return PdmSeries(
        entries=tuple((t, sums[t] / counts[t]) for t in kept),
        kind=kind,
        counts=tuple(counts[t] for t in kept),
    )


def series_to_csv(series: PdmSeries) -> str:
    """Render a series as CSV with header ``t,value,kind,n``."""
    lines = ["t,value,kind,n"]
    counts = series.counts or (1,) * len(series.entries)
    for (t, v), n in zip(series.entries, counts):
        lines.append(f"{t},{v!r},{series.kind},{n}")
    return "\n".join(lines) + "\n"


def mean_series(aligned: Iterable[tuple[int, float]]) -> float:
    vals = [v for _, v in aligned]
    if not vals:
        raise DataError("empty series slice")
    return float(np.mean(vals))
