"""Deterministic in-process sessions for tests and offline runs.

Three scenario families: ``uniform`` (flat distributions), ``fixed_table``
(explicit per-step probability rows), and ``fading`` (wraps the simulator,
so frames exhibit the decaying context influence with a known rate).
Scenario descriptors round-trip through JSON config files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import simulator
from .errors import ConfigError
from .frames import ModelSession, SessionDescriptor

SCENARIO_KINDS = ("uniform", "fixed_table", "fading")

# Fading mock sessions should outlive any token budget a decoder brings.
_FADING_HORIZON = 1_000_000


def _to_log_rows(rows, what: str) -> tuple[np.ndarray, ...] | None:
    if rows is None:
        return None
    out = []
    for i, row in enumerate(rows):
        arr = np.asarray(row, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] < 2:
            raise ConfigError(f"{what}[{i}]: expected a probability row of length >= 2")
        if np.isnan(arr).any() or (arr < 0.0).any():
            raise ConfigError(f"{what}[{i}]: negative or NaN probability")
        total = float(arr.sum())
        if total <= 0.0:
            raise ConfigError(f"{what}[{i}]: probabilities sum to zero")
        with np.errstate(divide="ignore"):
            log_row = np.log(arr / total)
        log_row.setflags(write=False)
        out.append(log_row)
    if not out:
        raise ConfigError(f"{what}: table must have at least one row")
    return tuple(out)


@dataclass(frozen=True)
class MockScenario:
    """Named generator for mock frames; serializable into config files."""

    kind: str
    conditioned: tuple | None = None
    unconditioned: tuple | None = None
    lambda_star: float = 0.02
    grounded_fraction: float = 0.25
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "fixed_table":
            if self.conditioned is None or self.unconditioned is None:
                raise ConfigError("fixed_table needs conditioned and unconditioned rows")
        if self.kind == "fading":
            if not self.lambda_star >= 0.0:
                raise ConfigError("fading scenario needs lambda_star >= 0")

    @classmethod
    def uniform(cls) -> "MockScenario":
        return cls(kind="uniform")

    @classmethod
    def fixed_table(cls, conditioned, unconditioned) -> "MockScenario":
        return cls(
            kind="fixed_table",
            conditioned=tuple(tuple(float(x) for x in row) for row in conditioned),
            unconditioned=tuple(tuple(float(x) for x in row) for row in unconditioned),
        )

    @classmethod
    def fading(cls, lambda_star: float = 0.02, grounded_fraction: float = 0.25,
               noise_sigma: float = 0.0) -> "MockScenario":
        return cls(
            kind="fading",
            lambda_star=lambda_star,
            grounded_fraction=grounded_fraction,
            noise_sigma=noise_sigma,
        )

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "fixed_table":
            d["conditioned"] = [list(r) for r in self.conditioned]
            d["unconditioned"] = [list(r) for r in self.unconditioned]
        if self.kind == "fading":
            d["lambda_star"] = self.lambda_star
            d["grounded_fraction"] = self.grounded_fraction
            d["noise_sigma"] = self.noise_sigma
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MockScenario":
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError("scenario descriptor must be an object with a 'kind'")
        kind = d["kind"]
        if kind == "uniform":
            allowed = {"kind"}
        elif kind == "fixed_table":
            allowed = {"kind", "conditioned", "unconditioned"}
        elif kind == "fading":
            allowed = {"kind", "lambda_star", "grounded_fraction", "noise_sigma"}
        else:
            raise ConfigError(f"unknown scenario kind {kind!r}")
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        if kind == "fixed_table":
            if "conditioned" not in d or "unconditioned" not in d:
                raise ConfigError("fixed_table needs conditioned and unconditioned rows")
            return cls.fixed_table(d["conditioned"], d["unconditioned"])
        if kind == "fading":
            return cls.fading(
                lambda_star=float(d.get("lambda_star", 0.02)),
                grounded_fraction=float(d.get("grounded_fraction", 0.25)),
                noise_sigma=float(d.get("noise_sigma", 0.0)),
            )
        return cls.uniform()


class MockSession(ModelSession):
    """Fully reproducible session: frames depend only on (seed, scenario, prefix)."""

    def __init__(self, seed: int, vocab_size: int, scenario: MockScenario):
        if vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        self._seed = seed
        self._scenario = scenario
        self._cache: dict[tuple[tuple[int, ...], bool], np.ndarray] = {}
        self._descriptor = SessionDescriptor(
            vocab_size=vocab_size,
            bos_id=simulator.BOS_ID,
            eos_id=simulator.EOS_ID,
            model_name=f"mock:{scenario.kind}",
        )
        if scenario.kind == "uniform":
            flat = np.full(vocab_size, -math.log(vocab_size))
            flat.setflags(write=False)
            self._flat = flat
        elif scenario.kind == "fixed_table":
            self._cond_rows = _to_log_rows(scenario.conditioned, "conditioned")
            self._uncond_rows = _to_log_rows(scenario.unconditioned, "unconditioned")
            for rows in (self._cond_rows, self._uncond_rows):
                for row in rows:
                    if row.shape[0] != vocab_size:
                        raise ConfigError(
                            f"fixed_table rows must have length {vocab_size}, got {row.shape[0]}"
                        )
        else:
            self.sim_spec = simulator.SimSpec(
                vocab_size=vocab_size,
                lambda_star=scenario.lambda_star,
                image_seed=simulator._derived_seed(11, seed),
                prior_seed=simulator._derived_seed(13, seed),
                grounded_fraction=scenario.grounded_fraction,
                noise_sigma=scenario.noise_sigma,
                horizon=_FADING_HORIZON,
            )

    @property
    def descriptor(self) -> SessionDescriptor:
        return self._descriptor

    @property
    def scenario(self) -> MockScenario:
        return self._scenario

    def frame_for(self, prefix: Sequence[int], include_context: bool) -> np.ndarray:
        key = (tuple(int(x) for x in prefix), bool(include_context))
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        t = len(key[0]) - 1
        if self._scenario.kind == "uniform":
            vec = self._flat
        elif self._scenario.kind == "fixed_table":
            rows = self._cond_rows if include_context else self._uncond_rows
            vec = rows[min(t, len(rows) - 1)]
        else:
            frame, _ = simulator.frame_at(self.sim_spec, key[0], t)
            self._cache[(key[0], True)] = frame.conditioned
            self._cache[(key[0], False)] = frame.unconditioned
            vec = frame.conditioned if include_context else frame.unconditioned
        self._cache[key] = vec
        return vec


def open_mock_session(seed: int, vocab_size: int, scenario: MockScenario) -> MockSession:
    """Deterministic session whose frames are reproducible from (seed, scenario, prefix)."""
    if not isinstance(scenario, MockScenario):
        scenario = MockScenario.from_dict(scenario)
    return MockSession(seed=seed, vocab_size=vocab_size, scenario=scenario)
