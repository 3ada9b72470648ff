"""Wire-level helpers: NDJSON framing and frame normalization.

Every served frame is renormalized bridge-side (log-softmax) so the
|logsumexp| <= 1e-4 contract holds regardless of what a backend emits.
Numbers serialize through json's shortest-round-trip repr (>= 9 significant
digits); -inf serializes as the literal string "-inf".
"""

from __future__ import annotations

import json

import numpy as np

PROTO_VERSION = 1
NORMALIZATION_TOL = 1e-4


def logsumexp(scores) -> float:
    arr = np.asarray(scores, dtype=np.float64)
    m = np.max(arr)
    if not np.isfinite(m):
        raise ValueError("frame has no finite score")
    return float(m + np.log(np.sum(np.exp(arr - m))))


def log_softmax(scores) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64)
    return arr - logsumexp(arr)


def encode_logprobs(vec) -> list:
    return [float(x) if np.isfinite(x) else "-inf" for x in vec]


def dumps_line(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")
