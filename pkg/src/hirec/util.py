"""Small shared helpers: seeded sub-streams, tie-broken top-n, normalization."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Derive an independent, reproducible RNG from a root seed and a stream name.

    All randomness in the package flows through named sub-streams of one root
    seed, so individual components can be re-run in isolation and still see
    the exact bits they saw inside a full pipeline run.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def top_n_indices(scores: np.ndarray, n: int) -> np.ndarray:
    """Indices of the n largest scores, ties broken by ascending index.

    -inf scores are treated as masked and never returned. Zero scores are
    kept; callers that consider zeros unscoreable filter first.
    """
    scores = np.asarray(scores, dtype=np.float64)
    valid = np.flatnonzero(scores > -np.inf)
    if valid.size == 0:
        return valid
    # lexsort: last key is primary
    order = np.lexsort((valid, -scores[valid]))
    return valid[order[:n]]


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Scale to [0, 1] by the observed min/max. A constant input maps to zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)
