"""Named deterministic RNG streams derived from one experiment seed.

Every source of randomness in a run (environment draws, agent sampling,
dataset splitting, dropout, ...) pulls from its own stream so that changing
one component's consumption pattern does not shift any other component.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _stream_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for one component; same (seed, name) -> same stream, always."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([seed, _stream_key(name)]))
