"""Hierarchical deterministic random number generation.

Every run owns a single integer seed.  All randomness is drawn from
generators forked off that seed by a structured key path such as
``(seed, "round", 3, "client", 17, "measure")``.  Forks are independent of
each other and of evaluation order, so clients can be simulated in any
order (or in parallel) without changing results.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _encode(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        value = int(part)
        if value < 0:
            raise ValueError(f"rng path parts must be non-negative, got {value}")
        return value
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") & _MASK64
    raise TypeError(f"unsupported rng path part: {part!r}")


def seed_sequence(root_seed: int, *path) -> np.random.SeedSequence:
    entropy = [_encode(root_seed)] + [_encode(p) for p in path]
    return np.random.SeedSequence(entropy)


def fork(root_seed: int, *path) -> np.random.Generator:
    """Deterministic generator for the given key path under ``root_seed``."""
    return np.random.default_rng(seed_sequence(root_seed, *path))
