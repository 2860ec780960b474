"""Deterministic RNG stream splitting.

Every command derives its randomness from a single u64 seed. Each purpose
(curation draws, transform parameter draws, balanced sampling, ...) gets its
own counter-based Philox stream, keyed by the seed plus a stable hash of a
textual label. Streams are independent of each other and reproducible across
runs, platforms, and process counts.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError


def _label_words(label: str) -> tuple[int, ...]:
    # blake2b rather than hash(): process-independent and stable.
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=16).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Return the Philox generator for `label` under the run-level `seed`."""
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=_label_words(label))
    return np.random.Generator(np.random.Philox(ss))
