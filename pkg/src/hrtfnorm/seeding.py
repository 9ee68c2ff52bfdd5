"""Deterministic, labelled RNG streams.

Every stochastic routine in this package draws from a counter-based Philox
generator keyed by an explicit seed plus a path of string/integer labels.
Distinct label paths give statistically independent streams, and the same
(seed, labels) pair reproduces the same stream on any platform. There is no
global RNG anywhere.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_entropy(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK64
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, *labels) -> np.random.Generator:
    """Philox generator for the stream identified by (seed, *labels)."""
    entropy = [int(seed) & _MASK64] + [_label_entropy(lab) for lab in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
