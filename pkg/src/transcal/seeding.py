"""Deterministic seed derivation for independent stages."""

from __future__ import annotations

import numpy as np


def derive(seed, *keys: int) -> np.random.SeedSequence:
    """Child seed sequence addressed by ``keys``.

    Unlike :meth:`numpy.random.SeedSequence.spawn` this does not mutate
    ``seed``, so the same ``(seed, keys)`` always gives the same stream.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(keys))
    return np.random.SeedSequence(seed, spawn_key=tuple(keys))
