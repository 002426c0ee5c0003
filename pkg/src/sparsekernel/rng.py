"""Counter-based random streams addressed by ``(seed, stream)``.

Every stream is a Philox-4x64-10 generator whose 128-bit key is the pair
``(seed, stream)`` and whose counter starts at zero, so any Philox
implementation reproduces the same draws.  ``stream`` is composed from a
purpose tag and an integer index (trial, step, ...).
"""

from __future__ import annotations

import numpy as np

# purpose tags, stored in the high 32 bits of the stream word
FUNCTION = 1
DESIGN = 2
NOISE = 3
INDUCING = 4
TRIAL = 5
DOMAIN = 6

_MASK64 = (1 << 64) - 1


def stream_id(purpose: int, index: int = 0) -> int:
    if not 0 <= index < (1 << 32):
        raise ValueError("stream index out of range")
    return (purpose << 32) | index


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([int(seed) & _MASK64, int(stream) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return generator(seed, stream_id(purpose, index))
