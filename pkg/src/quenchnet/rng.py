"""Named, reproducible random streams.

Every randomized step draws from its own PCG64 stream keyed by
``(seed, *tags)`` so that e.g. the generation stream and the split stream of
one dataset never interact. Tags are hashed with SHA-256, not ``hash()``,
which is salted per interpreter.
"""

import hashlib

import numpy as np


def _words(seed, tags):
    text = ":".join([str(int(seed))] + [str(t) for t in tags])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]


def stream(seed, *tags):
    """Return a ``numpy.random.Generator`` for the stream ``(seed, *tags)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_words(seed, tags))))


def derive_seed(seed, *tags):
    """Deterministic non-negative 63-bit integer seed derived from ``(seed, *tags)``."""
    w = _words(seed, tags)
    return ((w[0] << 32) | w[1]) & ((1 << 63) - 1)
