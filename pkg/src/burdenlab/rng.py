"""Named, independent random streams derived from an integer seed.

Every consumer of randomness (parameter init, task data, stability noise,
distillation order, evaluation probes) asks for its own stream by name, so
adding or removing draws in one place never shifts another stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    """Generator for ``seed`` and a path of stream names, e.g. ``stream(7, "data", "copy")``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))
