"""Seeded substreams and Box-Muller normals on the counter-based Philox generator."""
import numpy as np

GENERATOR_NAME = "numpy Philox4x64-10 via SeedSequence(seed, spawn_key)"


def substream(seed, *key):
    """Independent generator for ``(seed, key)``; independent of call order."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def box_muller(rng, size):
    """Standard normals from pairs of uniforms on ``rng``."""
    size = tuple(np.atleast_1d(size))
    count = int(np.prod(size))
    half = (count + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * half)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:count].reshape(size)
