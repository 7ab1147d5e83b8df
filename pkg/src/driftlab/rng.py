"""Counter-based random streams.

Every consumer asks for ``stream(seed, index)``; the Philox key is the pair
(seed, index), so stream ``i`` is the same no matter which worker draws it or
in which order.
"""
import numpy as np

_MASK = (1 << 64) - 1


def stream(seed, index=0):
    key = np.array([int(seed) & _MASK, int(index) & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def path_noise(seed, indices, n_steps, dim):
    """Standard normal increments, shape (len(indices), n_steps, dim)."""
    out = np.empty((len(indices), n_steps, dim))
    for row, i in enumerate(indices):
        out[row] = stream(seed, i).standard_normal((n_steps, dim))
    return out
