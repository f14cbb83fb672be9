"""Counter-based seed derivation.

Every random draw in bbaudit is keyed by an explicit integer path such as
``(audit_seed, query_index)``. Mixing uses SplitMix64, so the value for a
given path never depends on how many other draws happened first, which makes
results independent of thread or process scheduling.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & _MASK


def derive_seed(root: int, *path: int | str) -> int:
    """Return a 64-bit seed for the stream addressed by ``root`` and ``path``."""
    h = _mix(_key(root))
    for part in path:
        h = _mix(h ^ _key(part))
    return h


def derive_seeds(root: int, tag: str, indices: np.ndarray) -> np.ndarray:
    """Vectorized ``derive_seed(root, tag, i)`` for each ``i`` in ``indices``."""
    base = np.uint64(derive_seed(root, tag))
    return mix_array(base ^ np.asarray(indices, dtype=np.uint64))


def mix_array(z: np.ndarray) -> np.ndarray:
    """SplitMix64 applied elementwise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def unit_uniform(seeds: np.ndarray | int) -> np.ndarray | float:
    """Map 64-bit seeds to uniforms on [0, 1) using the top 53 bits."""
    if isinstance(seeds, (int, np.integer)):
        return (_mix(int(seeds)) >> 11) * 2.0**-53
    mixed = mix_array(np.asarray(seeds, dtype=np.uint64))
    return (mixed >> np.uint64(11)).astype(np.float64) * 2.0**-53


def rng(root: int, *path: int | str) -> np.random.Generator:
    """A numpy Generator seeded from a derived stream."""
    return np.random.default_rng(derive_seed(root, *path))
