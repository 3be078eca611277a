"""Counter-based hashing RNG.

Every random number used by the library is a pure function of a 64-bit key
and a counter, so any cell of an infinite field can be regenerated on demand
in any order. The mixer is the SplitMix64 finalizer; keys are chained through
it one integer at a time.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_MUL = np.uint64(0xD1B54A32D192ED03)
_U53 = 1.0 / 9007199254740992.0

# stream tags
COUNT = 1
COORD = 2
TIME = 3
LIFETIME = 4
MARK = 5
ARRIVAL = 6
PROBE = 7
UID = 8


def mix(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(values) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values))
    if arr.dtype.kind == "i":
        # zigzag so that small negative cell indices stay small
        arr = arr.astype(np.int64)
        return ((arr << 1) ^ (arr >> 63)).astype(np.uint64)
    return arr.astype(np.uint64)


def chain(key, values) -> np.ndarray:
    """Absorb ``values`` (broadcast against ``key``) into ``key``."""
    key = _as_u64(key)
    v = _as_u64(values)
    return mix(key ^ mix(v + _GOLDEN))


def cell_keys(seed, cells: np.ndarray, domain: int = 0) -> np.ndarray:
    """Key per row of an integer ``(n, d)`` cell array, for one or many seeds."""
    cells = np.asarray(cells, dtype=np.int64)
    if cells.ndim == 1:
        cells = cells[None, :]
    key = chain(_as_u64(seed), np.uint64(domain))
    key = np.broadcast_to(key, (cells.shape[0],)).copy()
    for j in range(cells.shape[1]):
        key = chain(key, cells[:, j])
    return key


def derive_seed(master: int, *path: int) -> int:
    """Deterministic child seed, e.g. ``derive_seed(master, replicate)``."""
    key = _as_u64(np.uint64(master & 0xFFFFFFFFFFFFFFFF))
    for p in path:
        key = chain(key, np.int64(p))
    return int(key[0])


def raw(keys: np.ndarray, stream: int, counters) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    z = mix(keys ^ np.uint64((stream * int(_STREAM_MUL)) & 0xFFFFFFFFFFFFFFFF))
    return mix(z + counters * _GOLDEN)


def uniform(keys: np.ndarray, stream: int, counters) -> np.ndarray:
    """Uniform doubles in the open interval (0, 1)."""
    bits = raw(keys, stream, counters) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * _U53


def derive_seeds(master: int, n: int, *path: int) -> np.ndarray:
    """Vector of ``derive_seed(master, *path, i)`` for ``i`` in ``range(n)``."""
    key = _as_u64(np.uint64(master & 0xFFFFFFFFFFFFFFFF))
    for p in path:
        key = chain(key, np.int64(p))
    return chain(np.repeat(key, n), np.arange(n, dtype=np.int64))
