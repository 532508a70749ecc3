"""Counter-based SplitMix64 streams.

Every random draw in the package goes through this module so fault masks are
a pure function of ``(seed, stream, index)``. The i-th output of a stream is::

    key = mix64(seed ^ (stream * 0xD1B54A32D192ED03))
    out[i] = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)      (mod 2**64)

with ``mix64`` the SplitMix64 finalizer (Steele, Lea & Flood 2014)::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Uniform floats are ``(out >> 11) * 2**-53``. The scheme needs nothing beyond
64-bit wrapping arithmetic, so any implementation can reproduce masks bit for
bit.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
STREAM_MULT = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1


def mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _M1) & _MASK64
    z = ((z ^ (z >> 27)) * _M2) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def stream_key(seed: int, stream: int) -> int:
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    return mix64((seed ^ ((stream * STREAM_MULT) & _MASK64)) & _MASK64)


def random_u64(seed: int, stream: int, n: int, start: int = 0) -> np.ndarray:
    """Outputs ``start .. start+n-1`` of the given stream as uint64."""
    key = np.uint64(stream_key(seed, stream))
    counter = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix64_array(key + counter * np.uint64(GOLDEN))


def random_uniform(seed: int, stream: int, n: int, start: int = 0) -> np.ndarray:
    """Uniform float64 draws in [0, 1) with 53 random bits each."""
    u = random_u64(seed, stream, n, start)
    return (u >> np.uint64(11)).astype(np.float64) * 2.0**-53


def random_below(seed: int, stream: int, n: int, bound: int) -> np.ndarray:
    """Integers in ``[0, bound)`` via the multiply-high method (bias < 2**-32 for small bounds)."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    u = random_u64(seed, stream, n) >> np.uint64(32)
    return ((u * np.uint64(bound)) >> np.uint64(32)).astype(np.int64)
