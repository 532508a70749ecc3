"""Synthetic weight/byte content drawn from the portable generator."""

from __future__ import annotations

import numpy as np

from . import rng

_STREAM_NORMAL = 101
_STREAM_BYTES = 102


def truncated_normal(n: int, std: float = 0.25, bound: float = 1.0, seed: int = 21) -> np.ndarray:
    """``n`` float64 draws from N(0, std) restricted to [-bound, bound].

    Box-Muller over SplitMix64 uniforms with rejection; draws are consumed in
    order so the result depends only on the arguments.
    """
    out = np.empty(0)
    start = 0
    while out.size < n:
        m = max(2 * (n - out.size), 1024)
        u = rng.random_uniform(seed, _STREAM_NORMAL, 2 * m, start)
        start += 2 * m
        u1, u2 = 1.0 - u[0::2], u[1::2]  # u1 in (0, 1]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2) * std
        out = np.concatenate([out, z[np.abs(z) <= bound]])
    return out[:n]


def uniform_bytes(n: int, seed: int = 21) -> bytes:
    u = rng.random_u64(seed, _STREAM_BYTES, -(-n // 8))
    return u.astype("<u8").tobytes()[:n]
