"""Seeded fractal value noise.

Lattice values are derived from a splitmix64-style integer hash of
(seed, stream, ix, iy), bilinearly interpolated, and summed over octaves
with persistence 0.5. Everything is pure integer/float math on numpy
arrays, so output is bit-identical across platforms and schedules.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_M1 = 0x9E3779B97F4A7C15
_M2 = 0xC2B2AE3D27D4EB4F
_M3 = 0xD6E8FEB86659FD93
_M4 = 0xA0761D6478BD642F
_F1 = 0xBF58476D1CE4E5B9
_F2 = 0x94D049BB133111EB


def hash_u64(*parts: int) -> int:
    """Mix integer parts into a single 64-bit value (for seed derivation)."""
    h = 0x8B72E7F2D0C4A5B1
    for p in parts:
        h = ((h ^ (p & _MASK)) * _M1) & _MASK
        h ^= h >> 29
    h = ((h ^ (h >> 30)) * _F1) & _MASK
    h = ((h ^ (h >> 27)) * _F2) & _MASK
    return h ^ (h >> 31)


def hash_str(seed: int, text: str) -> int:
    """64-bit seed for a named sub-stream, e.g. per geokey."""
    h = seed & _MASK
    for b in text.encode("utf-8"):
        h = ((h ^ b) * _M2) & _MASK
        h ^= h >> 31
    return hash_u64(h)


def _lattice01(ix: np.ndarray, iy: np.ndarray, seed: int, stream: int) -> np.ndarray:
    """Hashed lattice values in [0, 1) at integer coordinates."""
    salt = np.uint64((seed * _M3 ^ stream * _M4) & _MASK)
    h = ix.astype(np.int64).astype(np.uint64) * np.uint64(_M1)
    h = h ^ (iy.astype(np.int64).astype(np.uint64) * np.uint64(_M2))
    h = h ^ salt
    h = (h ^ (h >> np.uint64(30))) * np.uint64(_F1)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(_F2)
    h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(xs: np.ndarray, ys: np.ndarray, seed: int, stream: int) -> np.ndarray:
    """Single-octave value noise: bilinear interpolation of hashed lattice values."""
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    v00 = _lattice01(x0, y0, seed, stream)
    v10 = _lattice01(x0 + 1, y0, seed, stream)
    v01 = _lattice01(x0, y0 + 1, seed, stream)
    v11 = _lattice01(x0 + 1, y0 + 1, seed, stream)
    top = v00 + fx * (v10 - v00)
    bot = v01 + fx * (v11 - v01)
    return top + fy * (bot - top)


def fractal_noise(
    xs: np.ndarray,
    ys: np.ndarray,
    seed: int,
    stream: int = 0,
    octaves: int = 4,
    persistence: float = 0.5,
    frequency: float = 1.0,
) -> np.ndarray:
    """Fractal value noise over broadcastable coordinate arrays, in [0, 1]."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    total = np.zeros(np.broadcast_shapes(xs.shape, ys.shape))
    amp = 1.0
    norm = 0.0
    for o in range(octaves):
        f = frequency * (2.0 ** o)
        total += amp * _value_noise(xs * f, ys * f, seed, stream * 16 + o)
        norm += amp
        amp *= persistence
    return total / norm
