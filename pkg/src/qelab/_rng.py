"""Counter-based random streams.

Every random quantity in the package is derived from a 64-bit key and an
integer counter through the splitmix64 finalizer.  This gives stateless,
order-independent draws: worker processes, numba kernels and the vectorized
numpy fallback all evaluate the same pure function and therefore produce
bit-identical streams.

Key derivation scheme (documented so alternate implementations can reproduce
the streams):

    hash_u64(key, ctr)   = mix64(key + (ctr + 1) * GOLDEN)
    derive_key(key, ...) = fold hash_u64 over the indices, strings folded
                           through FNV-1a first
    uniform01(h)         = (h >> 11) * 2**-53

where ``mix64`` is the splitmix64 finalizer (Vigna's constants).
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# draws reserved per sample index in omega streams; fixed across potential
# kinds so that switching the distribution does not re-map indices
OMEGA_STRIDE = 4

POT_UNIFORM = 0
POT_RESCALED_BETA = 1
POT_TWO_POINT = 2


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def hash_u64(key: int, ctr: int) -> int:
    return mix64((key + ((ctr + 1) * GOLDEN) & MASK64) & MASK64)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def derive_key(key: int, *indices: int | str) -> int:
    """Derive a child key from ``key`` and a path of integers or tag strings."""
    k = key & MASK64
    for idx in indices:
        if isinstance(idx, str):
            idx = fnv1a64(idx)
        k = hash_u64(k, idx & MASK64)
    return k


def uniform01(h: int) -> float:
    return (h >> 11) * 2.0**-53


# ----------------------------------------------------------------------
# vectorized counterparts (bit-identical to the scalar path)
# ----------------------------------------------------------------------


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def hash_u64_vec(key: int, ctrs: np.ndarray) -> np.ndarray:
    ctrs = ctrs.astype(np.uint64, copy=False)
    z = np.uint64(key) + (ctrs + np.uint64(1)) * np.uint64(GOLDEN)
    return _mix64_vec(z)


def uniform01_vec(h: np.ndarray) -> np.ndarray:
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def draw_omega_vec(kind: int, bound: float, key: int, indices: np.ndarray) -> np.ndarray:
    """Vectorized i.i.d. draws from the site-potential distribution.

    ``indices`` are sample counters (vertex ids or tree-node ids); each index
    owns OMEGA_STRIDE consecutive counters in the stream keyed by ``key``.
    """
    base = indices.astype(np.uint64) * np.uint64(OMEGA_STRIDE)
    u0 = uniform01_vec(hash_u64_vec(key, base))
    if kind == POT_UNIFORM:
        return bound * (2.0 * u0 - 1.0)
    if kind == POT_TWO_POINT:
        return np.where(u0 >= 0.5, bound, -bound)
    if kind == POT_RESCALED_BETA:
        u1 = uniform01_vec(hash_u64_vec(key, base + np.uint64(1)))
        u2 = uniform01_vec(hash_u64_vec(key, base + np.uint64(2)))
        med = np.minimum(np.maximum(np.minimum(u0, u1), u2), np.maximum(u0, u1))
        return bound * (2.0 * med - 1.0)
    raise ValueError(f"unknown potential kind code {kind}")


def draw_omega_scalar(kind: int, bound: float, key: int, index: int) -> float:
    base = index * OMEGA_STRIDE
    u0 = uniform01(hash_u64(key, base))
    if kind == POT_UNIFORM:
        return bound * (2.0 * u0 - 1.0)
    if kind == POT_TWO_POINT:
        return bound if u0 >= 0.5 else -bound
    if kind == POT_RESCALED_BETA:
        u1 = uniform01(hash_u64(key, base + 1))
        u2 = uniform01(hash_u64(key, base + 2))
        med = min(max(min(u0, u1), u2), max(u0, u1))
        return bound * (2.0 * med - 1.0)
    raise ValueError(f"unknown potential kind code {kind}")


def numpy_generator(key: int) -> np.random.Generator:
    """Seeded generator for operations that need shuffles (graph pairing)."""
    return np.random.Generator(np.random.Philox(key=key & MASK64))
