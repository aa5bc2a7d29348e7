"""Counter-based pseudo-random streams for the stochastic pruning kernels.

Every random decision is a pure function of (stream key, element index), so
results do not depend on tensor visitation order or thread schedule. The
stream key is derived from the recipe seed, the tensor name, and the parent
role, giving parent A and parent B independent drop masks.

The mixing function is the SplitMix64 finalizer. The full scheme, which any
reimplementation must reproduce bit for bit:

    mix64(z):  z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
               z ^= z >> 27;  z *= 0x94D049BB133111EB
               z ^= z >> 31          (all mod 2**64)

    name64(s)     = first 8 bytes of SHA-256(s as UTF-8), little-endian
    key(seed, s, role) = mix64(mix64(seed ^ GOLDEN) ^ name64(s) ^ ROLE[role])
    raw(key, i)   = mix64(key + (i + 1) * GOLDEN)
    unit(key, i)  = (raw(key, i) >> 11) * 2.0**-53      in [0, 1)
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# Mixed into the stream key so the two parents' masks are independent.
ROLE_SALT = {"a": 0x243F6A8885A308D3, "b": 0x452821E638D01377}


def mix64(z: int) -> int:
    """Scalar SplitMix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def name64(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def derive_key(seed: int, tensor_name: str, role: str) -> int:
    """Stream key for one (tensor, parent role) pair. role is 'a' or 'b'."""
    return mix64(mix64((seed & MASK64) ^ GOLDEN) ^ name64(tensor_name) ^ ROLE_SALT[role])


def uniform_stream(key: int, n: int) -> np.ndarray:
    """First n uniforms in [0, 1) of the stream, as float64."""
    idx = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        raw = _mix64_vec(np.uint64(key & MASK64) + idx * np.uint64(GOLDEN))
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53


def uniform_at(key: int, i: int) -> float:
    """Scalar reference for uniform_stream(key, n)[i]."""
    raw = mix64((key + (i + 1) * GOLDEN) & MASK64)
    return (raw >> 11) * 2.0**-53
