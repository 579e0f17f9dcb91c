"""Feature hashing for variable-length token sets.

Tokens are folded into a fixed-length vector with a single 32-bit
MurmurHash3 evaluation per token: the bucket index comes from the hash
modulo the vector length, the sign from the hash's top bit. The seed is
fixed so vectors are reproducible across runs and platforms.
"""

import numpy as np

HASH_SEED = 0x9747B28C

_C1 = 0xCC9E2D51
_C2 = 0x1B873593
_MASK = 0xFFFFFFFF


def murmur3_32(data: bytes, seed: int = HASH_SEED) -> int:
    """MurmurHash3 x86 32-bit of `data`, returned as an unsigned int."""
    h = seed & _MASK
    n_blocks = len(data) // 4
    for i in range(n_blocks):
        k = int.from_bytes(data[4 * i:4 * i + 4], "little")
        k = (k * _C1) & _MASK
        k = ((k << 15) | (k >> 17)) & _MASK
        k = (k * _C2) & _MASK
        h ^= k
        h = ((h << 13) | (h >> 19)) & _MASK
        h = (h * 5 + 0xE6546B64) & _MASK
    tail = data[4 * n_blocks:]
    k = 0
    if len(tail) >= 3:
        k ^= tail[2] << 16
    if len(tail) >= 2:
        k ^= tail[1] << 8
    if len(tail) >= 1:
        k ^= tail[0]
        k = (k * _C1) & _MASK
        k = ((k << 15) | (k >> 17)) & _MASK
        k = (k * _C2) & _MASK
        h ^= k
    h ^= len(data)
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & _MASK
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & _MASK
    h ^= h >> 16
    return h


def hash_bucket(items, dim: int) -> np.ndarray:
    """Fold strings or (string, value) pairs into a dense vector of length `dim`.

    Bare strings contribute 1.0; pairs contribute their value. Contributions
    are signed by the hash's top bit and summed, so the output is invariant
    under permutation of `items`.
    """
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    out = np.zeros(dim, dtype=np.float32)
    for item in items:
        if isinstance(item, tuple):
            key, value = item
        else:
            key, value = item, 1.0
        if isinstance(key, str):
            key = key.encode("utf-8", errors="replace")
        h = murmur3_32(key)
        sign = -1.0 if h & 0x80000000 else 1.0
        out[h % dim] += sign * float(value)
    return out
