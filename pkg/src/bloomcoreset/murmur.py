"""MurmurHash3 x86 32-bit, vectorized over rows of equal-length byte strings.

All rows of a signature matrix have the same length, so the block loop runs
once per 4-byte column while numpy handles every row and every seed in
parallel. uint32 arithmetic wraps modulo 2**32, which is exactly what the
reference algorithm expects.
"""

import numpy as np

_C1 = np.uint32(0xCC9E2D51)
_C2 = np.uint32(0x1B873593)
_M5 = np.uint32(5)
_N1 = np.uint32(0xE6546B64)
_F1 = np.uint32(0x85EBCA6B)
_F2 = np.uint32(0xC2B2AE35)


def _rotl(x, r):
    return (x << np.uint32(r)) | (x >> np.uint32(32 - r))


def _fmix(h):
    h ^= h >> np.uint32(16)
    h *= _F1
    h ^= h >> np.uint32(13)
    h *= _F2
    h ^= h >> np.uint32(16)
    return h


def murmur3_32_rows(data, seeds):
    """Hash each row of ``data`` with every seed.

    Parameters
    ----------
    data : array_like of uint8, shape (n, L)
        One key per row; every key has length ``L``.
    seeds : sequence of int
        Unsigned 32-bit seeds.

    Returns
    -------
    ndarray of uint32, shape (n, len(seeds))
    """
    data = np.ascontiguousarray(data, dtype=np.uint8)
    if data.ndim != 2:
        raise ValueError("data must be a 2-D uint8 array")
    n, length = data.shape
    seeds = np.asarray(seeds, dtype=np.uint64)
    if np.any(seeds > 0xFFFFFFFF):
        raise ValueError("seeds must fit in 32 bits")

    h = np.empty((n, seeds.size), dtype=np.uint32)
    h[:] = seeds.astype(np.uint32)

    nblocks = length // 4
    with np.errstate(over="ignore"):
        if nblocks:
            blocks = data[:, : nblocks * 4].copy().view("<u4")
            # the key mixing does not depend on the seed; do it once for all seeds
            blocks = blocks.astype(np.uint32, copy=False)
            blocks *= _C1
            blocks = _rotl(blocks, 15)
            blocks *= _C2
            for b in range(nblocks):
                h ^= blocks[:, b : b + 1]
                h = _rotl(h, 13)
                h *= _M5
                h += _N1

        tail = length & 3
        if tail:
            base = nblocks * 4
            k1 = np.zeros(n, dtype=np.uint32)
            if tail >= 3:
                k1 ^= data[:, base + 2].astype(np.uint32) << np.uint32(16)
            if tail >= 2:
                k1 ^= data[:, base + 1].astype(np.uint32) << np.uint32(8)
            k1 ^= data[:, base].astype(np.uint32)
            k1 *= _C1
            k1 = _rotl(k1, 15)
            k1 *= _C2
            h ^= k1[:, None]

        h ^= np.uint32(length & 0xFFFFFFFF)
        return _fmix(h)


def murmur3_32(key, seed=0):
    """Hash a single byte string; returns an unsigned 32-bit int."""
    row = np.frombuffer(bytes(key), dtype=np.uint8).reshape(1, -1)
    return int(murmur3_32_rows(row, [seed])[0, 0])
