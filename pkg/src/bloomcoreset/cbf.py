"""Counting Bloom filter over packed sign signatures.

The hash family is MurmurHash3 x86-32 under ``k`` distinct seeds (default
0..9); index ``i`` of a signature is ``murmur3(signature_bytes, seeds[i]) %
m``. Every hash access increments its counter, so a single insert whose
indices collide bumps that counter more than once. Counters saturate at
``2**counter_bits - 1`` instead of wrapping.
"""

import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .embedding_io import signature_nbytes
from .exceptions import DimError, FormatError, IoError
from .murmur import murmur3_32_rows

DEFAULT_NUM_HASHES = 10
DEFAULT_COUNTER_BITS = 32
REFERENCE_DOWNSTREAM = 3500
REFERENCE_SIZE = 10000

FILE_MAGIC = b"CBF1"
FILE_VERSION = 1
_FIXED = struct.Struct("<4sIIIII")
_INSERTED = struct.Struct("<Q")

# rows hashed per batch; bounds the (rows, k) index buffer
_CHUNK = 1 << 16


def sized_for(downstream_count):
    """Filter size for ``downstream_count`` inserts: 10000 per 3500, rounded half up."""
    n = int(downstream_count)
    if n < 1:
        raise ValueError("downstream_count must be >= 1")
    exact = Fraction(REFERENCE_SIZE * n, REFERENCE_DOWNSTREAM)
    # positive values only, so floor(x + 1/2) is round-half-away-from-zero
    return max(1, int(exact + Fraction(1, 2)))


@dataclass(frozen=True)
class HashFamily:
    seeds: tuple = tuple(range(DEFAULT_NUM_HASHES))

    def __post_init__(self):
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValueError("a hash family needs at least one seed")
        if any(s < 0 or s > 0xFFFFFFFF for s in seeds):
            raise ValueError("seeds must be unsigned 32-bit integers")
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be pairwise distinct")
        object.__setattr__(self, "seeds", seeds)

    @classmethod
    def default(cls, num_hashes=DEFAULT_NUM_HASHES):
        return cls(tuple(range(num_hashes)))

    @property
    def num_hashes(self):
        return len(self.seeds)

    def raw_hashes(self, signatures):
        """Unreduced 32-bit hashes, shape (n, k)."""
        return murmur3_32_rows(signatures, self.seeds)

    def indices(self, signatures, m):
        """Counter indices in ``[0, m)`` for each packed signature row, shape (n, k)."""
        return self.raw_hashes(signatures) % np.uint32(m)


def hash_index(family, signature, i, m):
    """Index of the ``i``-th hash of one packed signature, reduced modulo ``m``."""
    row = np.asarray(signature, dtype=np.uint8).reshape(1, -1)
    seed = family.seeds[i]
    return int(murmur3_32_rows(row, [seed])[0, 0] % m)


@dataclass(frozen=True)
class FilterStats:
    size: int
    num_hashes: int
    inserted: int
    occupied: int
    fpr_estimate: float

    def to_dict(self):
        return {
            "size": self.size,
            "num_hashes": self.num_hashes,
            "inserted": self.inserted,
            "occupied": self.occupied,
            "fpr_estimate": self.fpr_estimate,
        }


class CountingBloomFilter:
    """Saturating counting Bloom filter keyed on packed sign signatures.

    Parameters
    ----------
    size : int
        Number of counters ``m``.
    dim : int
        Width in bits of the signatures this filter accepts.
    family : HashFamily, optional
        Seeded murmur3 family; defaults to seeds 0..9.
    counter_bits : int, default 32
        Counter width; values saturate at ``2**counter_bits - 1``.
    """

    def __init__(self, size, dim, family=None, counter_bits=DEFAULT_COUNTER_BITS):
        size = int(size)
        if not 1 <= size <= 0xFFFFFFFF:
            raise ValueError("size must be in [1, 2**32 - 1]")
        if not 1 <= int(counter_bits) <= 32:
            raise ValueError("counter_bits must be in [1, 32]")
        if int(dim) < 1:
            raise ValueError("dim must be positive")
        self.size = size
        self.dim = int(dim)
        self.family = family if family is not None else HashFamily()
        self.counter_bits = int(counter_bits)
        self.counters = np.zeros(size, dtype=np.uint32)
        self.inserted = 0
        self.frozen = False

    @property
    def num_hashes(self):
        return self.family.num_hashes

    @property
    def max_count(self):
        return (1 << self.counter_bits) - 1

    def _rows(self, signatures):
        sig = np.asarray(signatures, dtype=np.uint8)
        if sig.ndim == 1:
            sig = sig.reshape(1, -1)
        if sig.ndim != 2:
            raise DimError("signatures must be 1-D or 2-D packed byte arrays")
        nbytes = signature_nbytes(self.dim)
        if sig.shape[1] != nbytes:
            raise DimError(
                f"signature has {sig.shape[1]} bytes, filter expects {nbytes} "
                f"({self.dim} bits)"
            )
        return sig

    def _chunks(self, sig):
        for start in range(0, sig.shape[0], _CHUNK):
            yield self.family.indices(sig[start : start + _CHUNK], self.size)

    def update(self, signatures):
        """Insert one packed signature or a (n, nbytes) batch of them."""
        if self.frozen:
            raise RuntimeError("filter is frozen; updates are not allowed")
        sig = self._rows(signatures)
        for idx in self._chunks(sig):
            hits = np.bincount(idx.ravel(), minlength=self.size).astype(np.uint64)
            total = self.counters.astype(np.uint64) + hits
            # saturating add: sequential +1 steps would stop at the same cap
            np.minimum(total, self.max_count, out=total)
            self.counters = total.astype(np.uint32)
        self.inserted += sig.shape[0]

    def check_many(self, signatures):
        """Membership mask: True where every counter of the row is >= 1."""
        sig = self._rows(signatures)
        out = np.empty(sig.shape[0], dtype=bool)
        pos = 0
        for idx in self._chunks(sig):
            out[pos : pos + idx.shape[0]] = self.counters[idx].min(axis=1) > 0
            pos += idx.shape[0]
        return out

    def check(self, signature):
        sig = self._rows(signature)
        if sig.shape[0] != 1:
            raise DimError("check takes a single signature; use check_many")
        return bool(self.check_many(sig)[0])

    def __contains__(self, signature):
        return self.check(signature)

    def estimate_frequency_many(self, signatures):
        sig = self._rows(signatures)
        parts = [self.counters[idx].min(axis=1) for idx in self._chunks(sig)]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(parts).astype(np.int64)

    def estimate_frequency(self, signature):
        """Upper bound on how many times ``signature`` was inserted."""
        sig = self._rows(signature)
        if sig.shape[0] != 1:
            raise DimError("estimate_frequency takes a single signature")
        return int(self.estimate_frequency_many(sig)[0])

    def freeze(self):
        """Forbid further updates; reads stay available."""
        self.frozen = True
        self.counters.setflags(write=False)
        return self

    def stats(self):
        occupied = int(np.count_nonzero(self.counters))
        k = self.num_hashes
        return FilterStats(
            size=self.size,
            num_hashes=k,
            inserted=self.inserted,
            occupied=occupied,
            fpr_estimate=(occupied / self.size) ** k,
        )

    def theoretical_fpr(self):
        """Classical ``(1 - (1 - 1/m)**(k n))**k`` for the current insert count."""
        k, m, n = self.num_hashes, self.size, self.inserted
        return (1.0 - (1.0 - 1.0 / m) ** (k * n)) ** k

    def serialize(self):
        """Canonical CBF1 encoding (see :func:`deserialize`)."""
        seeds = np.asarray(self.family.seeds, dtype="<u4").tobytes()
        return b"".join(
            [
                _FIXED.pack(
                    FILE_MAGIC,
                    FILE_VERSION,
                    self.size,
                    self.num_hashes,
                    self.counter_bits,
                    self.dim,
                ),
                seeds,
                _INSERTED.pack(self.inserted),
                self.counters.astype("<u4").tobytes(),
            ]
        )

    def save(self, path):
        data = self.serialize()
        try:
            with open(path, "wb") as fh:
                fh.write(data)
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc

    def __eq__(self, other):
        if not isinstance(other, CountingBloomFilter):
            return NotImplemented
        return (
            self.size == other.size
            and self.dim == other.dim
            and self.counter_bits == other.counter_bits
            and self.family == other.family
            and self.inserted == other.inserted
            and np.array_equal(self.counters, other.counters)
        )

    def __repr__(self):
        return (
            f"CountingBloomFilter(size={self.size}, dim={self.dim}, "
            f"num_hashes={self.num_hashes}, inserted={self.inserted})"
        )


def deserialize(data):
    """Parse a CBF1 byte string.

    Layout (little-endian): ``b"CBF1"``, u32 version, u32 m, u32 k,
    u32 counter_bits, u32 dim, k x u32 seeds, u64 inserted, m x u32 counters.
    """
    data = bytes(data)
    if len(data) < _FIXED.size:
        raise FormatError("stream shorter than the CBF1 header")
    magic, version, m, k, counter_bits, dim = _FIXED.unpack_from(data)
    if magic != FILE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FILE_MAGIC!r}")
    if version != FILE_VERSION:
        raise FormatError(f"unsupported CBF version {version}")
    if m < 1 or k < 1 or dim < 1 or not 1 <= counter_bits <= 32:
        raise FormatError("header fields out of range")
    expected = _FIXED.size + 4 * k + _INSERTED.size + 4 * m
    if len(data) != expected:
        raise FormatError(f"stream is {len(data)} bytes, header implies {expected}")
    pos = _FIXED.size
    seeds = np.frombuffer(data, dtype="<u4", count=k, offset=pos)
    pos += 4 * k
    (inserted,) = _INSERTED.unpack_from(data, pos)
    pos += _INSERTED.size
    counters = np.frombuffer(data, dtype="<u4", count=m, offset=pos).astype(np.uint32)
    try:
        family = HashFamily(tuple(int(s) for s in seeds))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    if counters.max(initial=0) > (1 << counter_bits) - 1:
        raise FormatError("counter exceeds counter_bits capacity")
    filt = CountingBloomFilter(m, dim, family=family, counter_bits=counter_bits)
    filt.counters = counters
    filt.inserted = int(inserted)
    return filt


def load_filter(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return deserialize(data)
