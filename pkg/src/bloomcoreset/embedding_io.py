"""BCF1 matrix files, row normalization and sign binarization.

An embedding matrix is a plain C-contiguous ``float32`` ndarray of shape
``(count, dim)``. BCF1 layout::

    b"BCF1" | u32 count | u32 dim | count*dim float32   (all little-endian)
"""

import struct

import numpy as np

from .exceptions import DataError, FormatError, IoError, TruncationError

MAGIC = b"BCF1"
_HEADER = struct.Struct("<4sII")
HEADER_SIZE = _HEADER.size  # 12

DEFAULT_DIM = 512


def signature_nbytes(dim):
    """Number of bytes in a packed signature of ``dim`` bits."""
    return (int(dim) + 7) // 8


def check_finite(matrix):
    """Raise DataError naming the first row holding NaN or Inf."""
    bad = ~np.isfinite(matrix)
    if bad.any():
        row = int(np.argmax(bad.any(axis=1)))
        raise DataError(f"non-finite value in row {row}", row=row)


def as_matrix(data, dim=None):
    """Coerce ``data`` to a validated float32 (count, dim) matrix."""
    matrix = np.ascontiguousarray(data, dtype=np.float32)
    if matrix.ndim == 1 and matrix.size == 0 and dim is not None:
        matrix = matrix.reshape(0, dim)
    if matrix.ndim != 2:
        raise DataError(f"expected a 2-D matrix, got {matrix.ndim}-D")
    if matrix.shape[1] < 1:
        raise DataError("embedding width must be positive")
    check_finite(matrix)
    return matrix


def load_matrix(path, normalize_rows=False):
    """Read a BCF1 file into memory.

    Raises FormatError on a bad magic, TruncationError if the payload is
    shorter (or longer) than ``count * dim`` floats, and DataError with the
    row index if any entry is non-finite.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc

    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than the 12-byte BCF1 header")
    magic, count, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if dim < 1:
        raise FormatError(f"{path}: dim must be positive")
    expected = HEADER_SIZE + 4 * count * dim
    if len(raw) != expected:
        raise TruncationError(
            f"{path}: payload is {len(raw) - HEADER_SIZE} bytes, "
            f"header declares {4 * count * dim}"
        )
    matrix = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE)
    matrix = matrix.astype(np.float32).reshape(count, dim)
    check_finite(matrix)
    if normalize_rows:
        matrix = normalize(matrix)
    return matrix


def write_matrix(matrix, path):
    """Write ``matrix`` as BCF1. Nothing is written if validation fails."""
    matrix = as_matrix(matrix)
    count, dim = matrix.shape
    payload = matrix.astype("<f4", copy=False).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, count, dim))
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


_NORM_BLOCK = 4096


def _coerce(data):
    matrix = np.ascontiguousarray(data, dtype=np.float32)
    if matrix.ndim != 2:
        raise DataError(f"expected a 2-D matrix, got {matrix.ndim}-D")
    if matrix.shape[1] < 1:
        raise DataError("embedding width must be positive")
    return matrix


def normalize(matrix):
    """Scale every row to unit L2 norm; zero rows raise DataError.

    Norms and quotients are computed in float64 and rounded once to float32.
    Works in row blocks so large matrices never get a full float64 copy.
    """
    matrix = _coerce(matrix)
    n = matrix.shape[0]
    sq = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _NORM_BLOCK):
        block = matrix[lo:lo + _NORM_BLOCK].astype(np.float64)
        sq[lo:lo + _NORM_BLOCK] = np.einsum("ij,ij->i", block, block)
    # squares of float32 values cannot overflow float64, so a non-finite
    # sum means the row itself holds NaN or Inf
    if not np.isfinite(sq).all():
        check_finite(matrix)
    zero = sq == 0
    if zero.any():
        row = int(np.argmax(zero))
        raise DataError(f"row {row} is all zeros and cannot be normalized", row=row)
    norms = np.sqrt(sq)
    out = np.empty_like(matrix)
    tiny = -np.float32(np.finfo(np.float32).smallest_subnormal)
    wide = np.empty((min(n, _NORM_BLOCK), matrix.shape[1]), dtype=np.float64)
    for lo in range(0, n, _NORM_BLOCK):
        src = matrix[lo:lo + _NORM_BLOCK]
        buf = wide[: src.shape[0]]
        np.divide(src, norms[lo:lo + _NORM_BLOCK, None], out=buf)
        block = out[lo:lo + _NORM_BLOCK]
        block[...] = buf
        # float32 underflow must not turn a negative entry into -0.0 (a sign flip)
        if not block.all():
            lost = (block == 0) & (src < 0)
            block[lost] = tiny
    return out


def binarize(embeddings):
    """Pack the sign pattern of each embedding into bytes.

    Bit ``j`` is 0 when ``z[j] < 0`` and 1 otherwise, so exact zeros map to
    1. Bits are packed least-significant first: bit ``j`` lives in byte
    ``j // 8`` at position ``j % 8``; pad bits past ``dim`` stay zero.

    A 1-D input gives a 1-D result of ``ceil(dim / 8)`` bytes; a 2-D input
    gives one packed row per embedding.
    """
    z = np.asarray(embeddings)
    return np.packbits(~(z < 0), axis=-1, bitorder="little")


def unpack_signature(signature, dim):
    """Inverse of :func:`binarize` up to sign: returns a 0/1 uint8 vector."""
    bits = np.unpackbits(np.asarray(signature, dtype=np.uint8), axis=-1, bitorder="little")
    return bits[..., :dim]


def file_size_for(count, dim):
    return HEADER_SIZE + 4 * count * dim


__all__ = [
    "DEFAULT_DIM",
    "HEADER_SIZE",
    "MAGIC",
    "as_matrix",
    "binarize",
    "check_finite",
    "file_size_for",
    "load_matrix",
    "normalize",
    "signature_nbytes",
    "unpack_signature",
    "write_matrix",
]
