"""Dense array helpers and the binary tensor snapshot format.

Tensors are plain ``numpy.ndarray`` objects in batch-channel-height-width
row-major layout. Single precision is the training default; double
precision is used by gradient checks.

Snapshot layout (all little-endian)::

    b"CNT1" | u32 rank | u32 extent * rank | u8 precision | raw elements

with precision tag 0 = float32, 1 = float64.
"""

import io
import struct

import numpy as np

from .errors import CheckpointError, InvalidParameterError, NonFiniteError, ShapeError

SNAPSHOT_MAGIC = b"CNT1"
_PRECISION_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise ShapeError(f"invalid shape {shape}: every extent must be >= 1")
    return shape


def zeros(shape, dtype=np.float32):
    return np.zeros(_check_shape(shape), dtype=dtype)


def rng_for(seed):
    """Seeded generator; ``seed`` may be an int or a sequence of ints."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def gaussian_fill(shape, stddev, seed, dtype=np.float32):
    """I.i.d. zero-mean normal samples, deterministic in (shape, stddev, seed)."""
    if not stddev > 0:
        raise InvalidParameterError(f"stddev must be > 0, got {stddev}")
    shape = _check_shape(shape)
    samples = rng_for(seed).standard_normal(shape, dtype=np.float64)
    return (samples * stddev).astype(dtype)


def concat_channels(a, b):
    """Concatenate along axis 1; ``a`` occupies the lower channel indices."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != b.ndim or a.ndim < 2:
        raise ShapeError(f"cannot concatenate shapes {a.shape} and {b.shape}")
    if a.shape[:1] + a.shape[2:] != b.shape[:1] + b.shape[2:]:
        raise ShapeError(
            f"non-channel extents differ: {a.shape} vs {b.shape}"
        )
    return np.concatenate([a, b], axis=1)


def split_channels(x, n_first):
    """Inverse of :func:`concat_channels` given the first operand's channel count."""
    return x[:, :n_first], x[:, n_first:]


def check_finite(x, name="tensor"):
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NonFiniteError(f"{name}: {bad} non-finite element(s)")
    return x


def write_tensor(fh, x):
    x = np.asarray(x)
    if x.dtype not in _PRECISION_TAGS:
        raise InvalidParameterError(f"unsupported dtype {x.dtype}")
    tag = _PRECISION_TAGS[x.dtype]
    fh.write(SNAPSHOT_MAGIC)
    fh.write(struct.pack("<I", x.ndim))
    fh.write(struct.pack(f"<{x.ndim}I", *x.shape))
    fh.write(struct.pack("<B", tag))
    fh.write(np.ascontiguousarray(x, dtype=_TAG_DTYPES[tag]).tobytes())


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated tensor snapshot")
    return buf


def read_tensor(fh):
    magic = _read_exact(fh, 4)
    if magic != SNAPSHOT_MAGIC:
        raise CheckpointError(f"bad tensor snapshot magic {magic!r}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    (tag,) = struct.unpack("<B", _read_exact(fh, 1))
    if tag not in _TAG_DTYPES:
        raise CheckpointError(f"unknown precision tag {tag}")
    dtype = _TAG_DTYPES[tag]
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(fh, count * dtype.itemsize), dtype=dtype)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def tensor_to_bytes(x):
    buf = io.BytesIO()
    write_tensor(buf, x)
    return buf.getvalue()


def tensor_from_bytes(data):
    return read_tensor(io.BytesIO(data))


def save_tensor(path, x):
    with open(path, "wb") as fh:
        write_tensor(fh, x)


def load_tensor(path):
    with open(path, "rb") as fh:
        return read_tensor(fh)
