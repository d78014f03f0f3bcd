"""4-D tensor container and its binary file format.

Every array that crosses a module boundary in this package travels as a
:class:`Tensor`: batch x channels x height x width, float32 storage. The
wrapper exists to pin down the two invariants the rest of the toolkit
relies on (rank 4, all elements finite) at construction time instead of
deep inside some kernel.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    DomainError,
    MalformedHeaderError,
    ShapeError,
    TruncatedPayloadError,
)

__all__ = ["Tensor", "save_tensor", "load_tensor"]


class Tensor:
    """Immutable 4-D float32 array with dims (n, c, h, w).

    Parameters
    ----------
    data:
        Anything ``np.asarray`` accepts. Must be rank 4 and finite.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32, order="C")  # own copy, never alias
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be 4-D (n, c, h, w); got shape {arr.shape}")
        if arr.size and not np.isfinite(arr).all():
            raise DomainError("tensor contains non-finite elements")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @classmethod
    def zeros(cls, n, c, h, w):
        return cls(np.zeros((n, c, h, w), dtype=np.float32))

    @classmethod
    def from_flat(cls, dims, flat):
        """Build from extents plus a flat row-major payload."""
        n, c, h, w = (int(d) for d in dims)
        flat = np.asarray(flat, dtype=np.float32)
        if flat.size != n * c * h * w:
            raise ShapeError(
                f"payload holds {flat.size} elements, dims {(n, c, h, w)} "
                f"need {n * c * h * w}"
            )
        return cls(flat.reshape(n, c, h, w))

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def c(self):
        return self.data.shape[1]

    @property
    def h(self):
        return self.data.shape[2]

    @property
    def w(self):
        return self.data.shape[3]

    @property
    def dims(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(dims={self.data.shape})"


_HEADER = struct.Struct("<4I")


def save_tensor(t: Tensor) -> bytes:
    """Serialize: 16-byte header of four little-endian uint32 extents,
    then the float32 payload in row-major order."""
    payload = np.ascontiguousarray(t.data, dtype="<f4")
    return _HEADER.pack(*t.dims) + payload.tobytes()


def load_tensor(buf: bytes) -> Tensor:
    if len(buf) < _HEADER.size:
        raise MalformedHeaderError(
            f"tensor header needs {_HEADER.size} bytes, got {len(buf)}"
        )
    dims = _HEADER.unpack_from(buf)
    expected = 4 * int(np.prod([max(d, 0) for d in dims], dtype=np.int64))
    body = buf[_HEADER.size:]
    if len(body) < expected:
        raise TruncatedPayloadError(
            f"tensor payload for dims {dims} needs {expected} bytes, got {len(body)}"
        )
    if len(body) > expected:
        raise MalformedHeaderError(
            f"{len(body) - expected} trailing bytes after tensor payload"
        )
    flat = np.frombuffer(body, dtype="<f4", count=expected // 4)
    return Tensor.from_flat(dims, flat)
