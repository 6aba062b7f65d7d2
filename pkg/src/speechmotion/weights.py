"""Named float32 tensor store with a bit-exact binary file format.

File layout, all fields little-endian:

    header, 16 bytes:
        magic    4 bytes   b"LSPW"
        version  u32       currently 1
        count    u32       number of tensor records that follow
        reserved u32       always 0
    per tensor record:
        name_len u16
        name     name_len bytes, UTF-8
        dtype    u8        0 = float32 (the only defined code)
        rank     u8
        dims     rank * u32
        data     prod(dims) * 4 bytes, row-major float32

Round-tripping a store writes tensors in insertion order and reproduces every
payload bit exactly. Readers reject bad magic, unknown versions or dtypes,
nonzero reserved fields, duplicate names, non-finite values, and truncation.

Canonical tensor names used by the engine (dotted lowercase paths):

    apc.gru{1,2,3}.{w_ih,w_hh,b_ih,b_hh}        speech encoder GRU stack
    apc.head.{w,b}                              optional 512->80 linear head
    mouth.lstm{1,2,3}.{w_ih,w_hh,b_ih,b_hh}     mouth LSTM stack
    mouth.mlp{1,2,3}.{w,b}                      mouth decoder MLP
    pose.input.{w,b}, pose.cond.w               pose net input projections
    pose.block{1,2}.layer{1..7}.{filter,gate}.{curr,prev,cond}
    pose.block{1,2}.layer{1..7}.{res,skip}.w
    pose.post.{conv1,conv2}.{w,b}               pose post-net
    pose.post.{mu,s}.{w,b}                      Gaussian parameter heads
    manifold.db                                 projection database rows
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MAGIC = b"LSPW"
FORMAT_VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sIII")


@dataclass
class WeightStore:
    """Ordered mapping from tensor name to float32 ndarray."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, values: np.ndarray) -> None:
        if name in self.tensors:
            raise DataError(f"duplicate tensor name {name!r}")
        if not name:
            raise DataError("tensor name must be non-empty")
        arr = np.asarray(values)
        if arr.dtype != np.float32:
            raise DataError(f"tensor {name!r} must be float32, got {arr.dtype}")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"tensor {name!r} contains non-finite values")
        # ascontiguousarray promotes rank 0 to rank 1; reshape restores it.
        self.tensors[name] = np.ascontiguousarray(arr).reshape(arr.shape)

    def get(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise DataError(f"missing tensor {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)


def save_weights(store: WeightStore, path: str) -> None:
    """Write the store to ``path`` in the binary format above."""
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(store.tensors), 0)]
    for name, arr in store.tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"tensor name too long ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4", copy=False).tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


class _Reader:
    """Cursor over a byte buffer that turns truncation into DataError."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise DataError(
                f"truncated weight file: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos:end]
        self.pos = end
        return out


def load_weights(path: str) -> WeightStore:
    """Read a weight file, validating structure and values."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    magic, version, count, reserved = _HEADER.unpack(r.take(_HEADER.size))
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported weight format version {version}")
    if reserved != 0:
        raise DataError(f"reserved header field must be 0, got {reserved}")

    store = WeightStore()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2))
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataError(f"tensor name is not valid UTF-8: {e}") from None
        dtype, rank = struct.unpack("<BB", r.take(2))
        if dtype != DTYPE_F32:
            raise DataError(f"tensor {name!r}: unsupported dtype code {dtype}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n_values = 1
        for d in dims:
            n_values *= d
        raw = r.take(4 * n_values)
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        if name in store.tensors:
            raise DataError(f"duplicate tensor name {name!r}")
        store.add(name, arr)
    if r.pos != len(data):
        raise DataError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return store
