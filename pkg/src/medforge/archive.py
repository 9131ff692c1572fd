"""Tensor archive container and element-wise checkpoint averaging.

Container layout (all integers little-endian):

    magic   4 bytes  b"MFTA"
    version u32      1
    count   u32      number of tensors
    per tensor, names in lexicographic order:
        name_len u32, name UTF-8, rank u32, dims rank*u64,
        data float32 raw little-endian, row-major
    checksum u64     FNV-1a over every preceding byte

Serialization is canonical: archives with equal content produce
byte-identical files regardless of insertion order. Averaging
accumulates in float64 before rounding back to float32, so the result
does not depend on summand order.
"""

from __future__ import annotations

import struct
from typing import Iterable, Mapping, Sequence

import numpy as np

_MAGIC = b"MFTA"
_VERSION = 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

try:  # optional JIT; the pure-Python loop below is the reference
    from numba import njit as _njit

    @_njit(cache=True)
    def _fnv1a_u8(data):  # pragma: no cover - exercised via fnv1a()
        h = np.uint64(0xCBF29CE484222325)
        p = np.uint64(0x100000001B3)
        for i in range(data.size):
            h = (h ^ np.uint64(data[i])) * p
        return h

    def fnv1a(data: bytes) -> int:
        return int(_fnv1a_u8(np.frombuffer(data, dtype=np.uint8)))

except ImportError:  # pragma: no cover

    def fnv1a(data: bytes) -> int:
        h = _FNV_OFFSET
        for b in data:
            h = ((h ^ b) * _FNV_PRIME) & _MASK64
        return h


class ArchiveFormatError(ValueError):
    """Bad magic, unsupported version, or checksum mismatch."""


class TensorArchive:
    """Named map of float32 tensors."""

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None):
        self.tensors: dict[str, np.ndarray] = {}
        for name, data in (tensors or {}).items():
            self[name] = data

    def __setitem__(self, name: str, data) -> None:
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim:  # ascontiguousarray would promote rank-0 to rank-1
            arr = np.ascontiguousarray(arr)
        self.tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def same_content(self, other: "TensorArchive") -> bool:
        if self.names() != other.names():
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in ((self.tensors[n], other.tensors[n]) for n in self.names())
        )


def serialize(archive: TensorArchive) -> bytes:
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(archive))]
    for name in archive.names():
        arr = archive.tensors[name]
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        parts.append(arr.astype("<f4", copy=False).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a(body))


def deserialize(blob: bytes) -> TensorArchive:
    if len(blob) < len(_MAGIC) + 8 + 8:
        raise OSError("truncated archive: shorter than minimal header")
    if blob[:4] != _MAGIC:
        raise ArchiveFormatError(f"bad magic: {blob[:4]!r}")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if fnv1a(body) != stored:
        raise ArchiveFormatError("checksum mismatch")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ArchiveFormatError(f"unsupported version: {version}")
    offset = 12
    archive = TensorArchive()

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(body):
            raise OSError("truncated archive: tensor data cut off")
        piece = body[offset : offset + size]
        offset += size
        return piece

    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        numel = 1
        for d in dims:
            numel *= d
        raw = take(4 * numel)
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        if name in archive:
            raise ArchiveFormatError(f"duplicate tensor name: {name!r}")
        archive.tensors[name] = arr
    if offset != len(body):
        raise ArchiveFormatError(f"{len(body) - offset} trailing bytes after tensors")
    return archive


def write_archive(archive: TensorArchive, path) -> int:
    blob = serialize(archive)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def read_archive(path) -> TensorArchive:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def average(archives: Sequence[TensorArchive] | Iterable[TensorArchive]) -> TensorArchive:
    """Element-wise arithmetic mean of two or more archives.

    All archives must expose identical tensor names and shapes; the
    first divergence is reported by name. Accumulation runs in float64.
    """
    archives = list(archives)
    if len(archives) < 2:
        raise ValueError(f"need at least 2 archives, got {len(archives)}")
    reference = archives[0]
    names = reference.names()
    for i, other in enumerate(archives[1:], start=2):
        if other.names() != names:
            diverging = sorted(set(names) ^ set(other.names()))[0]
            raise ValueError(f"archive {i} tensor set differs at {diverging!r}")
        for name in names:
            if other.tensors[name].shape != reference.tensors[name].shape:
                raise ValueError(
                    f"archive {i} shape mismatch for {name!r}: "
                    f"{other.tensors[name].shape} vs {reference.tensors[name].shape}"
                )
    result = TensorArchive()
    k = len(archives)
    for name in names:
        acc = np.zeros(reference.tensors[name].shape, dtype=np.float64)
        for archive in archives:
            acc += archive.tensors[name]
        result.tensors[name] = (acc / k).astype(np.float32)
    return result
