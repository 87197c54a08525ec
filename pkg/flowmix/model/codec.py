"""Little-endian binary helpers shared by the dataset and model containers."""

from __future__ import annotations

import logging
import struct

import numpy as np

from ..exceptions import BadMagicError, FormatError, TruncatedPayloadError, VersionMismatchError

_LOGGER = logging.getLogger(__name__)

_U32 = struct.Struct("<I")


class Reader:
    """Cursor over a byte buffer that raises ``TruncatedPayloadError`` on overrun."""

    def __init__(self, payload: bytes, what: str) -> None:
        self._payload = memoryview(payload)
        self._offset = 0
        self._what = what

    @property
    def remaining(self) -> int:
        return len(self._payload) - self._offset

    def take(self, count: int) -> bytes:
        if count < 0 or self.remaining < count:
            raise TruncatedPayloadError(
                f"{self._what}: needed {count} bytes at offset {self._offset}, {self.remaining} left"
            )
        chunk = self._payload[self._offset:self._offset + count].tobytes()
        self._offset += count
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).copy()

    def header(self, magic: bytes, version: int) -> None:
        found = self.take(len(magic))
        if found != magic:
            raise BadMagicError(f"{self._what}: expected magic {magic!r}, found {found!r}")
        declared = self.u32()
        if declared != version:
            raise VersionMismatchError(f"{self._what}: unsupported version {declared} (expected {version})")


def u32(value: int) -> bytes:
    return _U32.pack(int(value))


def pack_sections(magic: bytes, version: int, sections: dict[str, np.ndarray]) -> bytes:
    """Serialize named float32 arrays.

    Layout: magic, u32 version, u32 section count, then per section
    u32 name length, UTF-8 name, u32 rank, rank x u32 extents and the
    little-endian float32 payload in row-major order.
    """
    chunks = [magic, u32(version), u32(len(sections))]
    for name, array in sections.items():
        encoded = name.encode("utf-8")
        values = np.ascontiguousarray(array, dtype="<f4")
        chunks.append(u32(len(encoded)))
        chunks.append(encoded)
        chunks.append(u32(values.ndim))
        chunks.extend(u32(extent) for extent in values.shape)
        chunks.append(values.tobytes())
    return b"".join(chunks)


def unpack_sections(payload: bytes, magic: bytes, version: int, what: str) -> dict[str, np.ndarray]:
    reader = Reader(payload, what)
    reader.header(magic, version)
    count = reader.u32()
    sections: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = tuple(reader.u32() for _ in range(rank))
        sections[name] = reader.array("<f4", int(np.prod(shape, dtype=np.int64))).reshape(shape)
    if reader.remaining:
        raise FormatError(f"{what}: {reader.remaining} trailing bytes after the last section")
    _LOGGER.debug("Parsed %d sections from %s", count, what)
    return sections
