from abc import ABC, abstractmethod
from pathlib import Path
import struct

import numpy as np

from fcl_sim.exceptions import DataFormatError


class ByteReader:
    """
    Sequential reader over an in-memory file that reports truncation as a DataFormatError.
    """

    def __init__(self, data: bytes, path: str):
        self._data = data
        self._path = path
        self._offset = 0

    def read(self, n: int) -> bytes:
        if self._offset + n > len(self._data):
            raise DataFormatError(
                f"truncated: needed {n} bytes at offset {self._offset}, file has {len(self._data)}",
                path=self._path,
            )
        chunk = self._data[self._offset : self._offset + n]
        self._offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.read(dtype.itemsize * count), dtype=dtype, count=count)

    @property
    def remaining(self) -> int:
        return len(self._data) - self._offset


class BaseCodec(ABC):
    """
    Little-endian binary file with a 4-byte magic and a u32 version, followed by
    a format-specific payload.
    """

    magic: bytes = b""
    version: int = 1

    def __init__(self, path):
        self._path = Path(path)

    @property
    def path(self) -> Path:
        return self._path

    @abstractmethod
    def _encode(self, obj) -> bytes:
        """
        Serializes everything after the magic and version.
        """

    @abstractmethod
    def _decode(self, reader: ByteReader):
        """
        Rebuilds the object from everything after the magic and version.
        """

    def save(self, obj) -> Path:
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._path.write_bytes(self.magic + struct.pack("<I", self.version) + self._encode(obj))
        return self._path

    def load(self):
        data = self._path.read_bytes()
        if not data:
            raise DataFormatError("empty file", path=str(self._path))

        reader = ByteReader(data, str(self._path))
        magic = reader.read(len(self.magic))
        if magic != self.magic:
            raise DataFormatError(
                f"bad magic {magic!r}, expected {self.magic!r}", path=str(self._path)
            )
        (version,) = reader.unpack("<I")
        if version != self.version:
            raise DataFormatError(f"unsupported version {version}", path=str(self._path))

        obj = self._decode(reader)
        if reader.remaining:
            raise DataFormatError(
                f"{reader.remaining} trailing bytes after payload", path=str(self._path)
            )
        return obj
