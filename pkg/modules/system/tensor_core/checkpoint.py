# modules/system/tensor_core/checkpoint.py
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from core.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from core.exceptions import CheckpointError

# magic, u16 версия, u32 число записей
_HEADER = struct.Struct("<4sHI")


def save_checkpoint(path: Union[str, Path], arrays: Dict[str, np.ndarray]) -> Path:
    """Запись массивов в формате BSHP"""
    chunks = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(arrays))]
    for name, value in arrays.items():
        data = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    return path


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointError("Truncated checkpoint")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Чтение чекпоинта BSHP"""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    reader = _Reader(path.read_bytes())

    magic, version, count = reader.unpack(_HEADER.format)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Bad checkpoint magic: {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version: {version}")

    arrays: Dict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(reader.take(8 * size), dtype="<f8")
        arrays[name] = data.astype(np.float64).reshape(shape)

    if reader.offset != len(reader.payload):
        raise CheckpointError("Trailing bytes after last record")
    return arrays
