"""Binary checkpoint format with integrity checking.

Layout (all integers little-endian):

    magic          4 bytes  b"GPCL"
    version        u32
    config_len     u32      followed by the canonical config text (UTF-8)
    runtime_len    u32      followed by a JSON runtime block (RNG state,
                            counters) -- kept separate so the config text
                            stays exactly what the run resolved
    num_records    u32
    per record:    u32 name_len, name UTF-8, u32 ndim, u64 dims...,
                   row-major float64 payload
    crc32          u32      of every preceding byte

Array records hold model parameters plus optimizer moments under the
``adam.m.`` / ``adam.v.`` prefixes and the scalar ``adam.step``.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"GPCL"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ChecksumMismatchError(CheckpointError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint contents do not fit the requested model (e.g. shapes)."""


@dataclass
class Checkpoint:
    config_text: str
    runtime: dict
    records: dict[str, np.ndarray]


def save_checkpoint(path: str | Path, config_text: str, runtime: dict,
                    records: dict[str, np.ndarray]) -> None:
    chunks: list[bytes] = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    config_bytes = config_text.encode("utf-8")
    chunks.append(struct.pack("<I", len(config_bytes)))
    chunks.append(config_bytes)
    runtime_bytes = json.dumps(runtime, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(runtime_bytes)))
    chunks.append(runtime_bytes)
    chunks.append(struct.pack("<I", len(records)))
    for name, array in records.items():
        arr = np.ascontiguousarray(array, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    payload = b"".join(chunks)
    payload += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    Path(path).write_bytes(payload)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ChecksumMismatchError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64s(self, n: int) -> tuple[int, ...]:
        return struct.unpack(f"<{n}Q", self.take(8 * n))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 8:
        raise ChecksumMismatchError("checkpoint truncated")
    body, stored_crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise ChecksumMismatchError("checkpoint CRC mismatch")
    reader = _Reader(body)
    if reader.take(4) != MAGIC:
        raise VersionMismatchError("not a checkpoint file (bad magic)")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    config_text = reader.take(reader.u32()).decode("utf-8")
    runtime = json.loads(reader.take(reader.u32()).decode("utf-8"))
    records: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shape = reader.u64s(ndim)
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(8 * count), dtype="<f8")
        records[name] = data.reshape(shape).astype(np.float64)
    if reader.pos != len(body):
        raise ChecksumMismatchError("checkpoint has trailing bytes")
    return Checkpoint(config_text, runtime, records)
