"""Raw trace file format for persisted sampling sessions.

Layout (all integers little-endian):

    magic        "NMO1"  (4 bytes)
    version      u16     (currently 1)
    page_size    u32
    core_count   u16
    per core:
        core_id       u16
        record_count  u32
        record_count x [aux_offset u64, aux_size u64, flags u32,
                        then aux_size payload bytes]
    trailer      u64  FNV-1a 64 digest of every preceding byte

The digest is a cheap integrity check, not a cryptographic one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .transport import RING_ENTRY, AuxFlags, AuxRecord

MAGIC = b"NMO1"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHIH")
_CORE_HEADER = struct.Struct("<HI")
_DIGEST = struct.Struct("<Q")

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class TraceFormatError(ValueError):
    """Malformed header or structure."""


class TraceIntegrityError(ValueError):
    """Digest trailer does not match the file contents."""


def fnv1a_64(data: bytes, h: int = FNV_OFFSET_BASIS) -> int:
    """FNV-1a 64-bit digest; pass the previous value to run incrementally."""
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


@dataclass
class CoreTrace:
    """Drained records and payloads of one simulated core, in drain order."""

    core_id: int
    records: list[AuxRecord] = field(default_factory=list)
    payloads: list[bytes] = field(default_factory=list)

    def payload_bytes(self) -> bytes:
        return b"".join(self.payloads)


def write_trace(path, page_size: int, cores: list[CoreTrace]) -> None:
    """Serialize per-core records + payloads and append the digest trailer."""
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, page_size, len(cores))]
    for core in cores:
        if len(core.records) != len(core.payloads):
            raise ValueError("records and payloads must pair up")
        parts.append(_CORE_HEADER.pack(core.core_id, len(core.records)))
        for record, payload in zip(core.records, core.payloads):
            if len(payload) != record.aux_size:
                raise ValueError("payload length must equal aux_size")
            parts.append(RING_ENTRY.pack(record.aux_offset, record.aux_size,
                                         int(record.flags)))
            parts.append(payload)
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(_DIGEST.pack(fnv1a_64(body)))


def read_trace(path) -> tuple[int, list[CoreTrace]]:
    """Read and verify a trace file; returns (page_size, cores)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size + _DIGEST.size:
        raise TraceFormatError("file too short for header and trailer")
    body, trailer = blob[:-_DIGEST.size], blob[-_DIGEST.size:]
    (stored,) = _DIGEST.unpack(trailer)
    if fnv1a_64(body) != stored:
        raise TraceIntegrityError("digest mismatch")

    magic, version, page_size, core_count = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TraceFormatError(f"unsupported format version {version}")

    off = _HEADER.size
    cores: list[CoreTrace] = []
    for _ in range(core_count):
        if off + _CORE_HEADER.size > len(body):
            raise TraceFormatError("truncated core header")
        core_id, record_count = _CORE_HEADER.unpack_from(body, off)
        off += _CORE_HEADER.size
        core = CoreTrace(core_id)
        for _ in range(record_count):
            if off + RING_ENTRY.size > len(body):
                raise TraceFormatError("truncated record header")
            aux_offset, aux_size, flag_bits = RING_ENTRY.unpack_from(body, off)
            off += RING_ENTRY.size
            if off + aux_size > len(body):
                raise TraceFormatError("truncated payload")
            core.records.append(AuxRecord(aux_offset, aux_size, AuxFlags(flag_bits)))
            core.payloads.append(body[off:off + aux_size])
            off += aux_size
        cores.append(core)
    if off != len(body):
        raise TraceFormatError(f"{len(body) - off} trailing bytes after last core")
    return page_size, cores
