"""Bit-exact codec for 64-byte memory-access sample packets.

Packet wire format (offsets are bytes from the packet base, all multi-byte
fields little-endian):

    [0]      op kind        0=load, 1=store
    [1]      memory level   0=L1, 1=L2, 2=SLC, 3=DRAM
    [2:6]    latency        u32, cycles
    [6:8]    core id        u16
    [8:30]   reserved, zero
    [30]     0xb2           address marker
    [31:39]  virtual addr   u64
    [39:55]  reserved, zero
    [55]     0x71           timestamp marker
    [56:64]  timestamp      u64, raw timer ticks

Packets in a stream are 64-byte aligned from the stream origin.  A packet
whose markers are wrong, or whose address or timestamp is zero, is skipped
rather than rejected: traces legitimately contain gaps and stale regions.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

PACKET_SIZE = 64
ADDR_MARKER = 0xB2
TS_MARKER = 0x71
ADDR_MARKER_OFFSET = 30
TS_MARKER_OFFSET = 55

_HEAD = struct.Struct("<BBIH")  # op kind, level, latency, core id
_U64 = struct.Struct("<Q")

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1
_MASK16 = (1 << 16) - 1


class OpKind(enum.IntEnum):
    LOAD = 0
    STORE = 1


class MemLevel(enum.IntEnum):
    L1 = 0
    L2 = 1
    SLC = 2
    DRAM = 3


class SkipReason(enum.Enum):
    """Why a packet was skipped, checked in this order."""

    BAD_ADDRESS_MARKER = "bad_address_marker"
    BAD_TIMESTAMP_MARKER = "bad_timestamp_marker"
    ZERO_ADDRESS = "zero_address"
    ZERO_TIMESTAMP = "zero_timestamp"


class TruncatedStreamError(ValueError):
    """Stream length is not a multiple of the packet size."""

    def __init__(self, residual: int):
        self.residual = residual
        super().__init__(f"trailing partial packet of {residual} bytes")


@dataclass(frozen=True)
class SampleRecord:
    """One decoded memory-access sample."""

    virtual_address: int
    timestamp: int
    op_kind: OpKind
    memory_level: MemLevel
    latency_cycles: int
    core_id: int

    def __post_init__(self):
        if not 0 <= self.virtual_address <= _MASK64:
            raise ValueError("virtual_address out of u64 range")
        if not 0 <= self.timestamp <= _MASK64:
            raise ValueError("timestamp out of u64 range")
        if not 0 <= self.latency_cycles <= _MASK32:
            raise ValueError("latency_cycles out of u32 range")
        if not 0 <= self.core_id <= _MASK16:
            raise ValueError("core_id out of u16 range")


@dataclass
class StreamStats:
    """Per-reason skip counts for one decoded stream."""

    skipped: dict[SkipReason, int] = field(
        default_factory=lambda: {reason: 0 for reason in SkipReason}
    )
    accepted: int = 0

    @property
    def total_skipped(self) -> int:
        return sum(self.skipped.values())


def encode_record(record: SampleRecord) -> bytes:
    """Encode a sample into its 64-byte packet.

    Zero addresses/timestamps are encodable (the decoder will skip them).
    """
    buf = bytearray(PACKET_SIZE)
    _HEAD.pack_into(
        buf, 0,
        int(record.op_kind), int(record.memory_level),
        record.latency_cycles, record.core_id,
    )
    buf[ADDR_MARKER_OFFSET] = ADDR_MARKER
    _U64.pack_into(buf, ADDR_MARKER_OFFSET + 1, record.virtual_address)
    buf[TS_MARKER_OFFSET] = TS_MARKER
    _U64.pack_into(buf, TS_MARKER_OFFSET + 1, record.timestamp)
    return bytes(buf)


def decode_packet(packet: bytes) -> SampleRecord | SkipReason:
    """Decode one packet; total over all 64-byte inputs.

    Returns a SampleRecord, or the first applicable SkipReason in the
    order: bad address marker, bad timestamp marker, zero address, zero
    timestamp.  Op kind and memory level bytes outside their enum range
    are masked to it (&1, &3) so arbitrary marker-valid packets still
    decode.
    """
    if len(packet) != PACKET_SIZE:
        raise ValueError(f"packet must be {PACKET_SIZE} bytes, got {len(packet)}")
    if packet[ADDR_MARKER_OFFSET] != ADDR_MARKER:
        return SkipReason.BAD_ADDRESS_MARKER
    if packet[TS_MARKER_OFFSET] != TS_MARKER:
        return SkipReason.BAD_TIMESTAMP_MARKER
    (virtual_address,) = _U64.unpack_from(packet, ADDR_MARKER_OFFSET + 1)
    if virtual_address == 0:
        return SkipReason.ZERO_ADDRESS
    (timestamp,) = _U64.unpack_from(packet, TS_MARKER_OFFSET + 1)
    if timestamp == 0:
        return SkipReason.ZERO_TIMESTAMP
    op_kind, level, latency, core = _HEAD.unpack_from(packet, 0)
    return SampleRecord(
        virtual_address=virtual_address,
        timestamp=timestamp,
        op_kind=OpKind(op_kind & 0x1),
        memory_level=MemLevel(level & 0x3),
        latency_cycles=latency,
        core_id=core,
    )


def decode_stream(data: bytes) -> tuple[list[SampleRecord], StreamStats]:
    """Decode a stream of concatenated 64-byte packets in order.

    Raises TruncatedStreamError if the length is not a multiple of 64.
    Accepted records preserve packet order; accepted + skipped counts
    always equal len(data) // 64.
    """
    residual = len(data) % PACKET_SIZE
    if residual:
        raise TruncatedStreamError(residual)
    records: list[SampleRecord] = []
    stats = StreamStats()
    for off in range(0, len(data), PACKET_SIZE):
        outcome = decode_packet(data[off:off + PACKET_SIZE])
        if isinstance(outcome, SkipReason):
            stats.skipped[outcome] += 1
        else:
            records.append(outcome)
    stats.accepted = len(records)
    return records, stats
