"""Aux/ring buffer transport and timescale conversion.

A BufferPair models the two shared regions the kernel side of a precise
sampler writes and a profiler reads in a producer-consumer fashion:

* the *aux* buffer receives raw 64-byte sample packets;
* the *ring* buffer carries fixed-size metadata entries (offset, size,
  flags) describing each chunk written to aux.

The ring allocation is (N+1) pages: one metadata page holding the
timescale parameters and cursor snapshots, plus N data pages.  Cursors
are free-running 64-bit counters; fill is head - tail, positions are
cursor mod capacity.  Aux space is reclaimed only by a drain, so payload
bytes are never overwritten in place.

Loss accounting: an append that does not fit in aux writes nothing and
reports the dropped byte count.  An append whose metadata entry does not
fit in the ring keeps the payload bytes in aux but orphans them (no entry
points at them), so they are also reported dropped; either way the next
successfully appended entry carries the TRUNCATED flag.  This keeps
"bytes appended == bytes drained + bytes dropped" exact for any
interleaving of appends and drains.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .codec import PACKET_SIZE

DEFAULT_PAGE_SIZE = 65536

# Serialized ring entry: aux_offset u64, aux_size u64, flags u32.
RING_ENTRY = struct.Struct("<QQI")
RING_ENTRY_SIZE = RING_ENTRY.size

_MASK64 = (1 << 64) - 1


class AuxFlags(enum.IntFlag):
    """Status flags on a metadata entry (perf AUX flag bit values)."""

    NONE = 0
    TRUNCATED = 0x01
    COLLISION = 0x08


@dataclass(frozen=True)
class BufferConfig:
    """Sizes for one buffer pair.

    ring_pages counts data pages; the metadata page is allocated on top.
    aux_watermark_bytes defaults to half the aux capacity, halving wakeup
    frequency relative to full-buffer signalling while bounding the loss
    window.
    """

    page_size_bytes: int = DEFAULT_PAGE_SIZE
    ring_pages: int = 16
    aux_pages: int = 16
    aux_watermark_bytes: int | None = None

    def __post_init__(self):
        if self.page_size_bytes <= 0:
            raise ValueError("page_size_bytes must be positive")
        if self.ring_pages <= 0:
            raise ValueError("ring_pages must be positive")
        if self.aux_pages <= 0:
            raise ValueError("aux_pages must be positive")
        if self.aux_watermark_bytes is not None:
            if self.aux_watermark_bytes <= 0:
                raise ValueError("aux_watermark_bytes must be positive")
            if self.aux_watermark_bytes > self.aux_capacity_bytes:
                raise ValueError("aux_watermark_bytes exceeds aux capacity")

    @property
    def ring_capacity_bytes(self) -> int:
        return self.ring_pages * self.page_size_bytes

    @property
    def ring_total_allocation_bytes(self) -> int:
        # Data pages plus the metadata page.
        return (self.ring_pages + 1) * self.page_size_bytes

    @property
    def aux_capacity_bytes(self) -> int:
        return self.aux_pages * self.page_size_bytes

    @property
    def watermark_bytes(self) -> int:
        if self.aux_watermark_bytes is not None:
            return self.aux_watermark_bytes
        return self.aux_capacity_bytes // 2


@dataclass(frozen=True)
class TimescaleParams:
    """Raw-tick to nanosecond conversion parameters from the metadata page."""

    time_zero: int = 0
    time_shift: int = 0
    time_mult: int = 1

    def __post_init__(self):
        if not 0 <= self.time_shift <= 63:
            raise ValueError("time_shift must be in [0, 63]")
        if not 0 < self.time_mult <= 0xFFFFFFFF:
            raise ValueError("time_mult must be a positive u32")
        if not 0 <= self.time_zero <= _MASK64:
            raise ValueError("time_zero out of u64 range")


@dataclass(frozen=True)
class AuxRecord:
    """Metadata describing one chunk of sample bytes in the aux buffer."""

    aux_offset: int
    aux_size: int
    flags: AuxFlags = AuxFlags.NONE


@dataclass
class AppendResult:
    """Outcome of one producer append.

    record is the metadata entry now in the ring, or None when either the
    payload (aux full) or the entry (ring full) was dropped; dropped_bytes
    is the payload byte count lost in that case.  watermark_crossed
    reflects the aux fill after the operation.
    """

    record: AuxRecord | None
    dropped_bytes: int
    watermark_crossed: bool


class _Region:
    """Byte region with free-running head/tail cursors and wraparound."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.data = bytearray(capacity)
        self.head = 0
        self.tail = 0

    @property
    def fill(self) -> int:
        return self.head - self.tail

    @property
    def free(self) -> int:
        return self.capacity - self.fill

    def write(self, payload: bytes) -> int:
        """Copy payload at head (wrapping); returns the start position."""
        pos = self.head % self.capacity
        first = min(len(payload), self.capacity - pos)
        self.data[pos:pos + first] = payload[:first]
        if first < len(payload):
            self.data[0:len(payload) - first] = payload[first:]
        self.head += len(payload)
        return pos

    def read_at(self, pos: int, size: int) -> bytes:
        """Read size bytes starting at position pos (wrapping)."""
        pos %= self.capacity
        first = min(size, self.capacity - pos)
        out = bytes(self.data[pos:pos + first])
        if first < size:
            out += bytes(self.data[0:size - first])
        return out


class BufferPair:
    """One ring + aux buffer pair with its metadata page.

    Safe for one producer and one consumer: the producer publishes head
    only after the payload bytes are in place, the consumer publishes
    tail only after copying out (the interpreter serialises the int
    updates; the ordering here keeps the protocol correct).
    """

    def __init__(self, config: BufferConfig, timescale: TimescaleParams = TimescaleParams()):
        self.config = config
        self.timescale = timescale
        self.ring = _Region(config.ring_capacity_bytes)
        self.aux = _Region(config.aux_capacity_bytes)
        self._pending_truncated = False
        self.dropped_bytes_total = 0
        self.truncated_events = 0

    def cursor_snapshot(self) -> dict[str, int]:
        return {
            "ring_head": self.ring.head,
            "ring_tail": self.ring.tail,
            "aux_head": self.aux.head,
            "aux_tail": self.aux.tail,
        }


def create_buffers(config: BufferConfig,
                   timescale: TimescaleParams = TimescaleParams()) -> BufferPair:
    """Allocate a zeroed buffer pair with head == tail == 0."""
    return BufferPair(config, timescale)


def producer_append(buffers: BufferPair, packets: bytes,
                    flags: AuxFlags = AuxFlags.NONE) -> AppendResult:
    """Append packet bytes to aux and their metadata entry to the ring.

    packets must be a whole number of 64-byte packets.  See the module
    docstring for the two drop paths; a drop arms the TRUNCATED flag for
    the next entry that does make it into the ring.
    """
    if len(packets) % PACKET_SIZE:
        raise ValueError("packets length must be a multiple of 64")

    watermark = buffers.config.watermark_bytes
    if len(packets) > buffers.aux.free:
        buffers._pending_truncated = True
        buffers.dropped_bytes_total += len(packets)
        buffers.truncated_events += 1
        return AppendResult(None, len(packets), buffers.aux.fill >= watermark)

    pos = buffers.aux.write(packets)
    if buffers.ring.free < RING_ENTRY_SIZE:
        # Entry dropped: the payload stays in aux but nothing points at
        # it, so it is lost to the consumer.
        buffers._pending_truncated = True
        buffers.dropped_bytes_total += len(packets)
        buffers.truncated_events += 1
        return AppendResult(None, len(packets), buffers.aux.fill >= watermark)

    if buffers._pending_truncated:
        flags |= AuxFlags.TRUNCATED
        buffers._pending_truncated = False
    record = AuxRecord(aux_offset=pos, aux_size=len(packets), flags=flags)
    buffers.ring.write(RING_ENTRY.pack(record.aux_offset, record.aux_size, int(record.flags)))
    return AppendResult(record, 0, buffers.aux.fill >= watermark)


def consumer_drain(buffers: BufferPair) -> tuple[list[AuxRecord], list[bytes]]:
    """Consume every unread metadata entry with its payload, in FIFO order.

    Payloads are reassembled across the aux wrap point.  Both fills are 0
    afterwards; orphaned aux bytes (entry dropped) are reclaimed without
    being returned.
    """
    records: list[AuxRecord] = []
    payloads: list[bytes] = []
    while buffers.ring.fill >= RING_ENTRY_SIZE:
        raw = buffers.ring.read_at(buffers.ring.tail, RING_ENTRY_SIZE)
        offset, size, flag_bits = RING_ENTRY.unpack(raw)
        record = AuxRecord(offset, size, AuxFlags(flag_bits))
        payloads.append(buffers.aux.read_at(offset, size))
        records.append(record)
        buffers.ring.tail += RING_ENTRY_SIZE
    # Entries are written whole, so no partial entry can remain.
    assert buffers.ring.fill == 0
    buffers.aux.tail = buffers.aux.head
    return records, payloads


def convert_timestamp(ts: int, params: TimescaleParams) -> int:
    """Convert raw timer ticks to nanoseconds.

    time_zero + (quot * time_mult) + ((rem * time_mult) >> time_shift)
    with quot = ts >> time_shift and rem the masked low bits; this equals
    time_zero + floor(ts * time_mult / 2**time_shift) exactly.
    Intermediates are exact; the result wraps to 64 bits.
    """
    quot = ts >> params.time_shift
    rem = ts & ((1 << params.time_shift) - 1)
    return (params.time_zero + quot * params.time_mult
            + ((rem * params.time_mult) >> params.time_shift)) & _MASK64
