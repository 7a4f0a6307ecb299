"""Deterministic simulator of the hardware precise-sampling pipeline.

The pipeline stages modeled, in order: an interval counter selects one
operation every `period` (with a centered random perturbation); the
selected operation is tracked for its memory latency; a selection that
arrives while the tracker or the interrupt handler is busy *collides* and
is dropped before filtering; surviving records pass the programmable
filter, are encoded as 64-byte packets and appended to the per-core aux
buffer; crossing the aux watermark raises an interrupt that drains the
buffers and occupies the handler for `interrupt_cost_ops` operations.

Time is abstract op-count time (one op = one cycle): the instrumented
run costs the ground-truth op count plus interrupt and per-sample
processing charges.  Everything is a pure function of the seeds, so
identical inputs give identical outcomes and byte-identical traces
regardless of host scheduling.

The simulated unit refuses to arm with fewer than MIN_AUX_PAGES_TO_ARM
aux pages; selections still happen but every surviving record is dropped
as truncated, matching the observed all-samples-lost behavior of
undersized buffers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .codec import MemLevel, OpKind, SampleRecord, encode_record
from .tracefile import CoreTrace
from .transport import (
    AuxFlags,
    BufferConfig,
    BufferPair,
    TimescaleParams,
    consumer_drain,
    create_buffers,
    producer_append,
)

MIN_AUX_PAGES_TO_ARM = 4

_LEVEL_ORDER = (MemLevel.L1, MemLevel.L2, MemLevel.SLC, MemLevel.DRAM)
_CHUNK = 1 << 18


class WorkloadKind(enum.Enum):
    STREAM_TRIAD = "stream_triad"
    RANDOM_GRAPH = "random_graph"
    MIXED = "mixed"


@dataclass(frozen=True)
class Region:
    """A named, non-overlapping virtual address range [base, base+length)."""

    name: str
    base_address: int
    length_bytes: int

    def __post_init__(self):
        if self.base_address <= 0:
            raise ValueError("base_address must be positive (page zero is never mapped)")
        if self.length_bytes <= 0:
            raise ValueError("length_bytes must be positive")

    @property
    def end_address(self) -> int:
        return self.base_address + self.length_bytes


@dataclass(frozen=True)
class WorkloadSpec:
    kind: WorkloadKind
    total_ops: int
    threads: int
    regions: tuple[Region, ...]
    load_fraction: float = 0.5
    stride_bytes: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.total_ops < 1:
            raise ValueError("total_ops must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not self.regions:
            raise ValueError("region layout must not be empty")
        if not 0.0 <= self.load_fraction <= 1.0:
            raise ValueError("load_fraction must be in [0, 1]")
        if self.stride_bytes < 1:
            raise ValueError("stride_bytes must be >= 1")
        ordered = sorted(self.regions, key=lambda r: r.base_address)
        for a, b in zip(ordered, ordered[1:]):
            if a.end_address > b.base_address:
                raise ValueError(f"regions {a.name!r} and {b.name!r} overlap")


@dataclass(frozen=True)
class MemoryModel:
    """Probabilistic memory-level outcome and its latency per level."""

    level_probabilities: dict[MemLevel, float]
    level_latency_cycles: dict[MemLevel, int]

    def __post_init__(self):
        total = sum(self.level_probabilities.get(lvl, 0.0) for lvl in _LEVEL_ORDER)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"level probabilities sum to {total}, expected 1")
        lats = [self.level_latency_cycles.get(lvl) for lvl in _LEVEL_ORDER]
        if any(l is None or l <= 0 for l in lats):
            raise ValueError("every level needs a positive latency")
        if not all(a < b for a, b in zip(lats, lats[1:])):
            raise ValueError("latencies must strictly increase L1 < L2 < SLC < DRAM")

    def cumulative_probs(self) -> np.ndarray:
        cum = np.cumsum([self.level_probabilities.get(lvl, 0.0) for lvl in _LEVEL_ORDER])
        cum[-1] = 1.0
        return cum

    def latency_array(self) -> np.ndarray:
        return np.array([self.level_latency_cycles[lvl] for lvl in _LEVEL_ORDER],
                        dtype=np.int64)

    def mean_latency(self) -> float:
        return sum(self.level_probabilities[lvl] * self.level_latency_cycles[lvl]
                   for lvl in _LEVEL_ORDER)


def collision_free_model() -> MemoryModel:
    """Minimal latencies: the tracker is never busy at realistic periods."""
    return MemoryModel(
        level_probabilities={MemLevel.L1: 0.70, MemLevel.L2: 0.20,
                             MemLevel.SLC: 0.08, MemLevel.DRAM: 0.02},
        level_latency_cycles={MemLevel.L1: 1, MemLevel.L2: 2,
                              MemLevel.SLC: 3, MemLevel.DRAM: 4},
    )


def contended_model() -> MemoryModel:
    """Mean latency exactly 300 ops; DRAM misses are slow enough to collide
    with the next selection at small sampling periods."""
    return MemoryModel(
        level_probabilities={MemLevel.L1: 0.60, MemLevel.L2: 0.20,
                             MemLevel.SLC: 0.12, MemLevel.DRAM: 0.08},
        level_latency_cycles={MemLevel.L1: 30, MemLevel.L2: 150,
                              MemLevel.SLC: 850, MemLevel.DRAM: 1875},
    )


@dataclass(frozen=True)
class FilterSpec:
    """Programmable post-tracking filter: kind, minimum latency, levels."""

    op_kinds: frozenset[OpKind] = frozenset(OpKind)
    min_latency: int = 0
    levels: frozenset[MemLevel] = frozenset(MemLevel)


def apply_filter(record: SampleRecord, filt: FilterSpec) -> bool:
    """True iff the record satisfies every filter criterion."""
    return (record.op_kind in filt.op_kinds
            and record.latency_cycles >= filt.min_latency
            and record.memory_level in filt.levels)


@dataclass(frozen=True)
class SamplerConfig:
    period: int
    jitter_max: int | None = None  # None -> min(255, period - 1)
    filter: FilterSpec = FilterSpec()
    buffers: BufferConfig = BufferConfig()
    interrupt_cost_ops: int = 5000
    per_sample_cost_ops: int = 50

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if self.jitter_max is not None and not 0 <= self.jitter_max < self.period:
            raise ValueError("jitter_max must satisfy 0 <= jitter_max < period")
        if self.interrupt_cost_ops < 0 or self.per_sample_cost_ops < 0:
            raise ValueError("cost knobs must be non-negative")

    @property
    def effective_jitter_max(self) -> int:
        if self.jitter_max is not None:
            return self.jitter_max
        return min(255, self.period - 1)


class MemOp(NamedTuple):
    address: int
    op_kind: OpKind
    core_id: int


class OpStream:
    """Lazily evaluable operation stream; a pure function of its spec.

    Stream-triad traverses per-thread contiguous slices of every region
    with a fixed stride, accessing the source regions (loads) then the
    destination region (store) for each element, wrapping around the
    slice until the op budget is spent.  Random-graph draws stride-
    aligned addresses uniformly over the regions with Bernoulli op kinds.
    Mixed alternates the two op-for-op.
    """

    def __init__(self, spec: WorkloadSpec):
        self.spec = spec
        base, rem = divmod(spec.total_ops, spec.threads)
        self._core_ops = [base + (1 if c < rem else 0) for c in range(spec.threads)]
        if spec.kind in (WorkloadKind.STREAM_TRIAD, WorkloadKind.MIXED):
            self._init_triad()
        if spec.kind in (WorkloadKind.RANDOM_GRAPH, WorkloadKind.MIXED):
            self._init_random()

    def _init_triad(self):
        spec = self.spec
        elems = [r.length_bytes // spec.stride_bytes for r in spec.regions]
        if any(e < spec.threads for e in elems):
            raise ValueError("each region needs at least one element per thread")
        # Per-core slice starts/lengths per region, floor-split so every
        # thread covers within one element of an equal share.
        self._slice_start = [
            np.array([(c * e) // spec.threads for e in elems], dtype=np.int64)
            for c in range(spec.threads)
        ]
        self._slice_len = [
            np.array([((c + 1) * e) // spec.threads - (c * e) // spec.threads
                      for e in elems], dtype=np.int64)
            for c in range(spec.threads)
        ]
        self._bases = np.array([r.base_address for r in spec.regions], dtype=np.int64)
        n = len(spec.regions)
        # Pattern position p accesses region p+1 (load) except the last
        # position, which stores to region 0.
        self._pattern_region = np.array([(p + 1) % n if p < n - 1 else 0
                                         for p in range(n)], dtype=np.int64)

    def _init_random(self):
        spec = self.spec
        units = [r.length_bytes // spec.stride_bytes for r in spec.regions]
        if all(u == 0 for u in units):
            raise ValueError("regions are smaller than one stride unit")
        self._unit_cum = np.cumsum(units)
        self._unit_base = self._unit_cum - np.array(units)
        self._rg_bases = np.array([r.base_address for r in spec.regions], dtype=np.int64)

    # -- canonical per-core stream definition --------------------------------

    def ops_for_core(self, core: int) -> int:
        return self._core_ops[core]

    def _triad_block(self, core: int, j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.spec.regions)
        e, p = np.divmod(j, n)
        reg = self._pattern_region[p]
        elem = self._slice_start[core][reg] + e % self._slice_len[core][reg]
        addr = self._bases[reg] + elem * self.spec.stride_bytes
        kind = (p == n - 1).astype(np.uint8)  # store at the last position
        return addr.astype(np.uint64), kind

    def _random_block(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        # Draw order per block is fixed: unit offsets first, then kinds.
        offsets = rng.integers(0, self._unit_cum[-1], size=n)
        kinds = (rng.random(n) >= self.spec.load_fraction).astype(np.uint8)
        reg = np.searchsorted(self._unit_cum, offsets, side="right")
        addr = self._rg_bases[reg] + (offsets - self._unit_base[reg]) * self.spec.stride_bytes
        return addr.astype(np.uint64), kinds

    def _core_chunks(self, core: int, chunk: int = _CHUNK) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Consecutive (addresses, kinds) blocks for one core's stream."""
        ops = self.ops_for_core(core)
        kind = self.spec.kind
        rng = None
        if kind is not WorkloadKind.STREAM_TRIAD:
            rng = np.random.Generator(np.random.PCG64(self.spec.seed ^ core))
        start = 0
        while start < ops:
            n = min(chunk, ops - start)
            j = np.arange(start, start + n, dtype=np.int64)
            if kind is WorkloadKind.STREAM_TRIAD:
                yield self._triad_block(core, j)
            elif kind is WorkloadKind.RANDOM_GRAPH:
                yield self._random_block(rng, n)
            else:
                # Even ops follow the triad sub-stream, odd ops the random
                # sub-stream; each sub-stream advances by its own index.
                addr = np.empty(n, dtype=np.uint64)
                knd = np.empty(n, dtype=np.uint8)
                even = (j % 2) == 0
                t_addr, t_kind = self._triad_block(core, j[even] // 2)
                addr[even], knd[even] = t_addr, t_kind
                n_odd = int(n - even.sum())
                if n_odd:
                    r_addr, r_kind = self._random_block(rng, n_odd)
                    addr[~even], knd[~even] = r_addr, r_kind
                yield addr, knd
            start += n

    def collect(self, core: int, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray, int, int]:
        """One pass over a core's stream.

        Returns (addresses, kinds) gathered at the ascending op indices,
        plus the exact (loads, stores) ground-truth counts of the whole
        core stream.
        """
        addr_parts, kind_parts = [], []
        stores = 0
        pos = 0
        wanted = np.asarray(indices, dtype=np.int64)
        for addr, kinds in self._core_chunks(core):
            n = len(addr)
            lo = np.searchsorted(wanted, pos)
            hi = np.searchsorted(wanted, pos + n)
            if hi > lo:
                local = wanted[lo:hi] - pos
                addr_parts.append(addr[local])
                kind_parts.append(kinds[local])
            stores += int(np.count_nonzero(kinds))
            pos += n
        ops = self.ops_for_core(core)
        gathered_addr = (np.concatenate(addr_parts) if addr_parts
                         else np.empty(0, dtype=np.uint64))
        gathered_kind = (np.concatenate(kind_parts) if kind_parts
                         else np.empty(0, dtype=np.uint8))
        return gathered_addr, gathered_kind, ops - stores, stores

    def __iter__(self) -> Iterator[MemOp]:
        """Round-robin across cores by op position."""
        chunks = [self._core_chunks(c, chunk=4096) for c in range(self.spec.threads)]
        buffers: list[tuple[np.ndarray, np.ndarray] | None] = [None] * self.spec.threads
        offsets = [0] * self.spec.threads
        max_ops = max(self._core_ops)
        for j in range(max_ops):
            for core in range(self.spec.threads):
                if j >= self._core_ops[core]:
                    continue
                if buffers[core] is None or offsets[core] >= len(buffers[core][0]):
                    buffers[core] = next(chunks[core])
                    offsets[core] = 0
                addr, kinds = buffers[core]
                k = offsets[core]
                offsets[core] += 1
                yield MemOp(int(addr[k]), OpKind(int(kinds[k])), core)


def gen_workload(spec: WorkloadSpec) -> OpStream:
    """Build the operation stream for a workload spec (validates it)."""
    return OpStream(spec)


@dataclass
class CoreOutcome:
    core_id: int
    ground_truth_ops: int
    ground_truth_by_kind: dict[str, int]
    selected: int = 0
    collided: int = 0
    filtered_out: int = 0
    delivered: int = 0
    truncated_dropped: int = 0
    interrupts: int = 0
    baseline_time_ops: int = 0
    instrumented_time_ops: int = 0


@dataclass
class SimOutcome:
    """Ground-truth and delivered-sample accounting for one run."""

    ground_truth_ops: int
    ground_truth_by_kind: dict[str, int]
    selected: int
    collided: int
    filtered_out: int
    delivered: int
    truncated_dropped: int
    interrupts: int
    baseline_time_ops: int
    instrumented_time_ops: int
    per_core: list[CoreOutcome] = field(default_factory=list)

    def __post_init__(self):
        lost = self.collided + self.filtered_out + self.delivered + self.truncated_dropped
        if self.selected != lost:
            raise ValueError(f"accounting identity violated: {self.selected} != {lost}")

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "ground_truth_ops", "ground_truth_by_kind", "selected", "collided",
            "filtered_out", "delivered", "truncated_dropped", "interrupts",
            "baseline_time_ops", "instrumented_time_ops")}
        d["per_core"] = [vars(c).copy() for c in self.per_core]
        return d


@dataclass
class SimResult:
    outcome: SimOutcome
    core_traces: list[CoreTrace]
    buffers: dict[int, BufferPair]


def run_unsampled(stream: OpStream) -> SimResult:
    """Account a run with sampling disabled: ground truth only, no samples."""
    per_core = []
    for core in range(stream.spec.threads):
        ops = stream.ops_for_core(core)
        _, _, loads, stores = stream.collect(core, np.empty(0, dtype=np.int64))
        per_core.append(CoreOutcome(
            core_id=core, ground_truth_ops=ops,
            ground_truth_by_kind={"load": loads, "store": stores},
            baseline_time_ops=ops, instrumented_time_ops=ops))
    outcome = SimOutcome(
        ground_truth_ops=sum(c.ground_truth_ops for c in per_core),
        ground_truth_by_kind={
            "load": sum(c.ground_truth_by_kind["load"] for c in per_core),
            "store": sum(c.ground_truth_by_kind["store"] for c in per_core),
        },
        selected=0, collided=0, filtered_out=0, delivered=0,
        truncated_dropped=0, interrupts=0,
        baseline_time_ops=stream.spec.total_ops,
        instrumented_time_ops=stream.spec.total_ops,
        per_core=per_core)
    return SimResult(outcome, [CoreTrace(c) for c in range(stream.spec.threads)], {})


def _selection_indices(rng: np.random.Generator, ops: int, period: int,
                       jitter_max: int) -> np.ndarray:
    """Op indices hit by the interval counter.

    The counter reloads to period plus a centered perturbation drawn
    uniformly from [-(ceil(j/2)), floor(j/2)]; centering keeps the
    expected selection rate at 1/period so sample*period estimates stay
    unbiased.
    """
    lo = -((jitter_max + 1) // 2)
    hi = jitter_max // 2
    est = ops // max(1, period + lo) + 16
    gaps = rng.integers(lo, hi + 1, size=est) + period
    positions = np.cumsum(gaps)
    while positions[-1] < ops:
        more = rng.integers(lo, hi + 1, size=1024) + period
        positions = np.concatenate([positions, positions[-1] + np.cumsum(more)])
    selected = positions[positions <= ops] - 1
    return selected.astype(np.int64)


def run_sampling(stream: OpStream, config: SamplerConfig, model: MemoryModel,
                 rng_seed: int,
                 timescale: TimescaleParams = TimescaleParams()) -> SimResult:
    """Run the sampling pipeline over the stream; see the module docstring.

    Each core runs independently on its own buffer pair with an RNG
    stream derived from rng_seed XOR core_id; results do not depend on
    host scheduling.
    """
    armed = config.buffers.aux_pages >= MIN_AUX_PAGES_TO_ARM
    jmax = config.effective_jitter_max
    cum_probs = model.cumulative_probs()
    latencies = model.latency_array()
    filt = config.filter
    kinds_ok = [OpKind(0) in filt.op_kinds, OpKind(1) in filt.op_kinds]
    levels_ok = [MemLevel(i) in filt.levels for i in range(4)]

    per_core: list[CoreOutcome] = []
    core_traces: list[CoreTrace] = []
    buffers: dict[int, BufferPair] = {}

    for core in range(stream.spec.threads):
        ops = stream.ops_for_core(core)
        rng = np.random.Generator(np.random.PCG64(rng_seed ^ core))
        sel = _selection_indices(rng, ops, config.period, jmax)
        u = rng.random(len(sel))
        level_idx = np.searchsorted(cum_probs, u, side="right")
        lat = latencies[level_idx]
        addr, kind, loads, stores = stream.collect(core, sel)

        out = CoreOutcome(core_id=core, ground_truth_ops=ops,
                          ground_truth_by_kind={"load": loads, "store": stores},
                          selected=len(sel))
        pair = create_buffers(config.buffers, timescale)
        buffers[core] = pair
        trace = CoreTrace(core)
        core_traces.append(trace)

        tracker_busy = 0
        handler_busy = 0
        pending_collision = False
        min_lat = filt.min_latency

        for i, lv, lt, va, kd in zip(sel.tolist(), level_idx.tolist(),
                                     lat.tolist(), addr.tolist(), kind.tolist()):
            if i < tracker_busy or i < handler_busy:
                out.collided += 1
                pending_collision = True
                continue
            tracker_busy = i + lt
            if not (kinds_ok[kd] and lt >= min_lat and levels_ok[lv]):
                out.filtered_out += 1
                continue
            if not armed:
                out.truncated_dropped += 1
                continue
            packet = encode_record(SampleRecord(
                virtual_address=va, timestamp=i + 1, op_kind=OpKind(kd),
                memory_level=MemLevel(lv), latency_cycles=lt, core_id=core))
            flags = AuxFlags.COLLISION if pending_collision else AuxFlags.NONE
            res = producer_append(pair, packet, flags)
            if res.record is None:
                out.truncated_dropped += 1
            else:
                out.delivered += 1
                pending_collision = False
            if res.watermark_crossed:
                recs, payloads = consumer_drain(pair)
                trace.records.extend(recs)
                trace.payloads.extend(payloads)
                out.interrupts += 1
                handler_busy = i + config.interrupt_cost_ops

        recs, payloads = consumer_drain(pair)  # end-of-session flush
        trace.records.extend(recs)
        trace.payloads.extend(payloads)

        out.baseline_time_ops = ops
        out.instrumented_time_ops = (ops + out.interrupts * config.interrupt_cost_ops
                                     + out.delivered * config.per_sample_cost_ops)
        per_core.append(out)

    def total(name):
        return sum(getattr(c, name) for c in per_core)

    outcome = SimOutcome(
        ground_truth_ops=total("ground_truth_ops"),
        ground_truth_by_kind={
            "load": sum(c.ground_truth_by_kind["load"] for c in per_core),
            "store": sum(c.ground_truth_by_kind["store"] for c in per_core),
        },
        selected=total("selected"),
        collided=total("collided"),
        filtered_out=total("filtered_out"),
        delivered=total("delivered"),
        truncated_dropped=total("truncated_dropped"),
        interrupts=total("interrupts"),
        baseline_time_ops=total("baseline_time_ops"),
        instrumented_time_ops=total("instrumented_time_ops"),
        per_core=per_core,
    )
    return SimResult(outcome, core_traces, buffers)
