"""Session lifecycle: configuration, annotations, and trace normalization.

Configuration comes from environment variables (unset variables take the
defaults below); a session owns the annotation registries (named address
ranges and execution phases) and an ingested resident-set-size series;
build_trace turns a persisted raw trace plus annotations into a
normalized, time-sorted sample trace ready for analysis.

    NMO_ENABLE      enable profile collection      off
    NMO_NAME        base name of output files      "nmo"
    NMO_MODE        collection mode                none
    NMO_PERIOD      sampling period                0
    NMO_TRACK_RSS   capture working set size       off
    NMO_BUFSIZE     ring buffer size [MiB]         1
    NMO_AUXBUFSIZE  aux buffer size [MiB]          1

A period of 0 leaves sampling disabled until configured; mode none with
the session enabled still collects counters and RSS, just no samples.
"""

from __future__ import annotations

import enum
import json
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .codec import MemLevel, OpKind, SkipReason, decode_stream
from .tracefile import read_trace
from .transport import AuxFlags, TimescaleParams, convert_timestamp

SPE_PMU_TYPE = 0x2C

_TRUTHY = {"1", "on", "true", "yes"}
_FALSY = {"0", "off", "false", "no", ""}


class ConfigError(ValueError):
    """Bad configuration value; message names the offending variable."""


class Mode(enum.Enum):
    NONE = "none"
    LOAD = "load"
    STORE = "store"
    LOADSTORE = "loadstore"


@dataclass(frozen=True)
class ProfileConfig:
    enable: bool = False
    name: str = "nmo"
    mode: Mode = Mode.NONE
    period: int = 0
    track_rss: bool = False
    ring_bufsize_mib: int = 1
    aux_bufsize_mib: int = 1


def _parse_bool(env: Mapping[str, str], var: str, default: bool) -> bool:
    raw = env.get(var)
    if raw is None:
        return default
    low = raw.strip().lower()
    if low in _TRUTHY:
        return True
    if low in _FALSY:
        return False
    raise ConfigError(f"{var}: expected on/off, got {raw!r}")


def _parse_int(env: Mapping[str, str], var: str, default: int, minimum: int) -> int:
    raw = env.get(var)
    if raw is None:
        return default
    try:
        value = int(raw.strip(), 10)
    except ValueError:
        raise ConfigError(f"{var}: expected a decimal integer, got {raw!r}") from None
    if value < minimum:
        raise ConfigError(f"{var}: must be >= {minimum}, got {value}")
    return value


def parse_config(env: Mapping[str, str]) -> ProfileConfig:
    """Build a ProfileConfig from an environment mapping."""
    mode_raw = env.get("NMO_MODE")
    if mode_raw is None:
        mode = Mode.NONE
    else:
        try:
            mode = Mode(mode_raw.strip().lower())
        except ValueError:
            raise ConfigError(f"NMO_MODE: unknown mode {mode_raw!r}") from None
    return ProfileConfig(
        enable=_parse_bool(env, "NMO_ENABLE", False),
        name=env.get("NMO_NAME", "nmo"),
        mode=mode,
        period=_parse_int(env, "NMO_PERIOD", 0, minimum=0),
        track_rss=_parse_bool(env, "NMO_TRACK_RSS", False),
        ring_bufsize_mib=_parse_int(env, "NMO_BUFSIZE", 1, minimum=1),
        aux_bufsize_mib=_parse_int(env, "NMO_AUXBUFSIZE", 1, minimum=1),
    )


@dataclass(frozen=True)
class AttrSpec:
    """Event-open attribute encoding for the SPE PMU.

    config_bits selects the sampled operations: 2 for loads, 4 for
    stores, 0x600000001 for both.
    """

    pmu_type: int
    config_bits: int
    sample_period: int


_MODE_CONFIG_BITS = {Mode.LOAD: 0x2, Mode.STORE: 0x4, Mode.LOADSTORE: 0x600000001}


def encode_perf_attr(config: ProfileConfig) -> AttrSpec:
    """Encode the PMU attribute words for the configured mode."""
    if config.mode is Mode.NONE:
        raise ConfigError("NMO_MODE: sampling disabled (mode none)")
    return AttrSpec(pmu_type=SPE_PMU_TYPE,
                    config_bits=_MODE_CONFIG_BITS[config.mode],
                    sample_period=config.period)


def mode_filter_kinds(mode: Mode) -> frozenset[OpKind]:
    """Operation kinds a collection mode admits."""
    if mode is Mode.LOAD:
        return frozenset({OpKind.LOAD})
    if mode is Mode.STORE:
        return frozenset({OpKind.STORE})
    if mode is Mode.LOADSTORE:
        return frozenset(OpKind)
    return frozenset()


@dataclass(frozen=True)
class RegionTag:
    """Named half-open address range [start, end)."""

    name: str
    start: int
    end: int

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"tag {self.name!r}: start must be below end")


@dataclass(frozen=True)
class PhaseTag:
    """Named half-open time interval [t_start, t_end)."""

    name: str
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ValueError(f"phase {self.name!r}: empty or inverted interval")


class ProfileSession:
    """Owns annotation registries, the session clock, and RSS ingestion.

    The clock only moves forward; embedding code advances it explicitly
    (the simulator uses op-count nanoseconds).  At most one phase is
    open at a time; nesting is rejected.
    """

    def __init__(self, config: ProfileConfig = ProfileConfig()):
        self.config = config
        self.tags: list[RegionTag] = []
        self.phases: list[PhaseTag] = []
        self.rss_series: list[tuple[int, int]] = []
        self._open_phase: tuple[str, int] | None = None
        self._now_ns = 0

    @property
    def now_ns(self) -> int:
        return self._now_ns

    def set_clock(self, t_ns: int) -> None:
        if t_ns < self._now_ns:
            raise ValueError("session clock cannot move backwards")
        self._now_ns = t_ns

    def tag_addr(self, name: str, start: int, end: int) -> None:
        tag = RegionTag(name, start, end)
        for existing in self.tags:
            if existing.name == name:
                raise ValueError(f"tag {name!r} already registered")
            if tag.start < existing.end and existing.start < tag.end:
                raise ValueError(f"tag {name!r} overlaps {existing.name!r}")
        self.tags.append(tag)

    def phase_start(self, name: str) -> None:
        if self._open_phase is not None:
            raise ValueError(f"phase {self._open_phase[0]!r} is still open")
        self._open_phase = (name, self._now_ns)

    def phase_stop(self) -> None:
        if self._open_phase is None:
            raise ValueError("no open phase to stop")
        name, t_start = self._open_phase
        self.phases.append(PhaseTag(name, t_start, self._now_ns))
        self._open_phase = None

    def ingest_rss(self, series: Iterable[tuple[int, int]]) -> None:
        last = self.rss_series[-1][0] if self.rss_series else None
        for t_ns, nbytes in series:
            if last is not None and t_ns < last:
                raise ValueError(f"rss timestamps must be non-decreasing (at {t_ns})")
            self.rss_series.append((int(t_ns), int(nbytes)))
            last = t_ns


def read_rss_file(path) -> list[tuple[int, int]]:
    """Parse an RSS series file: one "t_ns bytes" pair per line."""
    series = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 't_ns bytes'")
            series.append((int(parts[0]), int(parts[1])))
    return series


@dataclass
class TraceSample:
    t_ns: int
    virtual_address: int
    op_kind: OpKind
    memory_level: MemLevel
    latency_cycles: int
    core_id: int
    region: str | None = None
    phase: str | None = None


@dataclass
class NormalizedTrace:
    """Time-sorted samples plus the annotations and counters behind them."""

    samples: list[TraceSample]
    rss_series: list[tuple[int, int]]
    counters: dict[str, int]
    tags: list[RegionTag] = field(default_factory=list)
    phases: list[PhaseTag] = field(default_factory=list)


class _RegionIndex:
    """Point lookup over non-overlapping half-open ranges."""

    def __init__(self, tags: Iterable[RegionTag]):
        self.tags = sorted(tags, key=lambda t: t.start)
        for a, b in zip(self.tags, self.tags[1:]):
            if a.end > b.start:
                raise ValueError(f"tags {a.name!r} and {b.name!r} overlap")
        self._starts = [t.start for t in self.tags]

    def lookup(self, address: int) -> str | None:
        i = bisect_right(self._starts, address) - 1
        if i >= 0 and address < self.tags[i].end:
            return self.tags[i].name
        return None


class _PhaseIndex:
    def __init__(self, phases: Iterable[PhaseTag]):
        self.phases = sorted(phases, key=lambda p: p.t_start)
        for a, b in zip(self.phases, self.phases[1:]):
            if a.t_end > b.t_start:
                raise ValueError(f"phases {a.name!r} and {b.name!r} overlap")
        self._starts = [p.t_start for p in self.phases]

    def lookup(self, t_ns: int) -> str | None:
        i = bisect_right(self._starts, t_ns) - 1
        if i >= 0 and t_ns < self.phases[i].t_end:
            return self.phases[i].name
        return None


def build_trace(trace_path, tags: Iterable[RegionTag], phases: Iterable[PhaseTag],
                params: TimescaleParams,
                rss_series: Iterable[tuple[int, int]] = ()) -> NormalizedTrace:
    """Decode a raw trace file into a normalized, labeled sample trace.

    Verifies the file digest, decodes every payload, converts raw ticks
    to nanoseconds, merges the per-core streams by time (core id breaks
    ties), and attaches region/phase labels.  Skip statistics and flag
    counts land in the counters mapping.
    """
    _, cores = read_trace(trace_path)
    region_index = _RegionIndex(tags)
    phase_index = _PhaseIndex(phases)

    counters: dict[str, int] = {f"skipped_{r.value}": 0 for r in SkipReason}
    counters["flag_truncated_records"] = 0
    counters["flag_collision_records"] = 0
    counters["decoded_samples"] = 0

    samples: list[TraceSample] = []
    for core in cores:
        for record in core.records:
            if record.flags & AuxFlags.TRUNCATED:
                counters["flag_truncated_records"] += 1
            if record.flags & AuxFlags.COLLISION:
                counters["flag_collision_records"] += 1
        records, stats = decode_stream(core.payload_bytes())
        for reason, count in stats.skipped.items():
            counters[f"skipped_{reason.value}"] += count
        counters["decoded_samples"] += stats.accepted
        for rec in records:
            t_ns = convert_timestamp(rec.timestamp, params)
            samples.append(TraceSample(
                t_ns=t_ns, virtual_address=rec.virtual_address,
                op_kind=rec.op_kind, memory_level=rec.memory_level,
                latency_cycles=rec.latency_cycles, core_id=rec.core_id,
                region=region_index.lookup(rec.virtual_address),
                phase=phase_index.lookup(t_ns)))

    samples.sort(key=lambda s: (s.t_ns, s.core_id))
    return NormalizedTrace(samples=samples, rss_series=list(rss_series),
                           counters=counters, tags=list(region_index.tags),
                           phases=list(phase_index.phases))


def sample_to_json(sample: TraceSample) -> str:
    return json.dumps({
        "t_ns": sample.t_ns,
        "virtual_address": f"0x{sample.virtual_address:x}",
        "op_kind": sample.op_kind.name.lower(),
        "memory_level": sample.memory_level.name,
        "latency_cycles": sample.latency_cycles,
        "core_id": sample.core_id,
        "region": sample.region,
        "phase": sample.phase,
    }, sort_keys=True)


def write_trace_jsonl(trace: NormalizedTrace, fh) -> None:
    """Persist a normalized trace as JSON lines: header object then samples."""
    header = {
        "type": "header",
        "version": 1,
        "sample_count": len(trace.samples),
        "rss_points": len(trace.rss_series),
        "counters": dict(sorted(trace.counters.items())),
    }
    fh.write(json.dumps(header, sort_keys=True) + "\n")
    for sample in trace.samples:
        fh.write(sample_to_json(sample) + "\n")
