"""Metrics and sensitivity sweeps over the simulated sampling pipeline.

Accuracy is the coverage of delivered samples against the counted
ground-truth memory operations:

    accuracy = 1 - |mem_counted - samples * period| / mem_counted

computed from exact integers with a single correctly-rounded division.
It exceeds the [0, 1] range when samples*period overshoots; the raw
value is reported and flagged downstream rather than clamped.

Sweeps substitute one knob (sampling period, aux pages, or thread
count) into a base simulation setup and repeat each point over several
seeds, reporting per-run rows plus mean/stddev summary rows.
"""

from __future__ import annotations

import enum
import json
import statistics
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .codec import OpKind
from .profiler import NormalizedTrace
from .sampler import (
    MemoryModel,
    SamplerConfig,
    WorkloadSpec,
    gen_workload,
    run_sampling,
)

UNTAGGED = "(untagged)"
DEFAULT_BYTES_PER_EVENT = 64  # one cache line per bus event


def compute_accuracy(mem_counted: int, samples: int, period: int) -> float:
    """Coverage of samples*period against the counted memory operations."""
    if mem_counted <= 0:
        raise ValueError("mem_counted must be positive")
    if period <= 0:
        raise ValueError("period must be positive")
    deviation = abs(mem_counted - samples * period)
    return (mem_counted - deviation) / mem_counted


def compute_overhead(t_instrumented: float, t_baseline: float) -> float:
    """Relative slowdown of the instrumented run; negative means noise."""
    if t_baseline <= 0:
        raise ValueError("baseline duration must be positive")
    return (t_instrumented - t_baseline) / t_baseline


@dataclass(frozen=True)
class BandwidthPoint:
    t_ns: int
    bytes_per_second: float


def bandwidth_series(event_counts: Iterable[tuple[int, int]], interval_ns: int,
                     bytes_per_event: int = DEFAULT_BYTES_PER_EVENT) -> list[BandwidthPoint]:
    """Per-interval bus-event counts to bytes/second."""
    if interval_ns <= 0:
        raise ValueError("interval_ns must be positive")
    seconds = interval_ns / 1e9
    return [BandwidthPoint(t, count * bytes_per_event / seconds)
            for t, count in event_counts]


def capacity_series(trace: NormalizedTrace,
                    total_capacity_bytes: int | None = None
                    ) -> tuple[list[tuple[int, int]], dict]:
    """RSS series plus its peak and utilization of the given capacity."""
    series = list(trace.rss_series)
    peak = max((b for _, b in series), default=0)
    summary = {"peak_bytes": peak}
    if total_capacity_bytes:
        summary["peak_utilization"] = peak / total_capacity_bytes
    return series, summary


@dataclass
class RegionStats:
    access_count: int = 0
    load_count: int = 0
    store_count: int = 0
    first_t: int | None = None
    last_t: int | None = None
    scatter: list[tuple[int, int]] = None

    def __post_init__(self):
        if self.scatter is None:
            self.scatter = []


def region_profile(trace: NormalizedTrace, phase: str | None = None
                   ) -> dict[str, RegionStats]:
    """Per-region access counts and (t, address) scatter.

    Restricted to one phase when given; samples outside every tag are
    collected under the reserved "(untagged)" entry.
    """
    if phase is not None:
        known = {p.name for p in trace.phases}
        if phase not in known:
            raise ValueError(f"unknown phase {phase!r}")
    profile: dict[str, RegionStats] = {t.name: RegionStats() for t in trace.tags}
    profile[UNTAGGED] = RegionStats()
    for s in trace.samples:
        if phase is not None and s.phase != phase:
            continue
        stats = profile[s.region if s.region is not None else UNTAGGED]
        stats.access_count += 1
        if s.op_kind is OpKind.LOAD:
            stats.load_count += 1
        else:
            stats.store_count += 1
        if stats.first_t is None:
            stats.first_t = s.t_ns
        stats.last_t = s.t_ns
        stats.scatter.append((s.t_ns, s.virtual_address))
    return profile


class Knob(enum.Enum):
    PERIOD = "period"
    AUX_PAGES = "aux_pages"
    THREADS = "threads"


@dataclass(frozen=True)
class SweepBase:
    """Full simulation setup a sweep perturbs one knob of."""

    workload: WorkloadSpec
    config: SamplerConfig
    model: MemoryModel


@dataclass(frozen=True)
class SensitivityRow:
    knob: Knob
    value: int
    seed: int
    accuracy: float
    overhead: float
    collisions: int
    delivered: int


@dataclass(frozen=True)
class SweepSummary:
    knob: Knob
    value: int
    mean_accuracy: float
    std_accuracy: float
    mean_overhead: float
    std_overhead: float
    mean_collisions: float
    std_collisions: float
    mean_delivered: float
    std_delivered: float


def _substitute(base: SweepBase, knob: Knob, value: int) -> SweepBase:
    if knob is Knob.PERIOD:
        return replace(base, config=replace(base.config, period=value))
    if knob is Knob.AUX_PAGES:
        buffers = replace(base.config.buffers, aux_pages=value)
        return replace(base, config=replace(base.config, buffers=buffers))
    return replace(base, workload=replace(base.workload, threads=value))


def run_sweep(knob: Knob, values: Sequence[int], base: SweepBase,
              seeds: Sequence[int]) -> tuple[list[SensitivityRow], list[SweepSummary]]:
    """One simulation per (value, seed); rows ordered by (value, seed)."""
    if not values:
        raise ValueError("sweep needs at least one knob value")
    if not seeds:
        raise ValueError("sweep needs at least one seed")
    rows: list[SensitivityRow] = []
    summaries: list[SweepSummary] = []
    for value in values:
        point = _substitute(base, knob, value)
        group: list[SensitivityRow] = []
        stream = gen_workload(point.workload)
        for seed in seeds:
            out = run_sampling(stream, point.config, point.model, rng_seed=seed).outcome
            group.append(SensitivityRow(
                knob=knob, value=value, seed=seed,
                accuracy=compute_accuracy(out.ground_truth_ops, out.delivered,
                                          point.config.period),
                overhead=compute_overhead(out.instrumented_time_ops,
                                          out.baseline_time_ops),
                collisions=out.collided,
                delivered=out.delivered))
        rows.extend(group)
        summaries.append(summarize_rows(group))
    return rows, summaries


def summarize_rows(group: Sequence[SensitivityRow]) -> SweepSummary:
    """Mean and sample standard deviation of one knob value's rows."""
    def agg(values):
        vals = list(values)
        mean = statistics.fmean(vals)
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        return mean, std

    ma, sa = agg(r.accuracy for r in group)
    mo, so = agg(r.overhead for r in group)
    mc, sc = agg(r.collisions for r in group)
    md, sd = agg(r.delivered for r in group)
    return SweepSummary(group[0].knob, group[0].value, ma, sa, mo, so, mc, sc, md, sd)


def linearity_check(rows: Sequence[SensitivityRow]) -> dict[str, float]:
    """Least-squares fit of delivered against 1/period, through the origin.

    Zero samples at infinite period is forced, hence no intercept.
    """
    period_rows = [r for r in rows if r.knob is Knob.PERIOD]
    periods = {r.value for r in period_rows}
    if len(periods) < 3:
        raise ValueError("need at least 3 distinct period values")
    x = [1.0 / r.value for r in period_rows]
    y = [float(r.delivered) for r in period_rows]
    slope = sum(xi * yi for xi, yi in zip(x, y)) / sum(xi * xi for xi in x)
    mean_y = sum(y) / len(y)
    ss_res = sum((yi - slope * xi) ** 2 for xi, yi in zip(x, y))
    ss_tot = sum((yi - mean_y) ** 2 for yi in y)
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return {"slope": slope, "r2": r2}


# -- file emission --------------------------------------------------------------

SWEEP_HEADER = "knob,value,seed,accuracy,overhead,collisions,delivered"


def write_sweep_csv(fh, rows: Sequence[SensitivityRow],
                    summaries: Sequence[SweepSummary]) -> None:
    fh.write(SWEEP_HEADER + "\n")
    for r in rows:
        fh.write(f"{r.knob.value},{r.value},{r.seed},{r.accuracy!r},"
                 f"{r.overhead!r},{r.collisions},{r.delivered}\n")
    for s in summaries:
        fh.write(f"{s.knob.value},{s.value},mean,{s.mean_accuracy!r},"
                 f"{s.mean_overhead!r},{s.mean_collisions!r},{s.mean_delivered!r}\n")
        fh.write(f"{s.knob.value},{s.value},stddev,{s.std_accuracy!r},"
                 f"{s.std_overhead!r},{s.std_collisions!r},{s.std_delivered!r}\n")


def write_capacity_csv(fh, series: Iterable[tuple[int, int]]) -> None:
    fh.write("t_ns,bytes\n")
    for t, b in series:
        fh.write(f"{t},{b}\n")


def write_bandwidth_csv(fh, points: Iterable[BandwidthPoint]) -> None:
    fh.write("t_ns,bytes_per_s\n")
    for p in points:
        fh.write(f"{p.t_ns},{p.bytes_per_second!r}\n")


def write_scatter_csv(fh, trace: NormalizedTrace) -> None:
    fh.write("t_ns,address,region,phase\n")
    for s in trace.samples:
        region = s.region if s.region is not None else ""
        phase = s.phase if s.phase is not None else ""
        fh.write(f"{s.t_ns},0x{s.virtual_address:x},{region},{phase}\n")


def regions_json(trace: NormalizedTrace, profile: dict[str, RegionStats]) -> str:
    ranges = {t.name: {"start": f"0x{t.start:x}", "end": f"0x{t.end:x}"}
              for t in trace.tags}
    payload = {
        "regions": {
            name: {
                "access_count": st.access_count,
                "load_count": st.load_count,
                "store_count": st.store_count,
                "first_t_ns": st.first_t,
                "last_t_ns": st.last_t,
                "range": ranges.get(name),
                "scatter": [[t, f"0x{a:x}"] for t, a in st.scatter],
            }
            for name, st in sorted(profile.items())
        },
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
