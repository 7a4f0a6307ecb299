"""Analysis layer: metric math, region profiles, sweeps, linearity."""

import io
import math
import random
from fractions import Fraction

import pytest

from nmo.analysis import (
    UNTAGGED,
    Knob,
    SensitivityRow,
    SweepBase,
    bandwidth_series,
    capacity_series,
    compute_accuracy,
    compute_overhead,
    linearity_check,
    region_profile,
    run_sweep,
    write_sweep_csv,
)
from nmo.profiler import NormalizedTrace, PhaseTag, RegionTag, build_trace
from nmo.sampler import (
    Region,
    SamplerConfig,
    WorkloadKind,
    WorkloadSpec,
    collision_free_model,
    gen_workload,
    run_sampling,
)
from nmo.tracefile import write_trace
from nmo.transport import TimescaleParams


def test_accuracy_trivials():
    assert compute_accuracy(1_000_000, 100, 10_000) == 1.0
    assert compute_accuracy(1_000_000, 95, 10_000) == 0.95
    assert compute_accuracy(1_000_000, 0, 10_000) == 0.0


def test_accuracy_can_go_negative():
    # samples*period > 2*mem_counted: reported raw, not clamped.
    assert compute_accuracy(1000, 3000, 1) == -1.0


def test_accuracy_errors():
    with pytest.raises(ValueError):
        compute_accuracy(0, 1, 1)
    with pytest.raises(ValueError):
        compute_accuracy(10, 1, 0)


def test_accuracy_matches_rational_oracle_to_1ulp():
    rng = random.Random(0xACC)
    for _ in range(1000):
        mem = rng.randrange(1, 1 << 40)
        samples = rng.randrange(0, 1 << 20)
        period = rng.randrange(1, 1 << 20)
        got = compute_accuracy(mem, samples, period)
        exact = Fraction(mem - abs(mem - samples * period), mem)
        oracle = float(exact)
        assert abs(got - oracle) <= math.ulp(max(abs(got), abs(oracle), 1e-300))


def test_overhead():
    assert compute_overhead(100.0, 100.0) == 0.0
    assert compute_overhead(103.3, 100.0) == pytest.approx(0.033)
    assert compute_overhead(99.0, 100.0) == pytest.approx(-0.01)
    with pytest.raises(ValueError):
        compute_overhead(1.0, 0.0)


def test_bandwidth_series():
    assert bandwidth_series([(0, 0)], 1_000_000_000)[0].bytes_per_second == 0.0
    # 1,677,721,600 cache-line events per second is 100 GiB/s.
    point = bandwidth_series([(0, 1_677_721_600)], 1_000_000_000)[0]
    assert point.bytes_per_second == 100 * (1 << 30)
    full = bandwidth_series([(0, 500)], 1_000_000_000)[0]
    half = bandwidth_series([(0, 500)], 500_000_000)[0]
    assert half.bytes_per_second == 2 * full.bytes_per_second
    with pytest.raises(ValueError):
        bandwidth_series([], 0)


def _trace_with_rss(series):
    return NormalizedTrace(samples=[], rss_series=series, counters={})


def test_capacity_summary_paper_scale():
    gib = 1 << 30
    total = 256 * gib
    series, summary = capacity_series(
        _trace_with_rss([(0, 10 * gib), (1, int(52.3 * gib))]), total)
    assert summary["peak_utilization"] * 100 == pytest.approx(20.4, abs=0.05)
    _, summary = capacity_series(
        _trace_with_rss([(0, int(123.8 * gib))]), total)
    assert summary["peak_utilization"] * 100 == pytest.approx(48.4, abs=0.05)
    _, summary = capacity_series(_trace_with_rss([]))
    assert summary["peak_bytes"] == 0


def _triad_fixture(tmp_path, total_ops=60_000, threads=2):
    regions = (Region("a", 0x10000000, 1 << 16),
               Region("b", 0x20000000, 1 << 16),
               Region("c", 0x30000000, 1 << 16))
    spec = WorkloadSpec(WorkloadKind.STREAM_TRIAD, total_ops, threads, regions, seed=5)
    result = run_sampling(gen_workload(spec), SamplerConfig(period=40, jitter_max=0),
                          collision_free_model(), rng_seed=11)
    path = tmp_path / "triad.trace"
    write_trace(path, 65536, result.core_traces)
    tags = [RegionTag(r.name, r.base_address, r.end_address) for r in regions]
    phases = [PhaseTag("triad", 0, total_ops)]
    return build_trace(path, tags, phases, TimescaleParams()), spec


def test_region_profile_empty():
    trace = NormalizedTrace(samples=[], rss_series=[], counters={},
                            tags=[RegionTag("a", 0, 10)])
    profile = region_profile(trace)
    assert profile["a"].access_count == 0
    assert profile[UNTAGGED].access_count == 0


def test_region_profile_conservation_and_segments(tmp_path):
    trace, spec = _triad_fixture(tmp_path)
    profile = region_profile(trace)
    total = sum(st.access_count for st in profile.values())
    assert total == len(trace.samples)
    assert profile[UNTAGGED].access_count == 0
    for region in spec.regions:
        st = profile[region.name]
        assert st.access_count > 0
        for _, addr in st.scatter:
            assert region.base_address <= addr < region.end_address
    # Triad slices traverse ascending: most consecutive per-core steps go up.
    for core in range(spec.threads):
        addrs = [s.virtual_address for s in trace.samples
                 if s.core_id == core and s.region == "a"]
        ups = sum(1 for x, y in zip(addrs, addrs[1:]) if y > x)
        assert ups >= 0.8 * max(1, len(addrs) - 1)


def test_region_profile_phase_restriction(tmp_path):
    trace, _ = _triad_fixture(tmp_path, total_ops=30_000)
    full = region_profile(trace)
    phased = region_profile(trace, phase="triad")
    assert sum(s.access_count for s in phased.values()) == \
        sum(s.access_count for s in full.values())
    with pytest.raises(ValueError):
        region_profile(trace, phase="warmup")


def _sweep_base(total_ops=200_000):
    spec = WorkloadSpec(
        WorkloadKind.STREAM_TRIAD, total_ops, 1,
        (Region("a", 0x10000000, 1 << 18), Region("b", 0x20000000, 1 << 18),
         Region("c", 0x30000000, 1 << 18)), seed=3)
    return SweepBase(spec, SamplerConfig(period=1000), collision_free_model())


def test_run_sweep_shape_and_reproducibility():
    base = _sweep_base()
    rows1, summaries1 = run_sweep(Knob.PERIOD, [500, 1000], base, seeds=[1, 2, 3])
    rows2, summaries2 = run_sweep(Knob.PERIOD, [500, 1000], base, seeds=[1, 2, 3])
    assert rows1 == rows2
    assert summaries1 == summaries2
    assert len(rows1) == 6
    assert [r.value for r in rows1] == [500, 500, 500, 1000, 1000, 1000]
    out1, out2 = io.StringIO(), io.StringIO()
    write_sweep_csv(out1, rows1, summaries1)
    write_sweep_csv(out2, rows2, summaries2)
    assert out1.getvalue() == out2.getvalue()


def test_run_sweep_summary_matches_manual():
    base = _sweep_base()
    rows, summaries = run_sweep(Knob.PERIOD, [800], base, seeds=[1, 2, 3, 4])
    accs = [r.accuracy for r in rows]
    mean = sum(accs) / len(accs)
    var = sum((a - mean) ** 2 for a in accs) / (len(accs) - 1)
    assert summaries[0].mean_accuracy == pytest.approx(mean)
    assert summaries[0].std_accuracy == pytest.approx(math.sqrt(var))


def test_run_sweep_threads_knob():
    base = _sweep_base()
    rows, _ = run_sweep(Knob.THREADS, [1, 2, 4], base, seeds=[1])
    assert all(r.delivered > 0 for r in rows)


def test_run_sweep_validation():
    base = _sweep_base()
    with pytest.raises(ValueError):
        run_sweep(Knob.PERIOD, [], base, seeds=[1])
    with pytest.raises(ValueError):
        run_sweep(Knob.PERIOD, [1000], base, seeds=[])


def test_linearity_perfect_rows():
    n = 10_000_000
    rows = [SensitivityRow(Knob.PERIOD, p, 0, 1.0, 0.0, 0, n // p)
            for p in (1000, 2000, 4000, 5000)]
    fit = linearity_check(rows)
    assert fit["slope"] == pytest.approx(n, rel=1e-6)
    assert fit["r2"] == pytest.approx(1.0, abs=1e-9)


def test_linearity_needs_three_periods():
    rows = [SensitivityRow(Knob.PERIOD, 1000, s, 1.0, 0.0, 0, 100) for s in range(5)]
    with pytest.raises(ValueError):
        linearity_check(rows)
