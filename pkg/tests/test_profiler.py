"""Profiler session: config parsing, attr encoding, annotations, build_trace."""

import io

import pytest

from nmo.codec import MemLevel, OpKind, SampleRecord, encode_record
from nmo.profiler import (
    AttrSpec,
    ConfigError,
    Mode,
    PhaseTag,
    ProfileConfig,
    ProfileSession,
    RegionTag,
    build_trace,
    encode_perf_attr,
    mode_filter_kinds,
    parse_config,
    read_rss_file,
    write_trace_jsonl,
)
from nmo.tracefile import CoreTrace, write_trace
from nmo.transport import AuxRecord, TimescaleParams


def test_defaults_match_table():
    cfg = parse_config({})
    assert cfg == ProfileConfig(enable=False, name="nmo", mode=Mode.NONE,
                                period=0, track_rss=False,
                                ring_bufsize_mib=1, aux_bufsize_mib=1)


def test_parse_values():
    cfg = parse_config({"NMO_PERIOD": "3000", "NMO_MODE": "LoadStore",
                        "NMO_ENABLE": "on", "NMO_BUFSIZE": "2",
                        "NMO_AUXBUFSIZE": "4", "NMO_TRACK_RSS": "1",
                        "NMO_NAME": "run1"})
    assert cfg.period == 3000
    assert cfg.mode is Mode.LOADSTORE
    assert cfg.enable and cfg.track_rss
    assert cfg.ring_bufsize_mib == 2 and cfg.aux_bufsize_mib == 4
    assert cfg.name == "run1"


def test_parse_errors_name_the_variable():
    with pytest.raises(ConfigError, match="NMO_PERIOD"):
        parse_config({"NMO_PERIOD": "abc"})
    with pytest.raises(ConfigError, match="NMO_MODE"):
        parse_config({"NMO_MODE": "branches"})
    with pytest.raises(ConfigError, match="NMO_BUFSIZE"):
        parse_config({"NMO_BUFSIZE": "0"})
    with pytest.raises(ConfigError, match="NMO_ENABLE"):
        parse_config({"NMO_ENABLE": "maybe"})


def test_encode_perf_attr():
    base = ProfileConfig(mode=Mode.LOADSTORE, period=3000)
    assert encode_perf_attr(base) == AttrSpec(0x2C, 0x600000001, 3000)
    load = encode_perf_attr(ProfileConfig(mode=Mode.LOAD, period=10))
    assert load.config_bits & 0x2
    assert not load.config_bits & 0x4
    store = encode_perf_attr(ProfileConfig(mode=Mode.STORE, period=10))
    assert store.config_bits == 0x4
    with pytest.raises(ConfigError):
        encode_perf_attr(ProfileConfig(mode=Mode.NONE))


def test_mode_filter_kinds():
    assert mode_filter_kinds(Mode.LOAD) == frozenset({OpKind.LOAD})
    assert mode_filter_kinds(Mode.LOADSTORE) == frozenset(OpKind)
    assert mode_filter_kinds(Mode.NONE) == frozenset()


def test_tag_registration():
    s = ProfileSession()
    s.tag_addr("a", 0x1000, 0x2000)
    s.tag_addr("b", 0x2000, 0x3000)  # adjacent is fine (half-open)
    s.tag_addr("c", 0x8000, 0x9000)
    with pytest.raises(ValueError):
        s.tag_addr("d", 0x1800, 0x3000)
    with pytest.raises(ValueError):
        s.tag_addr("a", 0x10000, 0x20000)
    with pytest.raises(ValueError):
        s.tag_addr("e", 0x500, 0x100)


def test_phase_lifecycle():
    s = ProfileSession()
    with pytest.raises(ValueError):
        s.phase_stop()
    s.phase_start("init")
    with pytest.raises(ValueError):
        s.phase_start("kernel0")
    s.set_clock(100)
    s.phase_stop()
    s.phase_start("kernel0")
    s.set_clock(250)
    s.phase_stop()
    assert s.phases == [PhaseTag("init", 0, 100), PhaseTag("kernel0", 100, 250)]
    with pytest.raises(ValueError):
        s.set_clock(10)


def test_ingest_rss():
    s = ProfileSession()
    s.ingest_rss([])
    assert s.rss_series == []
    gib = 1 << 30
    staircase = [(0, 10 * gib), (1, 30 * gib), (2, int(52.3 * gib)),
                 (3, int(52.3 * gib))]
    s.ingest_rss(staircase)
    assert max(b for _, b in s.rss_series) == int(52.3 * gib)
    with pytest.raises(ValueError):
        s.ingest_rss([(1, 5)])


def test_read_rss_file(tmp_path):
    p = tmp_path / "rss.txt"
    p.write_text("# comment\n0 1024\n1000000 2048\n\n2000000 4096\n")
    assert read_rss_file(p) == [(0, 1024), (1000000, 2048), (2000000, 4096)]
    p.write_text("12 34 56\n")
    with pytest.raises(ValueError, match=":1"):
        read_rss_file(p)


def _packet(va, ts, kind=OpKind.LOAD, core=0, level=MemLevel.L1, lat=10):
    return encode_record(SampleRecord(va, ts, kind, level, lat, core))


def _write_raw(path, per_core):
    cores = []
    for core_id, packets in per_core.items():
        payload = b"".join(packets)
        cores.append(CoreTrace(core_id, [AuxRecord(0, len(payload))], [payload]))
    write_trace(path, 65536, cores)


def test_build_trace_empty(tmp_path):
    path = tmp_path / "empty.trace"
    write_trace(path, 65536, [])
    trace = build_trace(path, [], [], TimescaleParams())
    assert trace.samples == []
    assert trace.counters["decoded_samples"] == 0


def test_build_trace_merges_cores_sorted(tmp_path):
    path = tmp_path / "two.trace"
    _write_raw(path, {
        0: [_packet(0x1100, 10, core=0), _packet(0x1200, 30, core=0)],
        1: [_packet(0x1300, 20, core=1), _packet(0x1400, 40, core=1)],
    })
    trace = build_trace(path, [], [], TimescaleParams())
    ts = [(s.t_ns, s.core_id) for s in trace.samples]
    assert ts == sorted(ts)
    assert [s.t_ns for s in trace.samples] == [10, 20, 30, 40]


def test_build_trace_labels(tmp_path):
    path = tmp_path / "lab.trace"
    _write_raw(path, {0: [_packet(0x1fff, 5), _packet(0x2000, 50)]})
    tags = [RegionTag("a", 0x1000, 0x2000)]
    phases = [PhaseTag("triad", 0, 10)]
    trace = build_trace(path, tags, phases, TimescaleParams())
    first, second = trace.samples
    assert first.region == "a" and first.phase == "triad"
    assert second.region is None and second.phase is None  # half-open boundaries


def test_build_trace_applies_timescale(tmp_path):
    path = tmp_path / "ts.trace"
    _write_raw(path, {0: [_packet(0x1000, 8)]})
    params = TimescaleParams(time_zero=1000, time_shift=1, time_mult=3)
    trace = build_trace(path, [], [], params)
    assert trace.samples[0].t_ns == 1000 + (8 * 3) // 2


def test_build_trace_counts_skips(tmp_path):
    path = tmp_path / "skip.trace"
    bad = bytearray(_packet(0x1000, 1))
    bad[30] = 0
    _write_raw(path, {0: [_packet(0x1000, 1), bytes(bad), _packet(0, 2)]})
    trace = build_trace(path, [], [], TimescaleParams())
    assert trace.counters["decoded_samples"] == 1
    assert trace.counters["skipped_bad_address_marker"] == 1
    assert trace.counters["skipped_zero_address"] == 1


def test_jsonl_output_deterministic(tmp_path):
    path = tmp_path / "j.trace"
    _write_raw(path, {0: [_packet(0x1000, 1), _packet(0x2000, 2, OpKind.STORE)]})
    trace = build_trace(path, [RegionTag("a", 0x1000, 0x1800)], [], TimescaleParams())
    out1, out2 = io.StringIO(), io.StringIO()
    write_trace_jsonl(trace, out1)
    write_trace_jsonl(trace, out2)
    assert out1.getvalue() == out2.getvalue()
    lines = out1.getvalue().splitlines()
    assert len(lines) == 3  # header + 2 samples
    assert '"type": "header"' in lines[0]
    assert '"virtual_address": "0x1000"' in lines[1]
    assert '"region": "a"' in lines[1]
